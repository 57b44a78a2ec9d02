import sys

from rccr.cli import main

sys.exit(main())
