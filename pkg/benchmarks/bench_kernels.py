"""Compare the compiled and numpy kernel backends.

Times each windowed kernel on a default-sized batch and one full training
step of the default backbone, once per available backend::

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from rccr import autodiff as ad
from rccr import kernels
from rccr.model import BackboneConfig, HeadKind, build_predictor
from rccr.symmetry import default_symmetry, task_loss

N, L, C, K = 64, 200, 32, 9


def kernel_cases(impl, rng):
    x = rng.normal(size=(N, L, C))
    cols = impl.im2col(x, K, 1, K // 2)
    pooled, idx = impl.maxpool_forward(x, 4)
    return {
        "im2col": lambda: impl.im2col(x, K, 1, K // 2),
        "col2im": lambda: impl.col2im(cols, L, 1, K // 2),
        "maxpool_forward": lambda: impl.maxpool_forward(x, 4),
        "maxpool_backward": lambda: impl.maxpool_backward(pooled, idx, L),
    }


def training_step_case(rng):
    head = HeadKind.sequence_classification(2)
    model = build_predictor(BackboneConfig(), head, L)
    sym = default_symmetry(head)
    x = np.eye(4)[rng.integers(0, 4, size=(N, L))]
    y = rng.integers(0, 2, N)
    params = list(model.params.values())

    def step():
        loss = task_loss(sym.task_loss, model(x), y)
        ad.grad(loss, params)

    return step


def use_backend(impl):
    for name in ("im2col", "col2im", "maxpool_forward", "maxpool_backward"):
        setattr(kernels, name, getattr(impl, name))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = kernels.available_backends()
    results = {}
    for name, impl in sorted(backends.items()):
        rng = np.random.default_rng(0)
        cases = kernel_cases(impl, rng)
        use_backend(impl)
        cases["train_step"] = training_step_case(rng)
        for case, fn in cases.items():
            fn()
            results[(case, name)] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
    names = sorted(backends)
    print(f"{'case':<18}" + "".join(f"{n + ' ms':>14}" for n in names) + (f"{'speedup':>10}" if len(names) > 1 else ""))
    for case in dict.fromkeys(c for c, _ in results):
        row = f"{case:<18}" + "".join(f"{results[(case, n)]:>14.3f}" for n in names)
        if len(names) > 1:
            row += f"{results[(case, 'python')] / results[(case, 'cython')]:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
