"""Small 1-D convolutional predictor over one-hot DNA with four head kinds.

Backbone: ``conv -> activation -> pool`` blocks. Sequence heads mean-pool
over length then apply ``affine -> activation -> affine``. Bin heads
adaptive-mean-pool to exactly ``B`` positions and apply the same two affine
layers per bin. Nothing here is orientation-aware.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from rccr import autodiff as ad


class ConfigError(ValueError):
    """Inconsistent model, task or training configuration.

    ``field`` names the offending configuration key when known.
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


@dataclass(frozen=True)
class ConvLayer:
    channels: int
    kernel: int
    stride: int = 1
    pool: int = 1


@dataclass(frozen=True)
class BackboneConfig:
    layers: tuple[ConvLayer, ...] = (
        ConvLayer(32, 9, 1, 4),
        ConvLayer(32, 7, 1, 4),
    )
    hidden: int = 32
    activation: str = "relu"
    pool: str = "max"
    seed: int = 2025

    def __post_init__(self):
        layers = tuple(ConvLayer(**l) if isinstance(l, dict) else l for l in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ConfigError("at least one conv layer is required", "model.layers")
        for i, l in enumerate(layers):
            if l.kernel % 2 != 1:
                raise ConfigError(f"kernel width {l.kernel} must be odd", f"model.layers[{i}].kernel")
            if min(l.channels, l.stride, l.pool) < 1:
                raise ConfigError("channels, stride and pool must be >= 1", f"model.layers[{i}]")
        if self.activation not in ad.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", "model.activation")
        if self.pool not in ("max", "mean"):
            raise ConfigError(f"unknown pool {self.pool!r}", "model.pool")
        if self.hidden < 1:
            raise ConfigError("hidden width must be >= 1", "model.hidden")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        if "layers" in d:
            d["layers"] = tuple(ConvLayer(**l) for l in d["layers"])
        return cls(**d)


HEAD_KINDS = ("sequence-classification", "sequence-regression", "bin-regression", "bin-classification")


@dataclass(frozen=True)
class HeadKind:
    """Output head. ``outputs`` is C (classes), d (dims) or K (channels)."""

    kind: str
    outputs: int
    bins: int | None = None
    resolution: int | None = None

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ConfigError(f"unknown head kind {self.kind!r}", "head.kind")
        if self.is_classification and self.outputs < 2:
            raise ConfigError("classification heads need C >= 2", "head.outputs")
        if self.outputs < 1:
            raise ConfigError("outputs must be >= 1", "head.outputs")
        if self.is_binwise and (not self.bins or not self.resolution):
            raise ConfigError("bin heads need bins and resolution", "head.bins")

    @classmethod
    def sequence_classification(cls, n_classes: int = 2):
        return cls("sequence-classification", n_classes)

    @classmethod
    def sequence_regression(cls, dims: int = 1):
        return cls("sequence-regression", dims)

    @classmethod
    def bin_regression(cls, bins: int, channels: int, resolution: int):
        return cls("bin-regression", channels, bins, resolution)

    @classmethod
    def bin_classification(cls, bins: int, n_classes: int, resolution: int):
        return cls("bin-classification", n_classes, bins, resolution)

    @property
    def is_classification(self) -> bool:
        return self.kind.endswith("classification")

    @property
    def is_binwise(self) -> bool:
        return self.kind.startswith("bin")

    @property
    def output_shape(self) -> tuple[int, ...]:
        if self.is_binwise:
            return (self.bins, self.outputs)
        return (self.outputs,)

    def to_dict(self) -> dict:
        return asdict(self)


def backbone_length(cfg: BackboneConfig, input_length: int) -> int:
    """Length of the backbone feature map for a given input length."""
    length = input_length
    for layer in cfg.layers:
        pad = (layer.kernel - 1) // 2
        length = (length + 2 * pad - layer.kernel) // layer.stride + 1
        length //= layer.pool
    return length


@dataclass
class Predictor:
    """Backbone plus head; all parameters are requires-grad tensors."""

    config: BackboneConfig
    head: HeadKind
    input_length: int
    params: dict[str, ad.Tensor] = field(default_factory=dict)

    def parameters(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def forward(self, x) -> ad.Tensor:
        """Raw head outputs for a one-hot batch ``(N, L, 4)``.

        Logits for classification heads, unconstrained reals otherwise.
        """
        x = ad.as_tensor(x)
        if x.ndim != 3 or x.shape[1:] != (self.input_length, 4):
            raise ad.DimensionError(
                f"forward: expected (N, {self.input_length}, 4), got {x.shape}"
            )
        act = ad.ACTIVATIONS[self.config.activation]
        pool = ad.maxpool1d if self.config.pool == "max" else ad.meanpool1d
        h = x
        for i, layer in enumerate(self.config.layers):
            h = ad.conv1d(h, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"], stride=layer.stride)
            h = act(h)
            if layer.pool > 1:
                h = pool(h, layer.pool)
        if self.head.is_binwise:
            h = ad.adaptive_meanpool1d(h, self.head.bins)
        else:
            h = ad.mean(h, axis=1)
        h = act(ad.affine(h, self.params["hidden.w"], self.params["hidden.b"]))
        return ad.affine(h, self.params["out.w"], self.params["out.b"])

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        with ad.no_grad():
            return self.forward(x).data

    def copy(self) -> "Predictor":
        params = {k: ad.Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return Predictor(self.config, self.head, self.input_length, params)


def build_predictor(cfg: BackboneConfig, head: HeadKind, input_length: int) -> Predictor:
    """Initialise a predictor with seeded uniform fan-in weights."""
    if input_length < 1:
        raise ConfigError("input length must be positive", "task.length")
    if head.is_binwise:
        expected = math.ceil(input_length / head.resolution)
        if head.bins != expected:
            raise ConfigError(
                f"B={head.bins} but ceil(L/r)=ceil({input_length}/{head.resolution})={expected}",
                "head.bins",
            )
    feat_len = backbone_length(cfg, input_length)
    min_len = head.bins if head.is_binwise else 1
    if feat_len < min_len:
        raise ConfigError(
            f"backbone reduces length {input_length} to {feat_len}, need >= {min_len}",
            "model.layers",
        )
    rng = np.random.default_rng(cfg.seed)

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return ad.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    params = {}
    cin = 4
    for i, layer in enumerate(cfg.layers):
        fan_in = layer.kernel * cin
        params[f"conv{i}.w"] = uniform((layer.kernel, cin, layer.channels), fan_in)
        params[f"conv{i}.b"] = uniform((layer.channels,), fan_in)
        cin = layer.channels
    params["hidden.w"] = uniform((cin, cfg.hidden), cin)
    params["hidden.b"] = uniform((cfg.hidden,), cin)
    params["out.w"] = uniform((cfg.hidden, head.outputs), cfg.hidden)
    params["out.b"] = uniform((head.outputs,), cfg.hidden)
    return Predictor(cfg, head, input_length, params)


# -- checkpoints -----------------------------------------------------------

CHECKPOINT_FORMAT = "rccr-checkpoint/1"


def save_checkpoint(model: Predictor, path, meta: dict | None = None) -> None:
    """Write a one-line JSON header followed by raw little-endian float64 values."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "backbone": model.config.to_dict(),
        "head": model.head.to_dict(),
        "input_length": model.input_length,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(blob + b"\n")
        for v in model.params.values():
            fh.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Predictor, dict]:
    """Inverse of :func:`save_checkpoint`; returns the predictor and its meta dict."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        body = fh.read()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an rccr checkpoint")
    values = np.frombuffer(body, dtype="<f8")
    expected = sum(int(np.prod(p["shape"])) for p in header["params"])
    if values.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {values.size}")
    params, offset = {}, 0
    for p in header["params"]:
        n = int(np.prod(p["shape"]))
        arr = values[offset : offset + n].astype(np.float64).reshape(p["shape"])
        params[p["name"]] = ad.Tensor(arr, requires_grad=True)
        offset += n
    cfg = BackboneConfig.from_dict(header["backbone"])
    head = HeadKind(**header["head"])
    return Predictor(cfg, head, header["input_length"], params), header["meta"]
