"""Reverse-complement consistency: alignment, links, divergences and the loss.

A predictor ``f`` is compared with its aligned reverse-complement output
``f~(x) = Pi f(RC(x))``. For sequence-level heads ``Pi`` is the identity; for
bin-wise heads it reverses the bin axis and permutes channels by a fixed
self-inverse permutation. The training objective is::

    task_loss(y, f(x)) + lam * D(M * phi(f(x)), M * phi(f~(x)))

with link ``phi``, divergence ``D`` and an optional 0/1 channel mask ``M``
applied after the link. Gradients flow through both orientations.

Arrays are batched: ``(N, C)`` for sequence heads and ``(N, B, K)`` for bin
heads. Functions accept :class:`~rccr.autodiff.Tensor` or numpy arrays; numpy
in gives numpy out for :func:`align` and :func:`symmetrize`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from rccr import autodiff as ad
from rccr.model import ConfigError, HeadKind

PROB_TOL = 1e-9


# -- alignment -------------------------------------------------------------


@dataclass(frozen=True)
class AlignmentSpec:
    """How to express an RC-orientation output in the forward frame.

    ``perm`` must be self-inverse; ``mask`` is a 0/1 vector over the last
    output axis (classes or channels).
    """

    binwise: bool = False
    perm: tuple[int, ...] | None = None
    mask: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.perm is not None:
            perm = tuple(int(k) for k in self.perm)
            object.__setattr__(self, "perm", perm)
            if sorted(perm) != list(range(len(perm))):
                raise ConfigError(f"{list(perm)} is not a permutation", "symmetry.perm")
            if any(perm[perm[k]] != k for k in range(len(perm))):
                raise ConfigError(f"{list(perm)} is not self-inverse", "symmetry.perm")
            if not self.binwise and perm != tuple(range(len(perm))):
                raise ConfigError("sequence-level heads use the identity alignment", "symmetry.perm")
        if self.mask is not None:
            mask = tuple(float(m) for m in self.mask)
            object.__setattr__(self, "mask", mask)
            if any(m not in (0.0, 1.0) for m in mask):
                raise ConfigError("mask entries must be 0 or 1", "symmetry.mask")
            if self.perm is not None and len(mask) != len(self.perm):
                raise ConfigError("mask and permutation lengths differ", "symmetry.mask")

    @classmethod
    def for_head(cls, head: HeadKind, swap_strands: bool = False, mask=None) -> "AlignmentSpec":
        """Default alignment: identity for sequence heads; bin reversal, plus
        swapping adjacent channel pairs when ``swap_strands`` is set."""
        if not head.is_binwise:
            return cls(False, None, mask)
        k = head.outputs
        perm = list(range(k))
        if swap_strands:
            if k % 2:
                raise ConfigError("strand swapping needs an even channel count", "symmetry.swap_strands")
            for i in range(0, k, 2):
                perm[i], perm[i + 1] = i + 1, i
        return cls(True, tuple(perm), mask)

    def check(self, shape: tuple[int, ...]) -> None:
        k = shape[-1]
        if self.perm is not None and len(self.perm) != k:
            raise ValueError(f"align: permutation of length {len(self.perm)} vs {k} channels")
        if self.mask is not None and len(self.mask) != k:
            raise ValueError(f"align: mask of length {len(self.mask)} vs {k} outputs")
        if self.binwise and len(shape) < 2:
            raise ValueError(f"align: bin-wise output needs (..., B, K), got {shape}")


def align(output, spec: AlignmentSpec):
    """Apply ``Pi``: identity for sequence heads; for bin heads reverse the
    bin axis (second to last) and permute channels (last)."""
    if not spec.binwise:
        return output
    spec.check(tuple(output.shape))
    if isinstance(output, ad.Tensor):
        out = ad.reverse(output, axis=-2)
        if spec.perm is not None and spec.perm != tuple(range(len(spec.perm))):
            out = ad.permute(out, spec.perm, axis=-1)
        return out
    out = np.asarray(output)[..., ::-1, :]
    if spec.perm is not None:
        out = out[..., list(spec.perm)]
    return np.ascontiguousarray(out)


def symmetrize(f_x, f_rc_aligned):
    """Average a prediction with its aligned RC counterpart."""
    if tuple(f_x.shape) != tuple(f_rc_aligned.shape):
        raise ValueError(f"symmetrize: shapes {tuple(f_x.shape)} and {tuple(f_rc_aligned.shape)}")
    if isinstance(f_x, ad.Tensor) or isinstance(f_rc_aligned, ad.Tensor):
        return (ad.as_tensor(f_x) + f_rc_aligned) * 0.5
    return 0.5 * (np.asarray(f_x) + np.asarray(f_rc_aligned))


# -- links -----------------------------------------------------------------

LINK_KINDS = ("identity", "softmax", "log1p", "exp")


@dataclass(frozen=True)
class LinkSpec:
    kind: str = "identity"
    temperature: float = 2.0

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ConfigError(f"unknown link {self.kind!r}", "symmetry.link.kind")
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0", "symmetry.link.temperature")


def apply_link(output, link: LinkSpec) -> ad.Tensor:
    """Map raw outputs into the comparison space (softmax over the last axis)."""
    output = ad.as_tensor(output)
    if link.kind == "identity":
        return output
    if link.kind == "softmax":
        return ad.softmax(output, link.temperature, axis=-1)
    if link.kind == "log1p":
        return ad.log1p(output)
    return ad.exp(output)


# -- divergences -----------------------------------------------------------

DIVERGENCE_KINDS = ("skl", "js", "mse", "huber", "poisson")

# link/divergence combinations that make sense together
COMPATIBLE = {
    "skl": ("softmax",),
    "js": ("softmax",),
    "mse": ("identity", "log1p"),
    "huber": ("identity", "log1p"),
    "poisson": ("exp",),
}


@dataclass(frozen=True)
class DivergenceSpec:
    """``sigma`` scales ``mse`` as ``1/(2 sigma^2) ||u - v||^2``; ``delta`` is
    the Huber threshold."""

    kind: str = "skl"
    sigma: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in DIVERGENCE_KINDS:
            raise ConfigError(f"unknown divergence {self.kind!r}", "symmetry.divergence.kind")
        if not (self.sigma > 0 and self.delta > 0):
            raise ConfigError("sigma and delta must be > 0", "symmetry.divergence")


def _check_probabilities(u: ad.Tensor, name: str):
    if np.any(u.data < 0) or np.any(np.abs(u.data.sum(axis=-1) - 1.0) > PROB_TOL):
        raise ValueError(f"{name}: input rows must be probability vectors")


def _rowwise(u: ad.Tensor, v: ad.Tensor, spec: DivergenceSpec) -> ad.Tensor:
    """Divergence summed over the last axis."""
    kind = spec.kind
    if kind == "skl":
        # KL(p||q) + KL(q||p) = sum (p - q)(log p - log q)
        lu, lv = ad.log(u, ad.LOG_FLOOR), ad.log(v, ad.LOG_FLOOR)
        return ad.sum_((u - v) * (lu - lv), axis=-1)
    if kind == "js":
        m = (u + v) * 0.5
        lm = ad.log(m, ad.LOG_FLOOR)
        klu = ad.sum_(u * (ad.log(u, ad.LOG_FLOOR) - lm), axis=-1)
        klv = ad.sum_(v * (ad.log(v, ad.LOG_FLOOR) - lm), axis=-1)
        return (klu + klv) * 0.5
    if kind == "mse":
        return ad.sum_(ad.square(u - v), axis=-1) * (1.0 / (2.0 * spec.sigma**2))
    if kind == "huber":
        return ad.sum_(ad.huber(u - v, spec.delta), axis=-1)
    # symmetric Poisson KL: KL(Pois a||Pois b) + KL(Pois b||Pois a) = (a - b)(log a - log b)
    if np.any(u.data <= 0) or np.any(v.data <= 0):
        raise ValueError("poisson: rates must be positive")
    return ad.sum_((u - v) * (ad.log(u) - ad.log(v)), axis=-1)


def divergence_per_example(u, v, spec: DivergenceSpec, binwise: bool = False, check: bool = True):
    """Per-example divergence: summed over the last axis, then averaged over
    bins when ``binwise``. Returns a tensor with the remaining leading axes."""
    u, v = ad.as_tensor(u), ad.as_tensor(v)
    if u.shape != v.shape:
        raise ValueError(f"divergence: shapes {u.shape} and {v.shape} differ")
    if check and spec.kind in ("skl", "js"):
        _check_probabilities(u, spec.kind)
        _check_probabilities(v, spec.kind)
    d = _rowwise(u, v, spec)
    if binwise:
        d = ad.mean(d, axis=-1)
    return d


def divergence(u, v, spec: DivergenceSpec, binwise: bool = False, check: bool = True) -> ad.Tensor:
    """Mean divergence over all leading (example) axes; a scalar tensor."""
    d = divergence_per_example(u, v, spec, binwise, check)
    return ad.mean(d) if d.ndim else d


# -- objective -------------------------------------------------------------


def consistency_penalty(
    out_fwd,
    out_rc_aligned,
    link: LinkSpec,
    div: DivergenceSpec,
    mask=None,
    binwise: bool = False,
) -> ad.Tensor:
    """``D(M * phi(f(x)), M * phi(f~(x)))`` averaged over the batch."""
    u = apply_link(out_fwd, link)
    v = apply_link(out_rc_aligned, link)
    if div.kind in ("skl", "js"):
        _check_probabilities(u, div.kind)
        _check_probabilities(v, div.kind)
    if mask is not None:
        m = np.asarray(mask, dtype=float)
        if m.shape != (u.shape[-1],):
            raise ValueError(f"mask of shape {m.shape} vs {u.shape[-1]} outputs")
        u, v = u * m, v * m
    return divergence(u, v, div, binwise=binwise, check=False)


def rccr_loss(
    task_loss,
    out_fwd,
    out_rc_aligned,
    link: LinkSpec,
    div: DivergenceSpec,
    lam: float,
    mask=None,
    binwise: bool = False,
) -> ad.Tensor:
    """Task loss plus ``lam`` times the consistency penalty."""
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}", "train.lam")
    pen = consistency_penalty(out_fwd, out_rc_aligned, link, div, mask, binwise)
    return ad.as_tensor(task_loss) + pen * float(lam)


# -- task losses -----------------------------------------------------------

TASK_LOSSES = ("cross-entropy", "mse", "huber", "poisson")


def task_loss(kind: str, out, target, delta: float = 1.0) -> ad.Tensor:
    """Supervised loss averaged over every example (and bin).

    ``cross-entropy`` takes integer class targets and logits (softmax at
    ``T=1``); ``poisson`` treats ``out`` as log-rates.
    """
    if kind not in TASK_LOSSES:
        raise ConfigError(f"unknown task loss {kind!r}", "symmetry.task_loss")
    out = ad.as_tensor(out)
    if kind == "cross-entropy":
        y = np.asarray(target, dtype=np.int64)
        if y.shape != out.shape[:-1]:
            raise ValueError(f"cross-entropy: targets {y.shape} vs logits {out.shape}")
        onehot = np.zeros(out.shape)
        np.put_along_axis(onehot, y[..., None], 1.0, axis=-1)
        return -ad.mean(ad.sum_(ad.log_softmax(out) * onehot, axis=-1))
    y = np.asarray(target, dtype=float).reshape(out.shape)
    if kind == "mse":
        return ad.mean(ad.square(out - y))
    if kind == "huber":
        return ad.mean(ad.huber(out - y, delta))
    return ad.mean(ad.exp(out) - out * y)


@dataclass(frozen=True)
class SymmetrySpec:
    """Everything needed to build the objective for one head."""

    alignment: AlignmentSpec = field(default_factory=AlignmentSpec)
    link: LinkSpec = field(default_factory=lambda: LinkSpec("softmax", 2.0))
    divergence: DivergenceSpec = field(default_factory=DivergenceSpec)
    task_loss: str = "cross-entropy"
    target_transform: str = "none"

    def __post_init__(self):
        if self.task_loss not in TASK_LOSSES:
            raise ConfigError(f"unknown task loss {self.task_loss!r}", "symmetry.task_loss")
        if self.target_transform not in ("none", "log1p"):
            raise ConfigError(f"unknown target transform {self.target_transform!r}", "symmetry.target_transform")
        if self.link.kind not in COMPATIBLE[self.divergence.kind]:
            raise ConfigError(
                f"link {self.link.kind!r} does not pair with divergence {self.divergence.kind!r}",
                "symmetry.link.kind",
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SymmetrySpec":
        d = dict(d)
        if "alignment" in d:
            d["alignment"] = AlignmentSpec(**d["alignment"])
        if "link" in d:
            d["link"] = LinkSpec(**d["link"])
        if "divergence" in d:
            d["divergence"] = DivergenceSpec(**d["divergence"])
        return cls(**d)


def default_symmetry(head: HeadKind, swap_strands: bool = False) -> SymmetrySpec:
    """Task-appropriate defaults: SKL at T=2 for classification, scaled MSE
    for regression, scaled MSE on log1p-stabilised profiles."""
    alignment = AlignmentSpec.for_head(head, swap_strands)
    if head.is_classification:
        return SymmetrySpec(alignment, LinkSpec("softmax", 2.0), DivergenceSpec("skl"), "cross-entropy")
    if head.is_binwise:
        return SymmetrySpec(alignment, LinkSpec("identity"), DivergenceSpec("mse"), "mse", "log1p")
    return SymmetrySpec(alignment, LinkSpec("identity"), DivergenceSpec("mse"), "mse")


def to_eval_space(raw: np.ndarray, spec: SymmetrySpec) -> np.ndarray:
    """Outputs in the space metrics are reported in: class probabilities
    (T=1), Poisson rates, or the raw regression values."""
    if spec.task_loss == "cross-entropy":
        z = raw - raw.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    if spec.task_loss == "poisson":
        return np.exp(raw)
    return raw


# -- local quadratic behaviour of SKL --------------------------------------


def fisher_quadratic_check(p, delta, temperature: float = 2.0) -> float:
    """Ratio of ``SKL(p(z), p(z + delta))`` to its Fisher quadratic form.

    ``p`` is a probability vector, realised by logits ``z = T log p``. The
    quadratic is ``delta_c^T (Diag(p) - p p^T) delta_c / T^2`` with
    ``delta_c`` the zero-mean part of ``delta``. The ratio tends to 1 as
    ``||delta|| -> 0``. A pure shift (``delta_c = 0``) returns 1.
    Degenerate ``p`` (a coordinate equal to 1) warns and returns nan.
    """
    p = np.asarray(p, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if p.max() >= 1.0 - 1e-12 or p.min() <= 0.0:
        warnings.warn("fisher_quadratic_check: degenerate p, check skipped", RuntimeWarning)
        return math.nan
    if np.ptp(delta) == 0.0:
        return 1.0
    z = temperature * np.log(p)
    q = ad.softmax(z + delta, temperature).data
    p0 = ad.softmax(z, temperature).data
    skl = float(np.sum((p0 - q) * (np.log(p0) - np.log(q))))
    dc = delta - delta.mean()
    quad = float(dc @ (np.diag(p0) - np.outer(p0, p0)) @ dc) / temperature**2
    return skl / quad
