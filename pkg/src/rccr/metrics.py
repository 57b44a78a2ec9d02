"""RC-robustness metrics and standard task metrics.

RC metrics compare forward predictions ``y(x)`` with aligned RC predictions
``y~(x) = Pi y(RC(x))``:

* ``sfr``  -- fraction of examples whose argmax class differs (ties break to
  the lowest index on both sides, so exact ties never count as flips).
* ``rc_corr`` -- mean per-example Pearson correlation of the flattened
  outputs; zero-variance examples contribute 0 and are tallied.
* ``rc_corr_pooled`` -- one Pearson correlation over all examples' flattened
  outputs; meaningful for scalar heads where the per-example version is not.
* ``rc_mse`` -- mean squared forward-vs-aligned-RC difference.

Report keys (stable): ``n``, ``accuracy``, ``mcc``, ``auroc``, ``auprc``,
``ece``, ``rmse``, ``r2``, ``pearson``, ``spearman``, ``sfr``, ``rc_corr``,
``rc_corr_pooled``, ``rc_corr_degenerate``, ``rc_mse``, ``divergence`` and
``note.<metric>`` annotations. Undefined values serialise as ``null``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from rccr.model import HeadKind

ECE_BINS = 15
EXACT_NOTE = "exact-by-construction"


@dataclass
class EvalBatch:
    """Forward and aligned-RC predictions (in evaluation space) plus labels."""

    fwd: np.ndarray
    rc: np.ndarray
    labels: np.ndarray | None
    head: HeadKind
    symmetrized: bool = False

    def __post_init__(self):
        self.fwd = np.asarray(self.fwd, dtype=float)
        self.rc = np.asarray(self.rc, dtype=float)
        if self.fwd.shape != self.rc.shape:
            raise ValueError(f"EvalBatch: fwd {self.fwd.shape} vs rc {self.rc.shape}")
        if len(self.fwd) < 1:
            raise ValueError("EvalBatch: need at least one example")
        if self.labels is not None and len(self.labels) != len(self.fwd):
            raise ValueError("EvalBatch: labels and predictions differ in length")


@dataclass
class MetricReport:
    values: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def __contains__(self, key):
        return key in self.values

    def to_dict(self) -> dict:
        flat = {k: _clean(v) for k, v in self.values.items()}
        flat.update({f"note.{k}": v for k, v in self.notes.items()})
        return dict(sorted(flat.items()))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _clean(v):
    if v is None:
        return None
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return v if np.isfinite(v) else None


# -- RC metrics ------------------------------------------------------------


def _unpack(fwd, rc, need_classification: bool | None, name: str):
    if isinstance(fwd, EvalBatch):
        if need_classification is not None and fwd.head.is_classification != need_classification:
            kind = "classification" if need_classification else "regression"
            raise ValueError(f"{name} needs a {kind} head, got {fwd.head.kind}")
        return fwd.fwd, fwd.rc
    return fwd, rc


def sfr(fwd, rc=None) -> float:
    """Symmetry flip rate over every (example, bin) decision.

    Accepts an :class:`EvalBatch` (classification heads only) or two arrays.
    """
    fwd, rc = _unpack(fwd, rc, True, "sfr")
    fwd, rc = np.asarray(fwd), np.asarray(rc)
    return float(np.mean(fwd.argmax(axis=-1) != rc.argmax(axis=-1)))


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    if den == 0.0:
        return None
    return float(np.clip((a * b).sum() / den, -1.0, 1.0))


def rc_corr(fwd, rc=None) -> tuple[float, int]:
    """Mean per-example Pearson correlation and the count of degenerate examples."""
    fwd, rc = _unpack(fwd, rc, None, "rc_corr")
    fwd, rc = np.asarray(fwd, float), np.asarray(rc, float)
    n = len(fwd)
    a, b = fwd.reshape(n, -1), rc.reshape(n, -1)
    total, degenerate = 0.0, 0
    for i in range(n):
        r = _pearson(a[i], b[i])
        if r is None:
            degenerate += 1
        else:
            total += r
    return total / n, degenerate


def rc_corr_pooled(fwd, rc) -> float | None:
    return _pearson(np.asarray(fwd, float).ravel(), np.asarray(rc, float).ravel())


def rc_mse(fwd, rc=None) -> float:
    """Mean squared difference; an :class:`EvalBatch` must have a regression head."""
    fwd, rc = _unpack(fwd, rc, False, "rc_mse")
    fwd, rc = np.asarray(fwd, float), np.asarray(rc, float)
    return float(np.mean((fwd - rc) ** 2))


# -- classification --------------------------------------------------------


def confusion_matrix(y, pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y, int), np.asarray(pred, int)), 1)
    return cm


def mcc(y, pred, n_classes: int | None = None) -> float | None:
    """Matthews correlation from the full confusion matrix (multi-class form).

    None when the labels contain a single class.
    """
    y, pred = np.asarray(y, int), np.asarray(pred, int)
    if len(np.unique(y)) < 2:
        return None
    k = n_classes or int(max(y.max(), pred.max()) + 1)
    cm = confusion_matrix(y, pred, k).astype(float)
    s = cm.sum()
    c = np.trace(cm)
    t = cm.sum(axis=1)
    p = cm.sum(axis=0)
    den = np.sqrt((s * s - p @ p) * (s * s - t @ t))
    if den == 0.0:
        return 0.0
    return float((c * s - t @ p) / den)


def accuracy(y, pred) -> float:
    return float(np.mean(np.asarray(y) == np.asarray(pred)))


def auroc_binary(y, score) -> float | None:
    """Mann-Whitney normalised U with average ranks for ties."""
    y = np.asarray(y).astype(bool)
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        return None
    ranks = rankdata(score)
    return float((ranks[y].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def auprc_binary(y, score) -> float | None:
    """Step-wise average precision with tied scores grouped into one threshold."""
    y = np.asarray(y).astype(bool)
    npos = int(y.sum())
    if npos == 0:
        return None
    score = np.asarray(score, float)
    order = np.argsort(-score, kind="mergesort")
    s, t = score[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(t)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / npos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def _macro(fn, y, probs):
    y = np.asarray(y, int)
    probs = np.asarray(probs, float)
    if probs.shape[1] == 2:
        return fn(y == 1, probs[:, 1])
    vals = [fn(y == k, probs[:, k]) for k in range(probs.shape[1])]
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def auroc(y, probs) -> float | None:
    """Binary AUROC on the positive-class probability, or one-vs-rest macro."""
    if len(np.unique(y)) < 2:
        return None
    return _macro(auroc_binary, y, probs)


def auprc(y, probs) -> float | None:
    return _macro(auprc_binary, y, probs)


def ece(y, probs, n_bins: int = ECE_BINS) -> float:
    """Expected calibration error over equal-width bins of max probability."""
    probs = np.asarray(probs, float)
    conf = probs.max(axis=-1)
    correct = probs.argmax(axis=-1) == np.asarray(y)
    idx = np.minimum((conf * n_bins).astype(int), n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        sel = idx == b
        if sel.any():
            total += sel.mean() * abs(correct[sel].mean() - conf[sel].mean())
    return float(total)


# -- regression ------------------------------------------------------------


def rmse(y, pred) -> float:
    return float(np.sqrt(np.mean((np.asarray(y, float) - np.asarray(pred, float)) ** 2)))


def r2(y, pred) -> float | None:
    y, pred = np.asarray(y, float).ravel(), np.asarray(pred, float).ravel()
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0.0:
        return None
    return float(1.0 - np.sum((y - pred) ** 2) / ss_tot)


def pearson(y, pred) -> float | None:
    return _pearson(np.asarray(y, float).ravel(), np.asarray(pred, float).ravel())


def spearman(y, pred) -> float | None:
    """Pearson correlation of average ranks."""
    return _pearson(rankdata(np.ravel(y)), rankdata(np.ravel(pred)))


# -- reports ---------------------------------------------------------------


def rc_metrics(batch: EvalBatch) -> MetricReport:
    rep = MetricReport()
    if batch.head.is_classification:
        rep.values["sfr"] = sfr(batch.fwd, batch.rc)
    else:
        rep.values["rc_mse"] = rc_mse(batch.fwd, batch.rc)
    corr, degenerate = rc_corr(batch.fwd, batch.rc)
    rep.values["rc_corr"] = corr
    rep.values["rc_corr_degenerate"] = degenerate
    rep.values["rc_corr_pooled"] = rc_corr_pooled(batch.fwd, batch.rc)
    if batch.symmetrized:
        for key in ("sfr", "rc_corr", "rc_mse"):
            if key in rep.values:
                rep.notes[key] = EXACT_NOTE
    return rep


def task_metrics(batch: EvalBatch) -> MetricReport:
    """Task metrics on the forward predictions."""
    rep = MetricReport()
    rep.values["n"] = len(batch.fwd)
    if batch.labels is None:
        return rep
    if batch.head.is_classification:
        c = batch.fwd.shape[-1]
        probs = batch.fwd.reshape(-1, c)
        y = np.asarray(batch.labels, int).ravel()
        pred = probs.argmax(axis=-1)
        rep.values["accuracy"] = accuracy(y, pred)
        rep.values["mcc"] = mcc(y, pred, c)
        rep.values["auroc"] = auroc(y, probs)
        rep.values["auprc"] = auprc(y, probs)
        rep.values["ece"] = ece(y, probs)
        for k in range(c):
            rep.values[f"count.class{k}"] = int(np.sum(y == k))
    else:
        y = np.asarray(batch.labels, float).reshape(batch.fwd.shape)
        rep.values["rmse"] = rmse(y, batch.fwd)
        rep.values["r2"] = r2(y, batch.fwd)
        rep.values["pearson"] = pearson(y, batch.fwd)
        rep.values["spearman"] = spearman(y, batch.fwd)
    return rep


def full_report(batch: EvalBatch) -> MetricReport:
    rep = task_metrics(batch)
    rc = rc_metrics(batch)
    rep.values.update(rc.values)
    rep.notes.update(rc.notes)
    return rep
