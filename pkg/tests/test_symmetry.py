import math
import warnings

import numpy as np
import pytest

from rccr import autodiff as ad
from rccr.model import ConfigError, HeadKind
from rccr.symmetry import (
    AlignmentSpec,
    DivergenceSpec,
    LinkSpec,
    SymmetrySpec,
    align,
    apply_link,
    consistency_penalty,
    default_symmetry,
    divergence,
    fisher_quadratic_check,
    rccr_loss,
    symmetrize,
    task_loss,
    to_eval_space,
)

SWAP = AlignmentSpec(binwise=True, perm=(1, 0))


def test_align_examples():
    seq = AlignmentSpec()
    np.testing.assert_array_equal(align(np.array([1.0, 2.0]), seq), [1.0, 2.0])
    bins = AlignmentSpec(binwise=True)
    np.testing.assert_array_equal(align(np.array([[1.0], [2.0], [3.0]]), bins), [[3.0], [2.0], [1.0]])
    np.testing.assert_array_equal(align(np.array([[1.0, 2.0], [3.0, 4.0]]), SWAP), [[4.0, 3.0], [2.0, 1.0]])


def test_align_tensor_matches_numpy():
    x = np.random.default_rng(0).normal(size=(2, 4, 2))
    np.testing.assert_array_equal(align(ad.tensor(x), SWAP).data, align(x, SWAP))


def test_alignment_validation():
    with pytest.raises(ConfigError):
        AlignmentSpec(binwise=True, perm=(1, 2, 0))
    with pytest.raises(ConfigError):
        AlignmentSpec(binwise=False, perm=(1, 0))
    with pytest.raises(ConfigError):
        AlignmentSpec(mask=(0.5, 1.0))
    with pytest.raises(ValueError):
        align(np.zeros((3, 3)), SWAP)


def test_for_head():
    head = HeadKind.bin_regression(4, 2, 8)
    assert AlignmentSpec.for_head(head, swap_strands=True).perm == (1, 0)
    assert AlignmentSpec.for_head(head).perm == (0, 1)
    assert not AlignmentSpec.for_head(HeadKind.sequence_classification(3)).binwise


def test_link_examples():
    np.testing.assert_array_equal(apply_link([0.3, -1.2], LinkSpec("identity")).data, [0.3, -1.2])
    np.testing.assert_array_equal(apply_link([0.0, 0.0], LinkSpec("softmax", 2.0)).data, [0.5, 0.5])
    assert apply_link([0.0], LinkSpec("log1p")).data[0] == 0.0
    with pytest.raises(ValueError):
        apply_link([-1.0], LinkSpec("log1p"))


def test_divergence_examples():
    p = np.array([[0.2, 0.3, 0.5]])
    assert divergence(p, p, DivergenceSpec("skl")).item() == 0.0
    skl = divergence([[0.5, 0.5]], [[0.9, 0.1]], DivergenceSpec("skl")).item()
    oracle = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1) + 0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5)
    assert skl == pytest.approx(oracle, abs=1e-12)
    assert skl == pytest.approx(0.8789, abs=1e-4)
    # closed-form Poisson KL in both directions
    one_way = 1.0 * math.log(1.0 / 2.0) + 2.0 - 1.0
    other = 2.0 * math.log(2.0 / 1.0) + 1.0 - 2.0
    pois = divergence([[1.0]], [[2.0]], DivergenceSpec("poisson")).item()
    assert pois == pytest.approx(one_way + other, abs=1e-12)
    assert pois == pytest.approx(0.6931, abs=1e-4)
    assert divergence([[1.0, 1.0]], [[1.0, 3.0]], DivergenceSpec("mse", sigma=1.0)).item() == 2.0


def test_divergence_rejects_non_probabilities():
    with pytest.raises(ValueError):
        divergence([[0.5, 0.6]], [[0.5, 0.5]], DivergenceSpec("skl"))
    with pytest.raises(ValueError):
        divergence([[0.5, 0.5]], [[0.5, 0.5 + 1e-8]], DivergenceSpec("js"))


def test_js_and_huber_values():
    u, v = np.array([[0.5, 0.5]]), np.array([[0.9, 0.1]])
    m = (u + v) / 2
    oracle = 0.5 * np.sum(u * np.log(u / m)) + 0.5 * np.sum(v * np.log(v / m))
    assert divergence(u, v, DivergenceSpec("js")).item() == pytest.approx(oracle, abs=1e-14)
    h = divergence([[0.0, 0.0]], [[0.5, 3.0]], DivergenceSpec("huber", delta=1.0)).item()
    assert h == pytest.approx(0.125 + 2.5)


def test_binwise_divergence_averages_bins():
    u = np.zeros((1, 2, 1))
    v = np.array([[[2.0], [0.0]]])
    d = divergence(u, v, DivergenceSpec("mse"), binwise=True).item()
    assert d == pytest.approx(1.0)


def test_rccr_loss_degeneracies():
    rng = np.random.default_rng(0)
    f, g = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    task = task_loss("cross-entropy", f, rng.integers(0, 3, 5))
    link, div = LinkSpec("softmax", 2.0), DivergenceSpec("skl")
    assert rccr_loss(task, f, g, link, div, 0.0).item() == task.item()
    assert rccr_loss(task, f, f, link, div, 5.0).item() == task.item()
    assert rccr_loss(task, f, g, link, div, 3.0, mask=np.zeros(3)).item() == task.item()
    assert rccr_loss(task, f, g, link, div, 0.3).item() > task.item()
    with pytest.raises(ConfigError):
        rccr_loss(task, f, g, link, div, -0.1)


def test_penalty_mask_selects_channels():
    f = np.array([[[1.0, 5.0]]])
    g = np.array([[[1.0, 0.0]]])
    pen = consistency_penalty(f, g, LinkSpec(), DivergenceSpec("mse"), mask=(1.0, 0.0), binwise=True)
    assert pen.item() == 0.0


def test_symmetrize_examples():
    np.testing.assert_array_equal(symmetrize(np.array([2.0, 0.0]), np.array([0.0, 2.0])), [1.0, 1.0])
    v = np.array([0.3, 0.7])
    np.testing.assert_array_equal(symmetrize(v, v), v)
    with pytest.raises(ValueError):
        symmetrize(np.zeros(2), np.zeros(3))


def test_task_losses():
    out = np.array([[0.0, 0.0]])
    assert task_loss("cross-entropy", out, [1]).item() == pytest.approx(math.log(2))
    assert task_loss("mse", [[1.0]], [[3.0]]).item() == 4.0
    assert task_loss("poisson", [[0.0]], [[2.0]]).item() == 1.0
    with pytest.raises(ConfigError):
        task_loss("hinge", out, [1])


def test_spec_compatibility():
    with pytest.raises(ConfigError, match="link"):
        SymmetrySpec(link=LinkSpec("identity"), divergence=DivergenceSpec("skl"))
    spec = default_symmetry(HeadKind.bin_regression(4, 2, 8), swap_strands=True)
    assert spec.target_transform == "log1p" and spec.alignment.perm == (1, 0)
    assert SymmetrySpec.from_dict(spec.to_dict()) == spec


def test_eval_space():
    clf = default_symmetry(HeadKind.sequence_classification(2))
    np.testing.assert_allclose(to_eval_space(np.array([[0.0, 0.0]]), clf), [[0.5, 0.5]])
    reg = default_symmetry(HeadKind.sequence_regression(1))
    np.testing.assert_array_equal(to_eval_space(np.array([[3.0]]), reg), [[3.0]])


def test_fisher_pure_shift_and_degenerate():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    assert fisher_quadratic_check(p, np.full(4, 1e-3)) == 1.0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert math.isnan(fisher_quadratic_check(np.array([1.0, 0.0, 0.0, 0.0]), np.ones(4)))
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)


def test_fisher_ratio_converges_at_second_order():
    """|ratio - 1| shrinks linearly with the step: each halving roughly halves it."""
    rng = np.random.default_rng(7)
    for _ in range(20):
        p = rng.dirichlet(np.ones(4))
        direction = rng.normal(size=4)
        direction /= np.linalg.norm(direction)
        errs = [abs(fisher_quadratic_check(p, h * direction) - 1.0) for h in (1e-2, 5e-3, 2.5e-3, 1.25e-3)]
        if min(errs) < 1e-9:
            continue
        orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
        assert all(o > 0.9 for o in orders), orders
