import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fermech.backbone import BackboneConfig, init_backbone
from fermech.errors import ContractError, DomainError, ShapeError
from fermech.losses import LossConfig, cross_entropy, cross_entropy_grad
from fermech.mre import (
    MixMask,
    MreConfig,
    choose_partners,
    init_branch,
    mix_batch,
    mix_batch_grad,
    mix_representations,
    mre_branch,
    mre_branch_grad,
    mre_loss,
    sample_batch_masks,
    sample_mix_mask,
)
from fermech.numerics import finite_diff_grad, max_rel_error
from fermech.gus import GusConfig
from fermech.pipeline.data import AugmentConfig
from fermech.pipeline.train import Settings, mre_objective

from conftest import GRAD_POINTS, GRAD_TOL


def test_mask_boundaries(rng):
    assert sample_mix_mask((3, 5), 0.0, rng).positions == frozenset()
    full = sample_mix_mask((3, 5), 1.0, rng)
    assert len(full.positions) == 15 and full.to_array().all()


def test_mask_size_and_bounds(rng):
    m = sample_mix_mask((4, 4), 0.25, rng)
    assert len(m.positions) == 4
    assert all(0 <= r < 4 and 0 <= c < 4 for r, c in m.positions)


def test_mask_rejects_out_of_grid():
    with pytest.raises(DomainError):
        MixMask(frozenset({(2, 0)}), (2, 2))


def _binomial_band(counts, trials, p):
    sigma = math.sqrt(trials * p * (1 - p))
    return np.all(np.abs(counts - trials * p) <= 3 * sigma)


def test_mask_uniformity():
    rng = np.random.default_rng(2024)
    counts = np.zeros((4, 4))
    for _ in range(10_000):
        counts += sample_mix_mask((4, 4), 0.25, rng).to_array()
    assert _binomial_band(counts, 10_000, 0.25)


def test_batch_mask_uniformity():
    masks = sample_batch_masks(10_000, (4, 4), 0.25, np.random.default_rng(99))
    assert np.all(masks.reshape(10_000, -1).sum(axis=1) == 4)
    assert _binomial_band(masks.sum(axis=0), 10_000, 0.25)


def test_mask_deterministic():
    a = sample_mix_mask((4, 4), 0.5, np.random.default_rng(1))
    b = sample_mix_mask((4, 4), 0.5, np.random.default_rng(1))
    assert a == b


def test_mix_examples(rng):
    r_i = rng.normal(size=(3, 2, 2))
    r_j = rng.normal(size=(3, 2, 2))
    empty = MixMask(frozenset(), (2, 2))
    assert np.array_equal(mix_representations(r_i, r_j, empty), r_i)
    assert np.array_equal(mix_representations(r_i, r_j, empty.complement()), r_j)
    out = mix_representations(np.ones((3, 2, 2)), np.full((3, 2, 2), 5.0), MixMask(frozenset({(0, 0)}), (2, 2)))
    assert out[:, 0, 0].tolist() == [5.0] * 3
    assert (out[:, 0, 1] == 1).all() and (out[:, 1, :] == 1).all()


def test_mix_value_semantics(rng):
    r_i = rng.normal(size=(2, 2, 2))
    r_j = rng.normal(size=(2, 2, 2))
    out = mix_representations(r_i, r_j, MixMask(frozenset({(1, 1)}), (2, 2)))
    out[:] = 0
    assert r_i.any() and r_j.any()


def test_mix_errors():
    mask = MixMask(frozenset(), (2, 2))
    with pytest.raises(ShapeError):
        mix_representations(np.ones((2, 2, 2)), np.ones((3, 2, 2)), mask)
    with pytest.raises(ContractError):
        mix_representations(np.ones((2, 2, 2)), np.ones((2, 2, 2)), mask, label_i=3, label_j=3)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_mix_partition_and_complement_swap(seed, ratio):
    rng = np.random.default_rng(seed)
    r_i = rng.normal(size=(8, 4, 4))
    r_j = rng.normal(size=(8, 4, 4))
    mask = sample_mix_mask((4, 4), ratio, rng)
    out = mix_representations(r_i, r_j, mask)
    m = mask.to_array()
    assert np.array_equal(out[:, m], r_j[:, m])
    assert np.array_equal(out[:, ~m], r_i[:, ~m])
    assert np.array_equal(out, mix_representations(r_j, r_i, mask.complement()))


def test_partners_have_other_labels(rng):
    y = np.array([0, 0, 1, 2, 2, 2, 5])
    for _ in range(50):
        p = choose_partners(y, rng)
        assert np.all(p >= 0) and np.all(y[p] != y)


def test_partners_uniform():
    y = np.array([0, 1, 1, 2])
    rng = np.random.default_rng(5)
    picks = np.array([choose_partners(y, rng)[0] for _ in range(6000)])
    counts = np.bincount(picks, minlength=4)[1:]
    assert _binomial_band(counts, 6000, 1 / 3)


def test_no_partner_leaves_sample_unmixed(rng):
    y = np.array([3, 3, 3])
    p = choose_partners(y, rng)
    assert p.tolist() == [-1, -1, -1]
    mid = rng.normal(size=(3, 2, 2, 2))
    masks = sample_batch_masks(3, (2, 2), 1.0, rng)
    assert np.array_equal(mix_batch(mid, p, masks), mid)


def test_mix_batch_matches_single(rng):
    mid = rng.normal(size=(4, 3, 2, 2))
    y = np.array([0, 1, 0, 2])
    p = choose_partners(y, rng)
    masks = sample_batch_masks(4, (2, 2), 0.5, rng)
    out = mix_batch(mid, p, masks)
    for i in range(4):
        mask = MixMask(frozenset(zip(*np.nonzero(masks[i]))), (2, 2))
        assert np.array_equal(out[i], mix_representations(mid[i], mid[p[i]], mask, y[i], y[p[i]]))


def test_zero_ratio_branch_sees_unmixed(rng):
    mid = rng.normal(size=(5, 3, 2, 2))
    p = choose_partners(np.arange(5), rng)
    assert np.array_equal(mix_batch(mid, p, sample_batch_masks(5, (2, 2), 0.0, rng)), mid)


def test_mix_batch_grad(rng):
    y = np.array([0, 1, 1, 2, 0])
    p = choose_partners(y, rng)
    masks = sample_batch_masks(5, (2, 2), 0.5, rng)
    r = rng.normal(size=(5, 3, 2, 2))
    mid = rng.normal(size=(5, 3, 2, 2))
    fd = finite_diff_grad(lambda m: float(np.sum(mix_batch(m, p, masks) * r)), mid)
    assert max_rel_error(mix_batch_grad(r, p, masks), fd) <= GRAD_TOL


def test_branch_examples(rng):
    mixed = rng.normal(size=(4, 2, 2))
    assert not mre_branch(mixed, np.zeros((4, 6))).any()
    w = rng.normal(size=(4, 6))
    const = np.full((4, 2, 2), 0.7)
    np.testing.assert_allclose(mre_branch(const, w), np.full(4, 0.7) @ w, atol=1e-15)
    shuffled = mixed.reshape(4, 4)[:, [3, 1, 0, 2]].reshape(4, 2, 2)
    np.testing.assert_allclose(mre_branch(shuffled, w), mre_branch(mixed, w), atol=1e-14)
    with pytest.raises(ShapeError):
        mre_branch(mixed, np.zeros((3, 6)))


def test_branch_gradient():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(GRAD_POINTS):
        mixed = rng.normal(size=(4, 2, 2))
        w = rng.normal(size=(4, 6))
        b = rng.normal(size=6)
        y = int(rng.integers(6))
        def loss_w(wv):
            return cross_entropy(mre_branch(mixed, wv, b), y)

        def loss_m(mv):
            return cross_entropy(mre_branch(mv, w, b), y)

        def loss_b(bv):
            return cross_entropy(mre_branch(mixed, w, bv), y)

        dw, db, dm = mre_branch_grad(mixed, w, cross_entropy_grad(mre_branch(mixed, w, b), y))
        worst = max(worst, max_rel_error(dw, finite_diff_grad(loss_w, w)),
                    max_rel_error(dm, finite_diff_grad(loss_m, mixed)),
                    max_rel_error(db, finite_diff_grad(loss_b, b)))
    assert worst <= GRAD_TOL


def test_mre_loss_examples(rng):
    z = rng.normal(size=6)
    zb = rng.normal(size=6)
    assert mre_loss(z, zb, 2, MreConfig(lam=0.0)) == cross_entropy(z, 2)
    assert mre_loss(z, z, 2, MreConfig(lam=1.0)) == 2 * cross_entropy(z, 2)
    branch = np.zeros(6)
    branch[4] = 60.0
    got = mre_loss(np.zeros(6), branch, 4, MreConfig(lam=0.5))
    assert got == pytest.approx(math.log(6) + 0.5 * 0.0, abs=1e-12)
    assert got == pytest.approx(1.79176, abs=1e-5)


@given(st.floats(0, 10), st.floats(0, 10))
def test_mre_loss_monotone_in_lambda(a, b):
    z = np.array([0.1, 0.2, -0.3, 0.0, 1.0, -1.0])
    zb = np.array([1.0, -0.5, 0.3, 0.2, 0.0, 0.4])
    lo, hi = sorted((a, b))
    assert mre_loss(z, zb, 1, MreConfig(lam=lo)) <= mre_loss(z, zb, 1, MreConfig(lam=hi))


def test_mre_config_validation():
    with pytest.raises(DomainError):
        MreConfig(noise_ratio=1.5)
    with pytest.raises(DomainError):
        MreConfig(lam=-1)


def test_full_mre_objective_gradient():
    """Backbone + mixing + branch, differentiated w.r.t. every parameter."""
    cfg = BackboneConfig(input_shape=(8,), mid_channels=4, mid_spatial=(2, 2), high_dim=8)
    s = Settings(cfg, cfg, MreConfig(lam=0.5), GusConfig(layers=(6,)), LossConfig(0.7, 0.2, 0.1),
                 AugmentConfig())
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(GRAD_POINTS):
        params = dict(init_backbone(cfg, rng).params)
        params.update(init_branch(4, 6, rng))
        names = sorted(params)
        shapes = {n: params[n].shape for n in names}
        theta = np.concatenate([params[n].ravel() for n in names])
        x = rng.normal(size=(4, 8))
        y = np.array([0, 1, 1, 3])
        partners = choose_partners(y, rng)
        masks = sample_batch_masks(4, (2, 2), 0.5, rng)

        def unpack(t):
            out, k = {}, 0
            for n in names:
                size = int(np.prod(shapes[n]))
                out[n] = t[k:k + size].reshape(shapes[n])
                k += size
            return out

        value = lambda t: mre_objective(unpack(t), x, y, partners, masks, s)[0]  # noqa: E731
        g = mre_objective(params, x, y, partners, masks, s)[1]
        analytic = np.concatenate([g[n].ravel() for n in names])
        worst = max(worst, max_rel_error(analytic, finite_diff_grad(value, theta)))
    assert worst <= GRAD_TOL
