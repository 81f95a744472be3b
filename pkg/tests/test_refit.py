from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpinfer.core import ChangePointVector, SegmentModel, center, loss_global, loss_local
from cpinfer.errors import ValidationError
from cpinfer.refit import (
    bic_select_lambda,
    estimate_means,
    lambda_grid,
    local_refit,
    refit,
    refitted_means,
    soft_threshold,
)
from cpinfer.simlab import generate_dataset, scenario


def scen_a(rep=0, **kw):
    cfg = scenario("A", **kw)
    raw, tau0, truth = generate_dataset(cfg, rep)
    return center(raw), tau0, truth


# --- soft threshold ------------------------------------------------------

@pytest.mark.parametrize("v,lam,want", [(1.2, 0.5, 0.7), (-0.3, 0.5, 0.0), (0.0, 0.3, 0.0),
                                        (0.0, 0.0, 0.0), (-2.0, 0.5, -1.5)])
def test_soft_threshold_examples(v, lam, want):
    assert soft_threshold(v, lam) == pytest.approx(want, abs=1e-15)


def test_soft_threshold_negative_lambda():
    with pytest.raises(ValidationError):
        soft_threshold([1.0], -0.1)


def _prox_obj(v, theta, lam):
    return 0.5 * np.sum((v - theta) ** 2) + lam * np.sum(np.abs(theta))


def test_soft_threshold_prox_optimality_1000_draws():
    rng = np.random.default_rng(2024)
    worst = math.inf
    for _ in range(1000):
        p = int(rng.integers(1, 8))
        v = rng.normal(0, 2, p)
        lam = float(rng.uniform(0, 2))
        th = soft_threshold(v, lam)
        base = _prox_obj(v, th, lam)
        pert = th + rng.normal(0, rng.choice([1e-6, 1e-3, 0.1, 1.0]), (1000, p))
        vals = 0.5 * np.sum((v - pert) ** 2, axis=1) + lam * np.sum(np.abs(pert), axis=1)
        worst = min(worst, float(np.min(vals - base)))
    assert worst >= -1e-12


def test_unscaled_l1_objective_is_minimised_at_half_lambda():
    # ||v - t||^2 + lam |t| has its minimiser at k_{lam/2}(v), not k_lam(v)
    grid = np.linspace(-3, 3, 600_001)
    for v, lam in [(1.2, 0.5), (-0.8, 0.3), (0.1, 0.5), (2.5, 1.7)]:
        obj = (v - grid) ** 2 + lam * np.abs(grid)
        t = grid[np.argmin(obj)]
        assert abs(t - soft_threshold(v, lam / 2)) < 2e-5
    assert abs(float(soft_threshold(1.2, 0.25)) - 0.95) < 1e-12


# --- estimate_means ------------------------------------------------------

def test_estimate_means_noiseless_shrinks_by_lambda():
    truth = np.array([[1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0]])
    taus = ChangePointVector([10], 20)
    x = np.repeat(truth, [10, 10], axis=0)
    m = estimate_means(x, taus, 0.1)
    assert np.max(np.abs(m.means - truth)) <= 0.1 + 1e-15
    for j in range(2):
        assert set(np.flatnonzero(truth[j])) <= set(m.supports[j].tolist())
    assert m.lam == 0.1


def test_estimate_means_large_lambda_gives_zero_model():
    x = np.random.default_rng(0).standard_normal((30, 4))
    m = estimate_means(x, ChangePointVector([15], 30), 10.0)
    assert np.all(m.means == 0) and all(s.size == 0 for s in m.supports)


def test_empty_segment_is_rejected():
    with pytest.raises(ValidationError):
        ChangePointVector([5, 5], 10)


def test_estimate_means_matches_1d_prox_grid_oracle():
    x, tau0, _ = scen_a(3)
    lam = 0.23
    m = estimate_means(x, tau0, lam)
    grid = np.linspace(-3, 3, 600_001)
    b = tau0.bounds
    for j in range(tau0.N + 1):
        xbar = x.values[b[j]:b[j + 1]].mean(axis=0)
        for k in range(0, x.p, 7):
            obj = 0.5 * (xbar[k] - grid) ** 2 + lam * np.abs(grid)
            assert abs(grid[np.argmin(obj)] - m.means[j, k]) < 1e-5
            # closed-form piecewise check at machine precision
            assert abs(m.means[j, k] - np.sign(xbar[k]) * max(abs(xbar[k]) - lam, 0)) < 1e-6


# --- BIC -----------------------------------------------------------------

def test_lambda_grid_is_open_interval():
    g = lambda_grid(0.0, 0.5, 25)
    assert g.size == 25 and g[0] > 0 and g[-1] < 0.5
    assert np.allclose(np.diff(g), 0.5 / 26)
    with pytest.raises(ValidationError):
        lambda_grid(0.5, 0.5, 3)


def test_bic_all_zero_ties_to_smallest_lambda():
    x = np.zeros((10, 3))
    grid = lambda_grid()
    lam, trace = bic_select_lambda(x, ChangePointVector([], 10), grid)
    assert lam == grid[0]
    assert all(b == 0.0 for _, b in trace)


def test_bic_noiseless_strong_signal_keeps_supports():
    truth = np.array([[2.0, 0, 0, 1.5], [0, -1.0, 0, 1.5], [0, 0, 3.0, 0]])
    taus = ChangePointVector([20, 45], 70)
    x = np.repeat(truth, np.diff(taus.bounds), axis=0)
    lam, trace = bic_select_lambda(x, taus, lambda_grid(0, 0.5, 25))
    smallest_jump = np.min(np.abs(truth[truth != 0]))
    assert lam < smallest_jump
    # exhaustive oracle: recompute on the grid
    vals = [loss_global(x, taus, estimate_means(x, taus, l)) +
            np.count_nonzero(np.any(estimate_means(x, taus, l).means != 0, axis=0)) * math.log(70)
            for l, _ in trace]
    assert lam == trace[int(np.argmin(vals))][0]


@pytest.mark.parametrize("rep", range(5))
def test_bic_matches_direct_reevaluation(rep):
    x, tau0, _ = scen_a(rep)
    grid = lambda_grid()
    lam, trace = bic_select_lambda(x, tau0, grid)
    direct = []
    for l in grid:
        m = estimate_means(x, tau0, l)
        union = np.any(m.support_mask, axis=0).sum()
        direct.append(loss_global(x, tau0, m) + union * math.log(x.T))
    assert np.allclose([b for _, b in trace], direct, rtol=1e-10)
    assert lam == grid[int(np.argmin(direct))]


@given(st.integers(0, 10_000))
def test_support_size_is_monotone_in_lambda(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((40, 8)) * 0.5
    taus = ChangePointVector([13, 27], 40)
    sizes = [np.any(estimate_means(x, taus, l).support_mask, axis=0).sum() for l in lambda_grid(0, 1, 30)]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


def test_bic_rejects_nonpositive_grid():
    with pytest.raises(ValidationError):
        bic_select_lambda(np.zeros((5, 1)), ChangePointVector([], 5), [0.0, 0.1])
    with pytest.raises(ValidationError):
        bic_select_lambda(np.zeros((5, 1)), ChangePointVector([], 5), [])


# --- local refit ---------------------------------------------------------

def test_local_refit_noiseless_recovers_truth():
    truth = np.array([[-1.0, 0.5], [1.0, 0.5]])
    x = np.repeat(truth, [30, 30], axis=0)
    out = local_refit(x, ChangePointVector([33], 60), SegmentModel(truth))
    assert out.taus == (30,)


def test_local_refit_zero_jump_ties_to_left_edge():
    x = np.random.default_rng(1).standard_normal((50, 3))
    theta = np.array([[0.2, 0, 0], [0.2, 0, 0], [1.0, 0, 0]])
    out = local_refit(x, ChangePointVector([20, 35], 50), SegmentModel(theta))
    assert out.taus[0] == 1


def exhaustive_refit(x, taus, means):
    b = taus.bounds
    out = []
    for j in range(1, len(b) - 1):
        vals = [loss_local(x, t, b[j - 1], b[j + 1], means[j - 1], means[j])
                for t in range(b[j - 1] + 1, b[j + 1])]
        out.append(b[j - 1] + 1 + int(np.argmin(vals)))
    return out


@pytest.mark.parametrize("rep", range(3))
def test_local_refit_matches_exhaustive_scan(rep):
    x, tau0, _ = scen_a(rep)
    rng = np.random.default_rng(rep)
    prelim = ChangePointVector([t + int(rng.integers(-8, 9)) for t in tau0.taus], x.T)
    lam, _ = bic_select_lambda(x, prelim)
    m = estimate_means(x, prelim, lam)
    assert list(local_refit(x, prelim, m).taus) == exhaustive_refit(x.values, prelim, m.means)


def test_local_refit_uses_original_neighbours():
    # a sequential update would move the second window after refitting the first
    rng = np.random.default_rng(9)
    truth = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0]])
    x = np.repeat(truth, [20, 20, 20], axis=0) + 0.3 * rng.standard_normal((60, 2))
    prelim = ChangePointVector([25, 38], 60)
    m = SegmentModel(truth)
    out = local_refit(x, prelim, m)
    b = prelim.bounds
    for j, t in enumerate(out.taus, start=1):
        assert b[j - 1] < t < b[j + 1]
    assert list(out.taus) == exhaustive_refit(x, prelim, truth)


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_local_refit_exact_truth_is_fixed_point(seed, N):
    rng = np.random.default_rng(seed)
    T = 20 * (N + 1)
    tau0 = ChangePointVector([20 * j for j in range(1, N + 1)], T)
    means = rng.normal(0, 1, (N + 1, 4))
    means[1:] += (means[1:] == means[:-1]) * 1.0
    x = np.repeat(means, 20, axis=0)
    assert local_refit(x, tau0, SegmentModel(means)).taus == tau0.taus


@given(st.integers(0, 10_000), st.floats(-0.45, 0.45))
def test_local_refit_argmin_invariant_to_common_shift(seed, frac):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(0, 1, 5), rng.normal(0, 1, 5)
    eta = a - b
    # shift with |c'eta| < |eta|^2 / 2 plus a component orthogonal to eta
    ortho = rng.normal(0, 3, 5)
    ortho -= (ortho @ eta) / (eta @ eta) * eta
    c = frac * eta + ortho
    x = np.repeat(np.vstack([a, b]), [15, 25], axis=0)
    taus = ChangePointVector([15], 40)
    base = local_refit(x, taus, SegmentModel(np.vstack([a, b])))
    shifted = local_refit(x, taus, SegmentModel(np.vstack([a + c, b + c])))
    assert base.taus == shifted.taus == (15,)


def test_local_refit_alignment_check():
    with pytest.raises(ValidationError):
        local_refit(np.zeros((10, 1)), ChangePointVector([5], 10), SegmentModel(np.zeros((3, 1))))


# --- refitted means ------------------------------------------------------

def test_refitted_means_full_and_empty_support():
    x = np.random.default_rng(4).standard_normal((30, 3))
    taus = ChangePointVector([12], 30)
    full = refitted_means(x, taus, [np.arange(3), np.arange(3)])
    assert np.array_equal(full.means, np.vstack([x[:12].mean(0), x[12:].mean(0)]))
    empty = refitted_means(x, taus, [np.array([], int), np.array([], int)])
    assert np.all(empty.means == 0)


def test_refitted_means_masked_oracle():
    x, tau0, _ = scen_a(1)
    rng = np.random.default_rng(0)
    sup = [np.sort(rng.choice(x.p, 6, replace=False)) for _ in range(3)]
    m = refitted_means(x, tau0, sup)
    b = tau0.bounds
    for j in range(3):
        want = np.zeros(x.p)
        for k in sup[j]:
            want[k] = sum(x.values[t, k] for t in range(b[j], b[j + 1])) / (b[j + 1] - b[j])
        assert np.allclose(m.means[j], want, rtol=0, atol=1e-12)
    with pytest.raises(ValidationError):
        refitted_means(x, tau0, sup[:2])


@pytest.mark.parametrize("rep", range(3))
def test_refit_result_invariants(rep):
    x, tau0, _ = scen_a(rep)
    prelim = ChangePointVector([t + 4 for t in tau0.taus], x.T)
    res = refit(x, prelim)
    assert res.taus_refit.N == prelim.N
    b = prelim.bounds
    for j, t in enumerate(res.taus_refit.taus, start=1):
        assert b[j - 1] < t < b[j + 1]
    mask = res.means_refit.support_mask
    assert np.all(res.means_refit.means[~mask] == 0)
    assert res.lambda_selected > 0 and len(res.bic_trace) == 25
    d = res.to_dict()
    assert d["taus"] == list(res.taus_refit.taus) and d["N"] == prelim.N
