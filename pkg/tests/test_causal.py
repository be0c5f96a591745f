import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geomatch.causal import (
    estimate_effects,
    extrapolation_bias,
    match_nn,
    match_random,
    mean_extrapolation_bias,
    save_pairs_csv,
)
from geomatch.data import Dataset, generate_swissroll
from geomatch.errors import InvalidArgumentError
from oracles import brute_force_match, direct_effects, random_instance


def test_row_argmin_example():
    a = match_nn([[1, 2], [3, 0.5]], [0, 1], [2, 3])
    assert a.match_index[:2].tolist() == [2, 3]
    # controls are matched back along the columns
    assert a.match_index[2:].tolist() == [0, 1]


def test_tie_goes_to_lowest_index():
    a = match_nn([[1.0, 1.0]], [0], [1, 2])
    assert a.match_index[0] == 1


def test_one_sided_matching():
    a = match_nn([[1.0, 2.0]], [0], [1, 2], two_sided=False)
    assert a.match_index.tolist() == [1, -1, -1]
    assert np.isnan(a.match_distance[1])


def test_match_errors():
    with pytest.raises(InvalidArgumentError):
        match_nn(np.zeros((0, 2)), [], [1, 2])
    with pytest.raises(InvalidArgumentError):
        match_nn([[np.nan]], [0], [1])
    with pytest.raises(InvalidArgumentError):
        match_nn([[1.0, 2.0]], [0], [1])


def test_brute_force_equivalence():
    r = np.random.default_rng(0)
    for _ in range(200):
        n, t, treated, control, D = random_instance(r)
        got = match_nn(D, treated, control, n=n).match_index.tolist()
        assert got == brute_force_match(D.tolist(), treated.tolist(), control.tolist(), n)


def test_scale_invariance():
    r = np.random.default_rng(1)
    for _ in range(50):
        n, t, treated, control, D = random_instance(r)
        a = match_nn(D, treated, control, n=n).match_index
        b = match_nn(D * 7.3, treated, control, n=n).match_index
        assert np.array_equal(a, b)


def test_hand_effect_example():
    ds = Dataset(np.zeros((2, 1)), [1, 0], [5.0, 1.0])
    a = match_nn([[0.0]], [0], [1])
    est = estimate_effects(ds, a)
    assert est.ite_hat.tolist() == [4.0, 4.0]
    assert est.ate_hat == 4.0
    assert est.ate_abs_error is None and est.pehe is None


def test_perfect_ite_gives_zero_pehe():
    y0 = np.array([1.0, 2.0, 1.0, 2.0])
    y1 = y0 + 3.0
    t = np.array([1, 0, 0, 1])
    ds = Dataset(np.zeros((4, 1)), t, np.where(t == 1, y1, y0), potential_y0=y0, potential_y1=y1, true_ite=y1 - y0)
    # pair units with equal y0 across groups
    a = match_nn([[0.0, 1.0], [1.0, 0.0]], [0, 3], [2, 1])
    est = estimate_effects(ds, a)
    assert est.pehe == 0.0 and est.ate_abs_error == 0.0


def test_zero_effect_when_outcomes_agree():
    ds = Dataset(np.zeros((4, 1)), [1, 0, 1, 0], [2.0, 2.0, -1.0, -1.0])
    a = match_nn([[0.0, 5.0], [5.0, 0.0]], [0, 2], [1, 3])
    assert estimate_effects(ds, a).ate_hat == 0.0


def test_estimates_match_direct_formula():
    r = np.random.default_rng(2)
    for _ in range(200):
        n, t, treated, control, D = random_instance(r)
        y0 = r.normal(size=n)
        y1 = y0 + r.normal(1, 1, size=n)
        ds = Dataset(np.zeros((n, 1)), t, np.where(t == 1, y1, y0), potential_y0=y0, potential_y1=y1, true_ite=y1 - y0)
        a = match_nn(D, treated, control, n=n)
        est = estimate_effects(ds, a)
        ite, ate, err, pehe = direct_effects(ds.outcome.tolist(), t.tolist(), a.match_index.tolist(), (y1 - y0).tolist())
        assert np.allclose(est.ite_hat, ite, rtol=0, atol=1e-12)
        assert abs(est.ate_hat - ate) <= 1e-12
        assert abs(est.ate_abs_error - err) <= 1e-12
        assert abs(est.pehe - pehe) <= 1e-12


def test_permutation_invariance():
    r = np.random.default_rng(3)
    n = 12
    Z = r.normal(size=(n, 2))
    t = np.array([1, 0] * 6)
    y0 = r.normal(size=n)
    y1 = y0 + 2 + Z[:, 0]
    perm = r.permutation(n)

    def run(order):
        Zp, tp, a0, a1 = Z[order], t[order], y0[order], y1[order]
        ds = Dataset(Zp, tp, np.where(tp == 1, a1, a0), true_ite=a1 - a0)
        tr, co = np.flatnonzero(tp == 1), np.flatnonzero(tp == 0)
        D = np.linalg.norm(Zp[tr][:, None] - Zp[co][None], axis=2)
        est = estimate_effects(ds, match_nn(D, tr, co))
        return est.ate_abs_error, est.pehe

    a, b = run(np.arange(n)), run(perm)
    assert a[0] == pytest.approx(b[0], abs=1e-12) and a[1] == pytest.approx(b[1], abs=1e-12)


def test_random_matching():
    a = match_random([0, 2, 4], [1, 3], seed=5)
    b = match_random([0, 2, 4], [1, 3], seed=5)
    assert np.array_equal(a.match_index, b.match_index)
    idx = a.match_index
    assert set(idx[[0, 2, 4]]) <= {1, 3} and set(idx[[1, 3]]) <= {0, 2, 4}
    assert a.distance_kind == "random"


def test_extrapolation_bias_swissroll_slope():
    ds = generate_swissroll(200, 3, seed=0)
    tr, co = ds.treated, ds.control
    D = np.linalg.norm(ds.covariates[tr][:, None] - ds.covariates[co][None], axis=2)
    a = match_nn(D, tr, co)
    bias = extrapolation_bias(ds, a)
    R = ds.intrinsic_coord
    expected = 0.5 * np.abs(R[tr] - R[a.match_index[tr]])
    assert np.abs(bias[tr] - expected).max() <= 1e-9
    assert np.all(np.isnan(bias[co]))
    assert mean_extrapolation_bias(ds, a) == pytest.approx(expected.mean(), abs=1e-12)


def test_extrapolation_bias_perfect_match():
    ds = Dataset(np.zeros((2, 1)), [1, 0], [1.0, 0.0], mu0=[0.3, 0.3], mu1=[1.0, 1.0])
    assert extrapolation_bias(ds, match_nn([[1.0]], [0], [1]))[0] == 0.0


def test_assignment_checks():
    ds = Dataset(np.zeros((3, 1)), [1, 0, 1], [1.0, 0.0, 1.0])
    bad = match_nn([[1.0]], [0], [2])
    with pytest.raises(InvalidArgumentError):
        estimate_effects(ds, bad)


def test_pairs_csv(tmp_path):
    a = match_nn([[1.0, 2.0]], [0], [1, 2])
    p = tmp_path / "pairs.csv"
    save_pairs_csv(a, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "unit_id,match_id,distance"
    assert lines[1] == "0,1,1.0"
    assert len(lines) == 4


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3))
def test_matching_properties(seed, scale):
    r = np.random.default_rng(seed)
    n, t, treated, control, D = random_instance(r)
    a = match_nn(D, treated, control, n=n)
    idx = a.match_index
    assert np.all(t[idx] != t)
    assert np.all(a.match_distance >= 0)
    assert np.array_equal(idx, match_nn(D * scale, treated, control, n=n).match_index)
