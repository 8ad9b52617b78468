import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hetcausal.datasets import (
    DataPair,
    SimSpec,
    compile_expression,
    derive_seed,
    load_pair_file,
    load_theta_file,
    marginal_correlation_test,
    simulate_gaussian_mixture_grid,
    simulate_mixture_anm,
    standardize,
    subsample,
    three_regime_spec,
    within_cluster_correlation_test,
    write_pair_file,
)
from hetcausal.errors import DegenerateData, FormatError, InvalidData, InvalidParameter, ParseError


def test_load_two_columns(tmp_path):
    p = tmp_path / "pair0001.txt"
    p.write_text("0 1\n2 3\n")
    pair = load_pair_file(p)
    np.testing.assert_array_equal(pair.x, [0, 2])
    np.testing.assert_array_equal(pair.y, [1, 3])
    assert pair.source_id == "pair0001"


def test_load_bad_token_reports_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 1\n2 3\n4 oops\n")
    with pytest.raises(ParseError) as err:
        load_pair_file(p)
    assert err.value.line == 3


def test_load_format_errors(tmp_path):
    one = tmp_path / "one.txt"
    one.write_text("1\n2\n")
    with pytest.raises(FormatError):
        load_pair_file(one)
    with pytest.raises(FormatError):
        load_pair_file(tmp_path / "missing.txt")
    empty = tmp_path / "empty.txt"
    empty.write_text("\n\n")
    with pytest.raises(FormatError):
        load_pair_file(empty)
    ragged = tmp_path / "ragged.txt"
    ragged.write_text("1 2\n3 4 5\n")
    with pytest.raises(ParseError) as err:
        load_pair_file(ragged)
    assert err.value.line == 2


def test_load_extra_columns_warns(tmp_path):
    p = tmp_path / "wide.txt"
    p.write_text("1 2 3\n4 5 6\n")
    with pytest.warns(UserWarning, match="extra column"):
        pair = load_pair_file(p)
    np.testing.assert_array_equal(pair.y, [2, 5])


def test_large_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pair = DataPair(rng.normal(size=4321), rng.normal(size=4321))
    p = tmp_path / "big.txt"
    write_pair_file(pair, p)
    back = load_pair_file(p)
    assert back.n == 4321
    np.testing.assert_array_equal(back.x, pair.x)
    np.testing.assert_array_equal(back.y, pair.y)


def test_labels_sidecar(tmp_path):
    pair = simulate_mixture_anm(three_regime_spec(n=30))
    write_pair_file(pair, tmp_path / "d.txt", tmp_path / "d.labels.txt")
    np.testing.assert_array_equal(load_theta_file(tmp_path / "d.labels.txt"), pair.true_labels)


def test_theta_file(tmp_path):
    p = tmp_path / "theta.txt"
    p.write_text("0.5\n-1\n2\n")
    np.testing.assert_array_equal(load_theta_file(p), [0.5, -1, 2])
    p.write_text("0.5 1\n-1 2\n")
    np.testing.assert_array_equal(load_theta_file(p), [0.5, -1])
    p.write_text("a\n")
    with pytest.raises(ParseError):
        load_theta_file(p)
    with pytest.raises(FormatError):
        load_theta_file(tmp_path / "nope.txt")


def test_datapair_validation():
    with pytest.raises(InvalidData):
        DataPair([1.0], [2.0])
    with pytest.raises(InvalidData):
        DataPair([1.0, np.inf], [2.0, 3.0])
    with pytest.raises(InvalidData):
        DataPair([1.0, 2.0], [2.0, 3.0], true_labels=[0])
    with pytest.raises(InvalidParameter):
        DataPair([1.0, 2.0], [2.0, 3.0], true_direction="sideways")


def test_standardize_examples():
    s = standardize(DataPair([0.0, 2.0], [1.0, 5.0]))
    np.testing.assert_allclose(s.x, [-1, 1])
    assert s.meta["standardize"]["x_mean"] == 1.0 and s.meta["standardize"]["x_sd"] == 1.0
    with pytest.raises(DegenerateData):
        standardize(DataPair([0.0, 2.0], [3.0, 3.0]))


@settings(max_examples=50, deadline=None)
@given(arrays(float, st.integers(3, 30), elements=st.floats(-1e3, 1e3)),
       st.integers(0, 2**31))
def test_standardize_idempotent(x, seed):
    y = np.random.default_rng(seed).normal(size=x.size)
    if x.std() < 1e-3:
        return
    once = standardize(DataPair(x, y))
    twice = standardize(once)
    np.testing.assert_allclose(twice.x, once.x, atol=1e-12)
    np.testing.assert_allclose(twice.y, once.y, atol=1e-12)
    assert abs(once.x.mean()) < 1e-12 and once.x.std() == pytest.approx(1.0, abs=1e-12)


def test_three_regime_generator():
    pair = simulate_mixture_anm(three_regime_spec(n=300, seed=0))
    assert pair.n == 300 and pair.true_direction == "XtoY"
    assert set(np.unique(pair.true_labels)) == {0, 1, 2}
    fs = [lambda x: x**3, lambda x: 0.5 * x, lambda x: 0.8 - x**3]
    for c, f in enumerate(fs):
        idx = pair.true_labels == c
        assert 0.04 <= np.std(pair.y[idx] - f(pair.x[idx])) <= 0.06
    assert pair.x.min() >= 0 and pair.x.max() <= 1.1


def test_generators_deterministic():
    a = simulate_mixture_anm(three_regime_spec(seed=5))
    b = simulate_mixture_anm(three_regime_spec(seed=5))
    assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes()
    np.testing.assert_array_equal(a.true_labels, b.true_labels)
    g1, g2 = simulate_gaussian_mixture_grid(3, 20, 1), simulate_gaussian_mixture_grid(3, 20, 1)
    assert g1.x.tobytes() == g2.x.tobytes()


def test_single_linear_regime():
    pair = simulate_mixture_anm(SimSpec(regimes=(("0.5*x", 1.0),), noise_sd=0.05, n=300))
    assert np.corrcoef(pair.x, pair.y)[0, 1] > 0.9


def test_simspec_validation_and_normalization():
    with pytest.raises(InvalidParameter):
        SimSpec(regimes=(("x", 1.0),), noise_sd=0.0)
    with pytest.raises(InvalidParameter):
        SimSpec(regimes=(("x", 1.0),), n=5)
    with pytest.raises(InvalidParameter):
        SimSpec(regimes=(("x", -1.0),))
    with pytest.raises(InvalidParameter):
        SimSpec(regimes=(("x", 1.0),), x_distribution={"kind": "cauchy"})
    with pytest.warns(UserWarning, match="normalizing"):
        spec = SimSpec(regimes=(("x", 2.0), ("x**2", 6.0)))
    np.testing.assert_allclose(spec.weights, [0.25, 0.75])
    assert SimSpec.from_dict(spec.to_dict()) == spec


def test_regime_labels_consistent_with_functions():
    spec = SimSpec(regimes=(("0*x", 0.5), ("0*x + 10", 0.5)), noise_sd=0.01, n=200, seed=2)
    pair = simulate_mixture_anm(spec)
    np.testing.assert_array_equal(pair.true_labels, (pair.y > 5).astype(int))


def test_normal_x_distribution():
    spec = SimSpec(regimes=(("x", 1.0),), n=2000, x_distribution={"kind": "normal", "loc": 3.0, "scale": 0.5})
    pair = simulate_mixture_anm(spec)
    assert pair.x.mean() == pytest.approx(3.0, abs=0.05)


def test_compile_expression():
    f = compile_expression("sin(pi * x) + x**2 - exp(0)")
    np.testing.assert_allclose(f(np.array([0.0, 0.5])), [-1.0, 0.25])
    np.testing.assert_array_equal(compile_expression("2")(np.zeros(3)), [2, 2, 2])
    for bad in ("__import__('os')", "x.real", "y + 1", "open(x)", "'a'", "x +"):
        with pytest.raises(InvalidParameter):
            compile_expression(bad)


def test_gaussian_grid_layout():
    pair = simulate_gaussian_mixture_grid(3, 50, 0)
    assert pair.n == 150
    np.testing.assert_array_equal(np.bincount(pair.true_labels), [50, 50, 50])
    for j in range(3):
        idx = pair.true_labels == j
        assert pair.x[idx].mean() == pytest.approx(4 * j, abs=0.4)
        assert pair.y[idx].mean() == pytest.approx(4 * j, abs=0.4)
    for bad in ((0, 50), (9, 50), (2, 9)):
        with pytest.raises(InvalidParameter):
            simulate_gaussian_mixture_grid(*bad, 0)


def _rate(test, k, reps=2000, n_per=100):
    return np.mean([test(simulate_gaussian_mixture_grid(k, n_per, s), 0.05)[1] for s in range(reps)])


def test_grid_k1_marginal_rejects_about_alpha():
    assert abs(_rate(marginal_correlation_test, 1) - 0.05) < 0.015


def test_grid_k8_marginal_correlation_high():
    for s in range(200):
        r, _ = marginal_correlation_test(simulate_gaussian_mixture_grid(8, 100, s), 0.05)
        assert r > 0.8


@pytest.mark.parametrize("k", [1, 4, 8])
def test_grid_within_cluster_rejects_about_alpha(k):
    assert abs(_rate(within_cluster_correlation_test, k) - 0.05) < 0.02


def test_correlation_test_examples():
    x = np.arange(10.0)
    assert marginal_correlation_test(DataPair(x, x), 0.05) == (1.0, True)
    assert marginal_correlation_test(DataPair(x, -x), 0.05) == (-1.0, True)
    with pytest.raises(DegenerateData):
        marginal_correlation_test(DataPair(x, np.ones(10)), 0.05)
    with pytest.raises(InvalidParameter):
        marginal_correlation_test(DataPair(x[:3], x[:3]), 0.05)


def test_marginal_calibration_independent_gaussians():
    rates = []
    for s in range(2000):
        rng = np.random.default_rng(s)
        rates.append(marginal_correlation_test(DataPair(rng.normal(size=100), rng.normal(size=100)), 0.05)[1])
    assert abs(np.mean(rates) - 0.05) < 0.015


def test_within_cluster_examples():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=40), rng.normal(size=40)
    same = DataPair(x, y, true_labels=np.zeros(40, dtype=int))
    (rw, dw), (rm, dm) = within_cluster_correlation_test(same, 0.05), marginal_correlation_test(same, 0.05)
    assert rw == pytest.approx(rm, abs=1e-14) and dw == dm
    labels = np.repeat([0, 1], 20)
    shifted = DataPair(x + 10 * labels, x - 5 * labels, true_labels=labels)
    r, rej = within_cluster_correlation_test(shifted, 0.05)
    assert r == pytest.approx(1.0) and rej
    with pytest.raises(InvalidParameter):
        within_cluster_correlation_test(DataPair(x, y), 0.05)
    with pytest.raises(InvalidParameter):
        within_cluster_correlation_test(DataPair(x, y, true_labels=np.r_[np.zeros(37), np.ones(3)]), 0.05)


def test_subsample():
    pair = simulate_mixture_anm(three_regime_spec(n=500, seed=1))
    full = subsample(pair, 500, 3)
    assert set(full.x) == set(pair.x)
    s = subsample(pair, 90, 3)
    assert s.n == 90 and np.unique(s.x).size == 90
    assert s.true_direction == "XtoY"
    lookup = dict(zip(pair.x, pair.true_labels))
    assert all(lookup[v] == lab for v, lab in zip(s.x, s.true_labels))
    assert s.meta["subsample"] == {"m": 90, "seed": 3}
    np.testing.assert_array_equal(subsample(pair, 90, 3).x, s.x)
    with pytest.raises(InvalidParameter):
        subsample(pair, 501, 0)


def test_subsample_seeds_differ():
    pair = simulate_mixture_anm(three_regime_spec(n=500, seed=1))
    for s in range(100):
        assert set(subsample(pair, 90, 2 * s).x) != set(subsample(pair, 90, 2 * s + 1).x)


def test_derive_seed():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert len({derive_seed(7, i) for i in range(1000)}) == 1000
    assert 0 <= derive_seed(0) < 2**32
