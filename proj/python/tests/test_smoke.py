import math

import numpy as np
import pytest

import epibias


def test_bias_metrics_are_linked():
    rng = np.random.default_rng(3)
    dhat = rng.uniform(1, 300, size=(4, 6))
    official = rng.uniform(1, 300, size=(4, 6))
    pop = rng.uniform(1e4, 1e6, size=4)
    b_a = epibias.additive_bias(dhat, official, pop)
    b_m = epibias.multiplicative_bias(dhat, official)
    np.testing.assert_allclose(b_a, b_m * 1000 * dhat / pop[:, None], rtol=1e-12)


def test_undefined_multiplicative_bias_is_nan():
    out = epibias.multiplicative_bias(np.array([[0.0, 2.0]]), np.array([[1.0, 1.0]]))
    assert math.isnan(out[0, 0])
    assert out[0, 1] == 0.5


def test_pc_rate():
    assert epibias.pc_rate(1.0) == pytest.approx(-math.log(0.05))


def test_simulate_and_fit():
    sim = epibias.simulate(ns=6, nt=5, seed=4)
    assert sim["y"].shape == (6, 5)
    np.testing.assert_allclose(sim["u"].sum(), 0.0, atol=1e-8)
    res = epibias.fit(sim["y"], sim["weights"], chains=2, warmup=200, draws=100, seed=2, save_latent=True)
    assert res["V"].shape == (2, 100)
    np.testing.assert_allclose(res["shares"].sum(axis=1), 1.0)
    assert res["fitted_mean"].shape == (6, 5)
    again = epibias.fit(sim["y"], sim["weights"], chains=2, warmup=200, draws=100, seed=2)
    np.testing.assert_array_equal(res["V"], again["V"])


def test_clustering():
    assert epibias.dtw([0, 0, 1, 0], [0, 1, 0, 0]) == 0.0
    rng = np.random.default_rng(0)
    series = np.vstack([lvl + rng.normal(0, 0.01, size=(4, 8)) for lvl in (0.1, 0.5, 0.9)])
    sel = epibias.select_k(series, 2, 6)
    assert sel["k"] == 3
    truth = [0] * 4 + [1] * 4 + [2] * 4
    assert epibias.adjusted_rand_index(sel["best"]["assignment"], truth) == 1.0


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        epibias.simulate(ns=2)


def test_command_line_entry(tmp_path):
    assert epibias.run_command(["simulate", "--ns", "5", "--nt", "4", "-o", str(tmp_path)]) == 0
    assert (tmp_path / "truth.json").exists()
    assert epibias.run_command(["simulate", "--no-such-flag"]) == 64
