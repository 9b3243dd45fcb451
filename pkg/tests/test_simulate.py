"""Seeded generators: reproducibility, stationarity constraints, truth paths."""

import numpy as np
import pytest

from covcast.errors import ConfigError, DataError
from covcast.simulate import (
    _intercept_matrix,
    default_fmsv_params,
    gen_dgp1,
    gen_dgp2,
    gen_fmsv,
    generate,
    standardized_student_t,
)


class TestStandardizedStudentT:
    def test_unit_variance_at_moderate_df(self):
        gen = np.random.default_rng(0)
        draws = standardized_student_t(30.0, 200_000, gen)
        assert np.var(draws) == pytest.approx(1.0, abs=0.02)

    def test_heavy_tail_draws_finite(self):
        gen = np.random.default_rng(1)
        draws = standardized_student_t(3.0, 50_000, gen)
        assert np.all(np.isfinite(draws))
        assert abs(np.median(draws)) < 0.02

    def test_df_guard(self):
        with pytest.raises(DataError, match="df > 2"):
            standardized_student_t(2.0, 10, np.random.default_rng(0))


class TestInterceptMatrix:
    def test_spectrum_floor_and_symmetry(self):
        for seed in range(20):
            gamma = _intercept_matrix(10, np.random.default_rng(seed))
            assert np.array_equal(gamma, gamma.T)
            assert np.linalg.eigvalsh(gamma)[0] > 0.01


class TestDgp1:
    def test_deterministic_given_seed(self):
        a = gen_dgp1(5, 50, 123)
        b = gen_dgp1(5, 50, 123)
        assert np.array_equal(a.returns, b.returns)
        assert np.array_equal(a.true_cov, b.true_cov)
        c = gen_dgp1(5, 50, 124)
        assert not np.array_equal(a.returns, c.returns)

    def test_shapes_and_metadata(self):
        sim = gen_dgp1(4, 60, 0)
        assert sim.returns.shape == (60, 4)
        assert sim.true_cov.shape == (60, 4, 4)
        assert sim.dgp == "dgp1"
        assert sim.seed == 0
        assert sim.rng["bit_generator"] == "PCG64"

    def test_truth_path_positive_definite(self):
        sim = gen_dgp1(6, 100, 5)
        assert np.all(np.linalg.eigvalsh(sim.true_cov)[:, 0] > 0.0)

    def test_panel_labels(self):
        panel = gen_dgp1(3, 40, 1).to_panel()
        assert panel.dates[0] == "t000001"
        assert panel.assets == ["a001", "a002", "a003"]
        assert panel.n_obs == 40


class TestDgp2:
    def test_truth_decomposition(self):
        sim = gen_dgp2(5, 80, 2)
        lam_path = sim.aux["factor_variances"]
        assert lam_path.shape == (80, 2)
        assert np.all(lam_path > 0.0)
        assert np.all(np.linalg.eigvalsh(sim.true_cov)[:, 0] > 0.0)
        # Covariances move only through the factor variances: differences of
        # consecutive truths have rank at most the factor count.
        delta = sim.true_cov[1] - sim.true_cov[0]
        s = np.linalg.svd(delta, compute_uv=False)
        assert s[2] < 1e-12 * s[0]

    def test_deterministic_given_seed(self):
        a = gen_dgp2(4, 30, 7)
        b = gen_dgp2(4, 30, 7)
        assert np.array_equal(a.returns, b.returns)


class TestFmsvGenerator:
    def test_truth_matches_factor_structure(self):
        params = default_fmsv_params(6, 2, 3)
        sim = gen_fmsv(6, 50, 3, params)
        lam = params["loadings"]
        idio = np.diag(params["idio_var"])
        h = sim.aux["log_vols"]
        assert h.shape == (50, 2)
        expected = np.einsum("ij,tj,kj->tik", lam, np.exp(h), lam) + idio
        assert np.max(np.abs(sim.true_cov - expected)) < 1e-10
        assert sim.aux["factors"].shape == (50, 2)

    def test_unstable_transition_rejected(self):
        params = default_fmsv_params(4, 1, 0)
        params["phi"] = np.array([[1.01]])
        with pytest.raises(DataError, match="strictly stable"):
            gen_fmsv(4, 20, 0, params)

    def test_loading_shape_guard(self):
        params = default_fmsv_params(4, 1, 0)
        with pytest.raises(DataError, match="dimension"):
            gen_fmsv(5, 20, 0, params)


class TestDispatch:
    def test_known_designs(self):
        for name in ("dgp1", "dgp2", "fmsv"):
            sim = generate(name, 3, 30, 0)
            assert sim.dgp == name
            assert sim.returns.shape == (30, 3)

    def test_unknown_design(self):
        with pytest.raises(ConfigError, match="unknown simulation design"):
            generate("dgp9", 3, 30, 0)
