import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odflow.nmf import (NmfModel, beta_divergence, beta_divergence_total,
                        load_model, nmf_fit, nmf_inverse, nmf_transform,
                        save_model)


class TestBetaDivergence:
    @settings(max_examples=50, deadline=None)
    @given(x=st.floats(1e-6, 1e6), beta=st.floats(-2, 4))
    def test_zero_at_equality(self, x, beta):
        assert beta_divergence(x, x, beta) == pytest.approx(0.0, abs=1e-9)

    def test_euclidean_case(self):
        # beta=2 reduces to squared distance over two
        assert beta_divergence(3.0, 1.0, 2.0) == pytest.approx(2.0, abs=1e-12)

    def test_kl_case(self):
        assert beta_divergence(2.0, 1.0, 1.0) == pytest.approx(2 * math.log(2) - 1, abs=1e-12)

    def test_itakura_saito_case(self):
        assert beta_divergence(2.0, 1.0, 0.0) == pytest.approx(1 - math.log(2), abs=1e-12)

    def test_kl_zero_x_limit(self):
        # x log(x/y) -> 0, so d_1(0 | y) = y
        assert beta_divergence(0.0, 0.5, 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_is_zero_x_errors(self):
        with pytest.raises(ValueError):
            beta_divergence(0.0, 1.0, 0.0)

    def test_invalid_y(self):
        with pytest.raises(ValueError):
            beta_divergence(1.0, 0.0, 1.0)

    @settings(max_examples=50, deadline=None)
    @given(x=st.floats(0.01, 100), y=st.floats(0.01, 100), beta=st.floats(-1, 3))
    def test_non_negative(self, x, y, beta):
        assert beta_divergence(x, y, beta) >= -1e-10

    def test_matrix_form_sums(self):
        v = np.array([[1.0, 2.0], [3.0, 4.0]])
        w = np.array([[1.5, 1.0], [2.0, 5.0]])
        total = beta_divergence_total(v, w, 2.0)
        expect = sum(beta_divergence(float(a), float(b), 2.0)
                     for a, b in zip(v.ravel(), w.ravel()))
        assert total == pytest.approx(expect, rel=1e-12)


class TestFit:
    def test_rank1_exact_recovery(self):
        rng = np.random.default_rng(0)
        c = rng.uniform(0.5, 2.0, size=(30, 1))
        b = rng.uniform(0.5, 2.0, size=(1, 12))
        v = c @ b
        model = nmf_fit(v, 1, beta=2.0, max_iters=2000, tol=1e-12, seed=1)
        assert model.divergence_trace[-1] < 1e-8 * np.linalg.norm(v)
        np.testing.assert_allclose(model.coefficients @ model.basis, v, rtol=1e-4)

    @pytest.mark.parametrize("beta", [1.0, 2.0])
    def test_trace_non_increasing(self, beta):
        rng = np.random.default_rng(3)
        v = rng.uniform(0.0, 5.0, size=(20, 15))
        model = nmf_fit(v, 4, beta=beta, max_iters=200, seed=2)
        trace = model.divergence_trace
        assert model.monotone
        for prev, cur in zip(trace, trace[1:]):
            assert cur <= prev * (1 + 1e-9) + 1e-12

    def test_non_negativity_preserved(self):
        rng = np.random.default_rng(4)
        v = rng.uniform(0.0, 3.0, size=(25, 10))
        model = nmf_fit(v, 3, beta=1.0, seed=0)
        assert np.all(model.basis >= 0)
        assert np.all(model.coefficients >= 0)

    def test_determinism(self):
        rng = np.random.default_rng(5)
        v = rng.uniform(0.0, 3.0, size=(15, 8))
        a = nmf_fit(v, 2, beta=1.0, seed=9)
        b = nmf_fit(v, 2, beta=1.0, seed=9)
        assert np.array_equal(a.basis, b.basis)
        assert np.array_equal(a.coefficients, b.coefficients)
        assert a.divergence_trace == b.divergence_trace

    def test_compression_flag(self):
        rng = np.random.default_rng(6)
        big = rng.uniform(0.1, 1.0, size=(200, 100))
        small_m = nmf_fit(big, 2, beta=2.0, max_iters=5, seed=0)
        assert small_m.compression_ok
        tall = rng.uniform(0.1, 1.0, size=(12, 10))
        big_m = nmf_fit(tall, 9, beta=2.0, max_iters=5, seed=0)
        assert not big_m.compression_ok

    def test_errors(self):
        v = np.zeros((5, 5))
        with pytest.raises(ValueError):
            nmf_fit(v, 2)
        v = np.ones((5, 5))
        with pytest.raises(ValueError):
            nmf_fit(v, 6)
        with pytest.raises(ValueError):
            nmf_fit(v, 0)
        with pytest.raises(ValueError):
            nmf_fit(-v, 2)
        mixed = np.ones((5, 5))
        mixed[0, 0] = 0.0
        with pytest.raises(ValueError):
            nmf_fit(mixed, 2, beta=0.0)

    def test_is_beta_on_positive_data(self):
        rng = np.random.default_rng(7)
        v = rng.uniform(0.5, 4.0, size=(12, 9))
        model = nmf_fit(v, 3, beta=0.0, max_iters=150, seed=1)
        assert np.all(model.basis >= 0)
        assert model.divergence_trace[-1] <= model.divergence_trace[0]


class TestTransform:
    def test_refit_consistency_on_training_rows(self):
        rng = np.random.default_rng(10)
        c = rng.uniform(0.5, 2.0, size=(40, 2))
        b = rng.uniform(0.5, 2.0, size=(2, 12))
        v = c @ b
        model = nmf_fit(v, 2, beta=2.0, max_iters=4000, tol=1e-13, seed=3)
        rows = nmf_transform(model, v[5:8], max_iters=4000, tol=1e-13, seed=4)
        recon_fit = nmf_inverse(model, model.coefficients[5:8])
        recon_new = nmf_inverse(model, rows)
        np.testing.assert_allclose(recon_new, recon_fit, rtol=1e-3, atol=1e-6)

    def test_zero_row_converges_to_zero(self):
        rng = np.random.default_rng(11)
        v = rng.uniform(0.5, 2.0, size=(20, 8))
        model = nmf_fit(v, 2, beta=2.0, seed=0)
        row = nmf_transform(model, np.zeros((1, 8)), seed=1)
        assert np.all(row <= 1e-12)

    def test_recovers_known_coefficients(self):
        rng = np.random.default_rng(12)
        basis = rng.uniform(0.5, 2.0, size=(2, 10))
        model = NmfModel(basis=basis, coefficients=np.zeros((1, 2)), beta=2.0,
                         n_components=2, iterations_run=0)
        c_true = np.array([[1.5, 0.25]])
        rows = nmf_transform(model, c_true @ basis, max_iters=5000, tol=1e-14, seed=5)
        np.testing.assert_allclose(rows, c_true, rtol=1e-4)

    def test_column_mismatch(self):
        rng = np.random.default_rng(13)
        v = rng.uniform(0.5, 2.0, size=(10, 6))
        model = nmf_fit(v, 2, seed=0)
        with pytest.raises(ValueError):
            nmf_transform(model, np.ones((2, 5)))


class TestInverse:
    def _model(self):
        basis = np.arange(12, dtype=np.float64).reshape(3, 4) + 1.0
        return NmfModel(basis=basis, coefficients=np.zeros((1, 3)), beta=2.0,
                        n_components=3, iterations_run=0)

    def test_zero_coefficients(self):
        model = self._model()
        np.testing.assert_array_equal(nmf_inverse(model, np.zeros(3)), np.zeros(4))

    def test_one_hot_selects_basis_row(self):
        model = self._model()
        e1 = np.array([0.0, 1.0, 0.0])
        np.testing.assert_array_equal(nmf_inverse(model, e1), model.basis[1])

    def test_matches_naive_triple_loop(self):
        rng = np.random.default_rng(14)
        model = self._model()
        rows = rng.uniform(0, 2, size=(5, 3))
        got = nmf_inverse(model, rows)
        expect = np.zeros((5, 4))
        for i in range(5):
            for j in range(4):
                for k in range(3):
                    expect[i, j] += rows[i, k] * model.basis[k, j]
        np.testing.assert_allclose(got, expect, rtol=1e-12)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            nmf_inverse(self._model(), np.ones(2))


def test_roundtrip_reconstruction_property():
    # transforming training rows then inverting should not be much worse
    # than the fit-time reconstruction
    rng = np.random.default_rng(15)
    v = rng.uniform(0.0, 6.0, size=(30, 12))
    model = nmf_fit(v, 3, beta=1.0, max_iters=400, seed=6)
    fit_err = float(np.abs(model.coefficients @ model.basis - v).mean())
    rows = nmf_transform(model, v, max_iters=400, seed=7)
    rt_err = float(np.abs(rows @ model.basis - v).mean())
    assert rt_err <= fit_err * 1.10 + 1e-9


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(16)
    v = rng.uniform(0.0, 4.0, size=(18, 9))
    model = nmf_fit(v, 3, beta=1.0, seed=8)
    save_model(model, tmp_path / "nmf")
    back = load_model(tmp_path / "nmf")
    np.testing.assert_array_equal(back.basis, model.basis)
    np.testing.assert_array_equal(back.coefficients, model.coefficients)
    assert back.beta == model.beta
    assert back.divergence_trace == model.divergence_trace
