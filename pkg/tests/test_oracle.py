import numpy as np
import pytest

from crossed_lmm import (
    DenseDesign,
    SingularCovarianceError,
    TooLargeError,
    build_profile,
    dense_covariance,
    dense_gls,
    efficiency_lower_bounds,
    exact_efficiency,
    naive_u_statistics,
    single_factor_covariance,
)
from crossed_lmm.model import VarianceComponents
from conftest import random_records, rel


def vc_of(a, b, e):
    return VarianceComponents.from_raw(a, b, e, 1e-12)


class TestDenseCovariance:
    def test_noise_only_is_identity(self, rng):
        design = DenseDesign.from_arrays(*random_records(rng, r_max=8, c_max=8)[:4])
        v = dense_covariance(design, vc_of(0, 0, 1.0))
        np.testing.assert_allclose(v, np.eye(design.n))

    def test_two_records_sharing_a_row(self):
        design = DenseDesign.from_arrays(
            np.array([0, 0]), np.array([0, 1]), np.ones((2, 1)), np.zeros(2)
        )
        v = dense_covariance(design, vc_of(2.0, 0.5, 1.0))
        np.testing.assert_allclose(v, [[3.5, 2.0], [2.0, 3.5]])

    def test_random_design_psd(self, rng):
        design = DenseDesign.from_arrays(*random_records(rng, r_max=10, c_max=10)[:4])
        v = dense_covariance(design, vc_of(1.3, 0.4, 0.6))
        np.testing.assert_allclose(v, v.T)
        assert np.linalg.eigvalsh(v).min() > 0

    def test_column_ordering_consistency(self, rng):
        # the column-ordered covariance is the permuted row-ordered one
        ri, ci, x, y = random_records(rng, r_max=8, c_max=8)[:4]
        design = DenseDesign.from_arrays(ri, ci, x, y)
        vc = vc_of(1.0, 0.7, 0.5)
        v_row = dense_covariance(design, vc)
        col_order = np.argsort(design.col_idx, kind="stable")
        design_c = DenseDesign.from_arrays(
            design.row_idx[col_order], design.col_idx[col_order],
            design.x[col_order], design.y[col_order],
        )
        # rebuilt "column-first" design must satisfy V_C = P' V_R P
        v_col = dense_covariance(
            DenseDesign.from_arrays(design.row_idx, design.col_idx, design.x, design.y),
            vc,
        )
        p = design.perm
        v_c_expected = p.T @ v_row @ p
        # direct assembly in column ordering
        n = design.n
        a_c = design.row_groups[col_order] @ design.row_groups[col_order].T
        b_c = design.col_groups[col_order] @ design.col_groups[col_order].T
        v_c_direct = vc.sigma2_e * np.eye(n) + vc.sigma2_a * a_c + vc.sigma2_b * b_c
        np.testing.assert_allclose(v_c_expected, v_c_direct, atol=1e-12)
        assert design_c.n == n

    def test_size_guard(self):
        n = 5001
        with pytest.raises(TooLargeError):
            DenseDesign.from_arrays(
                np.zeros(n, dtype=int), np.arange(n), np.ones((n, 1)), np.zeros(n)
            )


class TestDenseGls:
    def test_identity_weight_is_ols(self, rng):
        ri, ci, x, y = random_records(rng, r_max=8, c_max=8)[:4]
        design = DenseDesign.from_arrays(ri, ci, x, y)
        beta, _ = dense_gls(design.x, design.y, np.eye(design.n))
        expected = np.linalg.lstsq(design.x, design.y, rcond=None)[0]
        assert rel(beta, expected) < 1e-10

    def test_scaled_identity_same_beta_scaled_cov(self, rng):
        ri, ci, x, y = random_records(rng, r_max=8, c_max=8)[:4]
        design = DenseDesign.from_arrays(ri, ci, x, y)
        b1, c1 = dense_gls(design.x, design.y, np.eye(design.n))
        b2, c2 = dense_gls(design.x, design.y, 4.0 * np.eye(design.n))
        assert rel(b1, b2) < 1e-12
        assert rel(c2, 4.0 * c1) < 1e-12

    def test_residual_orthogonality(self, rng):
        ri, ci, x, y = random_records(rng, r_max=10, c_max=10)[:4]
        design = DenseDesign.from_arrays(ri, ci, x, y)
        v = dense_covariance(design, vc_of(0.8, 0.3, 1.2))
        beta, _ = dense_gls(design.x, design.y, v)
        resid = design.y - design.x @ beta
        score = design.x.T @ np.linalg.solve(v, resid)
        assert np.abs(score).max() < 1e-9 * (1 + np.abs(design.y).max())

    def test_singular_covariance(self):
        x = np.ones((3, 1))
        with pytest.raises(SingularCovarianceError):
            dense_gls(x, np.zeros(3), np.zeros((3, 3)))


class TestNaiveU:
    def test_three_record_case(self):
        records = (
            np.array([0, 0, 1]),
            np.array([0, 1, 0]),
            np.ones((3, 1)),
            np.array([1.0, 3.0, 5.0]),
        )
        u = naive_u_statistics(records, np.zeros(1))
        assert (u.u_a, u.u_b, u.u_e) == (2.0, 8.0, 8.0)

    def test_constant_residuals(self):
        records = (
            np.array([0, 1, 1]),
            np.array([0, 0, 1]),
            np.ones((3, 1)),
            np.full(3, 2.5),
        )
        u = naive_u_statistics(records, np.array([2.5]))
        assert u.u_a == 0.0 and u.u_b == 0.0 and u.u_e == 0.0


class TestExactEfficiency:
    def single_predictor_instance(self, rng, r_max=12, c_max=12):
        ri, ci, _, _ = random_records(rng, r_max=r_max, c_max=c_max)[:4]
        n = ri.shape[0]
        x = rng.standard_normal(n)
        design = DenseDesign.from_arrays(ri, ci, x.reshape(-1, 1), np.zeros(n))
        return design, x, ri, ci

    def test_no_column_effect_is_fully_efficient(self, rng):
        design, x, _, _ = self.single_predictor_instance(rng)
        eff_rls, _ = exact_efficiency(x[np.argsort(design.row_idx, kind="stable")],
                                      vc_of(1.5, 0.0, 1.0), design)
        assert eff_rls == pytest.approx(1.0, abs=1e-10)

    def test_efficiencies_in_unit_interval(self, rng):
        for _ in range(10):
            design, _, _, _ = self.single_predictor_instance(rng)
            x = design.x[:, 0]
            vc = vc_of(rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0.2, 2))
            er, ec = exact_efficiency(x, vc, design)
            assert 0 < er <= 1 + 1e-12
            assert 0 < ec <= 1 + 1e-12

    def test_dominates_lower_bound(self, rng):
        for _ in range(20):
            design, _, ri, ci = self.single_predictor_instance(rng)
            x = design.x[:, 0]
            vc = vc_of(rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0.2, 2))
            prof = build_profile(
                np.bincount(ri), np.bincount(ci)
            )
            er, ec = exact_efficiency(x, vc, design)
            lo_r, lo_c = efficiency_lower_bounds(vc, prof)
            assert er >= lo_r - 1e-9
            assert ec >= lo_c - 1e-9

    def test_rejects_multi_predictor_shapes(self, rng):
        design, x, _, _ = self.single_predictor_instance(rng)
        with pytest.raises(ValueError):
            exact_efficiency(np.ones((design.n, 2)).ravel(), vc_of(1, 1, 1), design)


def test_single_factor_covariance_blocks():
    design = DenseDesign.from_arrays(
        np.array([0, 0, 1]), np.array([0, 1, 0]), np.ones((3, 1)), np.zeros(3)
    )
    va = single_factor_covariance(design, "row", vc_of(2.0, 9.0, 1.0))
    np.testing.assert_allclose(va, [[3.0, 2.0, 0.0], [2.0, 3.0, 0.0], [0.0, 0.0, 3.0]])
    vb = single_factor_covariance(design, "col", vc_of(9.0, 0.5, 1.0))
    np.testing.assert_allclose(vb, [[1.5, 0.0, 0.5], [0.0, 1.5, 0.0], [0.5, 0.0, 1.5]])
