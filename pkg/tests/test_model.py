import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kolmodens.errors import EvaluationError
from kolmodens.fields import build_field, make_perturbation
from kolmodens.model import (
    CoefficientField,
    NormSampling,
    PerturbationPair,
    PhasePoint,
    diffusion_matrix,
    holder_seminorm_estimate,
    lq_norm_estimate,
    perturbation_norms,
    verify_assumptions,
)


def const_field(value=1.0, drift=0.0, d=1, **kw):
    return build_field(d, {"family": "constant", "value": value},
                       {"family": "constant", "value": drift}, **kw)


class TestPhasePoint:
    def test_basic(self):
        p = PhasePoint([1.0, 2.0], [3.0, 4.0])
        assert p.d == 2
        assert np.array_equal(p.vector, [1.0, 2.0, 3.0, 4.0])
        assert PhasePoint.from_vector(p.vector) == p or np.array_equal(
            PhasePoint.from_vector(p.vector).vector, p.vector
        )

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError):
            PhasePoint([1.0], [1.0, 2.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            PhasePoint([np.inf], [0.0])


class TestDiffusionMatrix:
    def test_identity_sigma(self):
        fld = const_field(1.0)
        a = diffusion_matrix(fld, PhasePoint([0.3], [-2.0]))
        assert np.allclose(a, np.eye(1))

    def test_scalar_square(self):
        fld = const_field(2.0)
        a = diffusion_matrix(fld, PhasePoint([1.0], [1.0]))
        assert a[0, 0] == pytest.approx(4.0)

    def test_matches_brute_force_product(self, rng):
        # d = 2 with a dense random sigma matrix, fixed seed
        mat = rng.normal(size=(2, 2)) + 3.0 * np.eye(2)

        def sigma(p):
            p = np.asarray(p)
            return np.broadcast_to(mat, p.shape[:-1] + (2, 2)).copy()

        def b(p):
            p = np.asarray(p)
            return np.zeros(p.shape[:-1] + (2,))

        fld = CoefficientField(d=2, b=b, sigma=sigma, k2=10.0, lam=100.0)
        a = diffusion_matrix(fld, PhasePoint([0.1, 0.2], [0.3, 0.4]))
        brute = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    brute[i, j] += mat[i, k] * mat[j, k]
        assert np.allclose(a, brute, rtol=1e-14)

    def test_bitwise_symmetry(self, rng):
        mat = rng.normal(size=(3, 3))

        def sigma(p):
            p = np.asarray(p)
            return np.broadcast_to(mat, p.shape[:-1] + (3, 3)).copy()

        fld = CoefficientField(d=3, b=lambda p: np.zeros(np.asarray(p).shape[:-1] + (3,)),
                               sigma=sigma, k2=10.0, lam=100.0)
        a = diffusion_matrix(fld, PhasePoint([0.0] * 3, [0.0] * 3))
        assert np.array_equal(a, a.T)

    def test_non_finite_sigma_reported(self):
        def sigma(p):
            p = np.asarray(p)
            out = np.ones(p.shape[:-1] + (1, 1))
            return out * np.where(p[..., :1, None] > 0.5, np.nan, 1.0)

        fld = CoefficientField(d=1, b=lambda p: np.zeros(np.asarray(p).shape[:-1] + (1,)),
                               sigma=sigma)
        with pytest.raises(EvaluationError):
            diffusion_matrix(fld, PhasePoint([1.0], [0.0]))


class TestVerifyAssumptions:
    def test_constants_pass(self):
        fld = build_field(1, {"family": "constant", "value": 1.0}, {"family": "zero"},
                          k1=1.0, k2=2.0, lam=1.0)
        rep = verify_assumptions(fld, 500, 5.0, seed=0)
        assert rep.all_passed
        assert "refute" in rep.note

    def test_unbounded_linear_drift_fails(self):
        def b(p):
            p = np.asarray(p)
            return p[..., :1]

        fld = CoefficientField(d=1, b=b, sigma=lambda p: np.ones(np.asarray(p).shape[:-1] + (1, 1)),
                               k1=1.0, k2=1.0, lam=1.0)
        rep = verify_assumptions(fld, 500, 5.0, seed=0)
        assert not rep.bounded_drift.passed
        assert rep.bounded_drift.worst_value > 1.0
        # the witness point actually realizes the violation
        assert abs(rep.bounded_drift.worst_point[0]) > 1.0

    def test_ellipticity_violation_found(self):
        fld = build_field(1, {"family": "trig-holder", "base": 2.0, "amplitude": 1.0},
                          lam=2.0)
        rep = verify_assumptions(fld, 2000, 5.0, seed=1)
        assert not rep.elliptic.passed
        # dense-scan oracle: the profile reaches 3, so a = sigma^2 reaches 9 > 2
        xs = np.linspace(-5, 5, 2001)
        pts = np.stack([xs, np.zeros_like(xs)], axis=-1)
        eig_max = np.max(np.linalg.eigvalsh(fld.a(pts)))
        assert eig_max > 2.0
        assert rep.elliptic.worst_value <= eig_max + 1e-9

    def test_sampling_is_deterministic(self):
        fld = const_field(1.0)
        r1 = verify_assumptions(fld, 100, 3.0, seed=9)
        r2 = verify_assumptions(fld, 100, 3.0, seed=9)
        assert np.array_equal(r1.bounded_drift.worst_point, r2.bounded_drift.worst_point)


class TestHolderSeminorm:
    def test_constant_function_zero(self):
        est = holder_seminorm_estimate(lambda p: np.ones(np.asarray(p).shape[:-1]),
                                       0.5, 500, 3.0, seed=0)
        assert est == 0.0

    def test_coordinate_function_approaches_one(self):
        # f(x, y) = x with gamma = 1: quotient |dx| / (|dx| + |dy|) has sup 1
        def f(p):
            return np.asarray(p)[..., 0]

        small = holder_seminorm_estimate(f, 1.0, 50, 3.0, seed=2)
        large = holder_seminorm_estimate(f, 1.0, 20000, 3.0, seed=2)
        assert 0.0 < small <= 1.0 + 1e-12
        assert 0.9 < large <= 1.0 + 1e-12

    def test_monotone_in_n_pairs(self):
        def f(p):
            p = np.asarray(p)
            return np.sin(p[..., 0]) * p[..., 1]

        vals = [holder_seminorm_estimate(f, 0.7, n, 3.0, seed=5) for n in (10, 100, 1000)]
        assert vals[0] <= vals[1] <= vals[2]

    @given(shift=st.floats(-5, 5, allow_nan=False))
    @settings(max_examples=20, deadline=None)
    def test_shift_invariance(self, shift):
        def f(p):
            return np.cos(np.asarray(p)[..., 0])

        def g(p):
            return f(p) + shift

        a = holder_seminorm_estimate(f, 0.5, 300, 2.0, seed=3)
        b = holder_seminorm_estimate(g, 0.5, 300, 2.0, seed=3)
        assert a == pytest.approx(b, rel=1e-12)

    def test_constant_difference(self):
        # f vs f + eps: seminorm of the difference 0, sup norm eps
        eps = 0.25

        def diff(p):
            return np.full(np.asarray(p).shape[:-1], eps)

        assert holder_seminorm_estimate(diff, 0.5, 200, 2.0, seed=0) == 0.0
        assert lq_norm_estimate(diff, math.inf, 2.0, 41) == pytest.approx(eps)


class TestLqNorm:
    def test_zero_function(self):
        for q in (2.0, 5.0, math.inf):
            assert lq_norm_estimate(lambda p: np.zeros(np.asarray(p).shape[:-1]), q, 3.0, 33) == 0.0

    def test_unit_square_indicator(self):
        # cells tile [0,1]^2 exactly for radius 2 and resolution 16
        def f(p):
            p = np.asarray(p)
            inside = (p[..., 0] >= 0) & (p[..., 0] <= 1) & (p[..., 1] >= 0) & (p[..., 1] <= 1)
            return inside.astype(float)

        assert lq_norm_estimate(f, 2.0, 2.0, 16) == pytest.approx(1.0, abs=1e-12)

    def test_gaussian_bump_l2(self):
        def f(p):
            p = np.asarray(p)
            return np.exp(-p[..., 0] ** 2 - p[..., 1] ** 2)

        est = lq_norm_estimate(f, 2.0, 6.0, 301)
        # oracle: (int e^{-2x^2} dx)^2 = pi/2, computed by fine trapezoid
        xs = np.linspace(-6, 6, 20001)
        one_d = np.trapezoid(np.exp(-2 * xs**2), xs)
        assert est == pytest.approx(math.sqrt(one_d**2), rel=2e-3)
        assert est == pytest.approx(math.sqrt(math.pi / 2.0), rel=2e-3)

    def test_rejects_bad_q(self):
        with pytest.raises(ValueError):
            lq_norm_estimate(lambda p: np.zeros(np.asarray(p).shape[:-1]), 1.0, 2.0, 11)

    def test_sup_dominates_for_small_box(self):
        # box volume (2r)^2 <= 1 makes every finite-q estimate <= the sup
        def f(p):
            p = np.asarray(p)
            return 1.0 + np.sin(3 * p[..., 0]) * np.cos(p[..., 1])

        sup = lq_norm_estimate(f, math.inf, 0.5, 51)
        for q in (2.0, 4.0, 16.0):
            assert lq_norm_estimate(f, q, 0.5, 51) <= sup + 1e-12


class TestPerturbationNorms:
    def test_identical_pair_is_zero(self):
        fld = const_field(1.0)
        pair = PerturbationPair(fld, fld, 0.0)
        norms = perturbation_norms(pair, NormSampling(n_pairs=200, resolution=41))
        assert norms.delta_sigma_gamma == 0.0
        assert norms.delta_b_q == 0.0
        assert norms.delta_total == 0.0

    def test_constant_sigma_shift(self):
        eps = 0.07
        pair = make_perturbation(const_field(1.0), "sigma-shift", eps)
        norms = perturbation_norms(pair, NormSampling(n_pairs=500, resolution=41))
        assert norms.delta_sigma_gamma == pytest.approx(eps, rel=1e-9)
        assert norms.delta_b_q == 0.0

    def test_drift_bump_sup_norm(self):
        eps = 0.05
        pair = make_perturbation(const_field(1.0), "drift-bump", eps)
        norms = perturbation_norms(pair, NormSampling(n_pairs=500, resolution=201))
        # the bump peaks at the origin; the grid is cell-centered so the peak
        # is sampled up to one half-cell offset
        assert norms.delta_b_q == pytest.approx(eps, rel=5e-3)

    def test_total_dominates_parts_and_swap_symmetry(self):
        base = const_field(1.0, drift=0.2)
        pair = make_perturbation(base, "sigma-bump", 0.08)
        sampling = NormSampling(n_pairs=400, resolution=41)
        n1 = perturbation_norms(pair, sampling)
        n2 = perturbation_norms(pair.swapped(), sampling)
        assert n1.delta_total >= max(n1.delta_sigma_gamma, n1.delta_b_q) >= 0.0
        assert n1.delta_sigma_gamma == pytest.approx(n2.delta_sigma_gamma, rel=1e-12)
        assert n1.delta_b_q == pytest.approx(n2.delta_b_q, rel=1e-12)

    def test_pair_rejects_small_q(self):
        fld = const_field(1.0)
        with pytest.raises(ValueError):
            PerturbationPair(fld, fld, 0.1, q=4.0)
