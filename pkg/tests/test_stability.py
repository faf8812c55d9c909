import json
import math

import numpy as np
import pytest

from conftest import gaussian2, kolmogorov_covariance
from kolmodens.errors import CalibrationError
from kolmodens.fields import build_field, make_perturbation
from kolmodens.model import NormSampling, PerturbationPair, PhasePoint
from kolmodens.parametrix import ConvolutionScheme, lemma1_bound, parametrix_series
from kolmodens.simulate import GridSpec
from kolmodens.stability import (
    MCConfig,
    calibrate_proxy_constants,
    cross_validate,
    density_difference,
    lemma1_constant_fit,
    stability_ratio,
    stability_report,
)

START = PhasePoint([0.2], [0.0])
GRID = GridSpec.centered((0.2, 0.2), (1.8, 1.1), 7, 7)
SAMPLING = NormSampling(n_pairs=600, resolution=61)
FAST = ConvolutionScheme(time_nodes=4, space_nodes=5)


def base_field(drift=0.0):
    return build_field(1, {"family": "constant", "value": 1.0},
                       {"family": "constant", "value": drift})


class TestDensityDifference:
    def test_zero_perturbation_cancels_exactly(self):
        # a zero drift bump leaves every evaluation path identical
        pair = make_perturbation(base_field(), "drift-bump", 0.0)
        dg = density_difference(pair, 1.0, START, GRID, "series", order=2, scheme=FAST)
        assert dg.diff.max() == 0.0

    def test_zero_sigma_bump_within_quadrature_noise(self):
        # the zero sigma bump makes the perturbed field take the quadrature
        # covariance route while the constant base uses the closed form, so
        # cancellation is exact only up to roundoff of that rule
        pair = make_perturbation(base_field(), "sigma-bump", 0.0)
        dg = density_difference(pair, 1.0, START, GRID, "series", order=2, scheme=FAST)
        assert dg.diff.max() < 1e-13

    def test_zero_perturbation_cancels_exactly_mc(self):
        pair = make_perturbation(base_field(), "drift-bump", 0.0)
        dg = density_difference(pair, 1.0, START, GRID, "monte-carlo",
                                mc=MCConfig(n_paths=4000, n_steps=40))
        assert dg.diff.max() == 0.0
        assert dg.band is not None

    def test_constant_drift_shift_matches_closed_form(self):
        # sigma = 1, b = 0 vs b = eps: two explicit Gaussians; the shared
        # quadrature nodes cancel the discretization bias, leaving only the
        # eps^3 truncation difference of the rank-2 series
        eps = 0.05
        pair = PerturbationPair(base_field(0.0), base_field(eps), eps)
        t = 1.0
        dg = density_difference(pair, t, START, GRID, "series", order=2,
                                scheme=ConvolutionScheme())
        nodes = GRID.nodes()
        mean0 = np.array([START.x[0], START.y[0] + START.x[0] * t])
        shift = np.array([eps * t, 0.5 * eps * t * t])
        cov = kolmogorov_covariance(t)
        oracle = np.abs(gaussian2(nodes, mean0, cov)
                        - gaussian2(nodes, mean0 + shift, cov)).reshape(GRID.n_x, GRID.n_y)
        assert np.max(np.abs(dg.diff - oracle)) < 1e-4

    def test_series_and_mc_agree_within_bands(self):
        eps = 0.3  # a visible perturbation so the MC noise does not dominate
        pair = make_perturbation(base_field(), "sigma-shift", eps)
        dg_s = density_difference(pair, 1.0, START, GRID, "series", order=2, scheme=FAST)
        dg_m = density_difference(pair, 1.0, START, GRID, "monte-carlo",
                                  mc=MCConfig(n_paths=60_000, n_steps=150))
        bulk = dg_s.p_base > 0.05 * dg_s.p_base.max()
        band = 3.0 * dg_m.band + 2e-3
        agree = np.abs(dg_s.diff - dg_m.diff)[bulk] <= band[bulk]
        assert float(np.mean(agree)) >= 0.9

    def test_unknown_method_rejected(self):
        pair = make_perturbation(base_field(), "sigma-shift", 0.1)
        with pytest.raises(ValueError):
            density_difference(pair, 1.0, START, GRID, "quadrature")


class TestStabilityRatio:
    def test_single_pair_report(self):
        pair = make_perturbation(base_field(), "drift-bump", 0.05)
        rep = stability_ratio(pair, 1.0, START, GRID, method="series", c_used=0.5,
                              sampling=SAMPLING, order=2, scheme=FAST)
        assert np.isfinite(rep.ratio).all()
        assert rep.C_empirical == pytest.approx(rep.ratio.max())
        assert rep.C_empirical > 0.0

    def test_rejects_zero_delta(self):
        fld = base_field()
        pair = PerturbationPair(fld, fld, 0.0)
        with pytest.raises(ValueError):
            stability_ratio(pair, 1.0, START, GRID, sampling=SAMPLING, scheme=FAST)

    def test_swap_symmetry(self):
        pair = make_perturbation(base_field(), "sigma-shift", 0.08)
        a = stability_ratio(pair, 1.0, START, GRID, method="series", sampling=SAMPLING,
                            order=2, scheme=FAST)
        b = stability_ratio(pair.swapped(), 1.0, START, GRID, method="series",
                            sampling=SAMPLING, order=2, scheme=FAST)
        assert np.array_equal(a.diff, b.diff)
        assert a.norms.delta_total == pytest.approx(b.norms.delta_total, rel=1e-12)
        assert a.C_empirical == pytest.approx(b.C_empirical, rel=1e-12)

    def test_sweep_constancy_and_slope(self):
        rep = stability_report(base_field(), "drift-bump", [0.02, 0.05, 0.1], 1.0,
                               START, GRID, method="series", sampling=SAMPLING,
                               order=2, scheme=FAST)
        cs = [c for _, c in rep.epsilon_sweep]
        assert (max(cs) - min(cs)) / np.mean(cs) < 0.15
        assert 0.9 <= rep.slope <= 1.1

    def test_q_dependence_both_finite(self):
        for fam, q in (("drift-bump", math.inf), ("drift-bump-lq", 9.0)):
            rep = stability_report(base_field(), fam, [0.05], 1.0, START, GRID,
                                   method="series", q=q, sampling=SAMPLING,
                                   order=2, scheme=FAST)
            assert np.isfinite(rep.C_empirical)
            assert rep.C_empirical > 0.0

    def test_method_robustness_series_vs_mc(self):
        eps = 0.2
        kwargs = dict(t=1.0, start=START, grid=GRID, sampling=SAMPLING, c_used=0.5)
        rep_s = stability_report(base_field(), "sigma-shift", [eps], method="series",
                                 order=2, scheme=FAST, **kwargs)
        rep_m = stability_report(base_field(), "sigma-shift", [eps], method="monte-carlo",
                                 mc=MCConfig(n_paths=80_000, n_steps=150), **kwargs)
        ratio = rep_s.C_empirical / rep_m.C_empirical
        assert 0.5 <= ratio <= 2.0


class TestCalibration:
    def test_constant_field_admits_large_c(self):
        c, big = calibrate_proxy_constants(base_field(), [0.5, 1.0], GRID, START,
                                           scheme=FAST, order=1)
        assert c >= 0.8
        assert big < 10.0

    def test_holder_field_small_kappa(self):
        fld = build_field(1, {"family": "trig-holder", "base": 1.0, "amplitude": 0.15,
                              "freq": 1.0})
        c, big = calibrate_proxy_constants(fld, [0.25, 1.0], GRID, START,
                                           scheme=FAST, order=1)
        assert big < 10.0

    def test_envelope_constant_grows_with_drift_bound(self):
        cs = []
        for k1 in (0.5, 1.0, 2.0):
            fld = build_field(1, {"family": "constant", "value": 1.0},
                              {"family": "constant", "value": k1})
            battery = []
            for t in (0.5, 1.0):
                res = parametrix_series(fld, t, START, PhasePoint([0.4], [0.25]), 2, FAST)
                battery.append((t, START, PhasePoint([0.4], [0.25]), res))
            cs.append(lemma1_constant_fit(battery, fld.gamma, proxy_c=0.5))
        assert cs[0] <= cs[1] <= cs[2]

    def test_fitted_constant_covers_all_ranks(self):
        fld = build_field(1, {"family": "trig-holder", "base": 1.0, "amplitude": 0.2,
                              "freq": 0.7}, {"family": "constant", "value": 0.4})
        battery = []
        for t in (0.25, 1.0):
            tgt = PhasePoint([0.35], [0.2])
            battery.append((t, START, tgt, parametrix_series(fld, t, START, tgt, 2, FAST)))
        c_fit = lemma1_constant_fit(battery, fld.gamma)
        for t, _, _, res in battery:
            for r, term in enumerate(res.terms):
                assert abs(term) <= lemma1_bound(r, t, fld.gamma, c_fit) * (1.0 + 1e-9)

    def test_impossible_battery_raises(self):
        # a grid far outside the bulk makes the ratio p / p_hat explode
        far = GridSpec.centered((80.0, 80.0), (1.0, 1.0), 3, 3)
        with pytest.raises(CalibrationError):
            calibrate_proxy_constants(base_field(), [1.0], far, START,
                                      scheme=FAST, order=0)


class TestCrossValidation:
    def test_series_vs_mc_on_the_bulk(self):
        fld = build_field(1, {"family": "trig-holder", "base": 1.0, "amplitude": 0.2,
                              "freq": 0.7}, {"family": "constant", "value": 0.3})
        grid = GridSpec.centered((0.5, 0.35), (2.2, 1.3), 9, 9)
        cv = cross_validate(fld, START, 1.0, grid, order=2, scheme=FAST,
                            mc=MCConfig(n_paths=50_000, n_steps=150))
        assert cv.agreement_fraction >= 0.9


class TestReportSerialization:
    def test_json_and_csv_roundtrip(self, tmp_path):
        rep = stability_report(base_field(), "drift-bump", [0.05], 1.0, START, GRID,
                               method="series", sampling=SAMPLING, order=1, scheme=FAST)
        jpath = tmp_path / "report.json"
        rep.to_json(jpath)
        blob = json.loads(jpath.read_text())
        assert blob["schema_version"] == 1
        assert blob["family"] == "drift-bump"
        assert blob["norms"]["delta_total"] > 0
        assert len(blob["epsilon_sweep"]) == 1

        cpath = tmp_path / "report.csv"
        rep.to_csv(cpath)
        lines = cpath.read_text().splitlines()
        assert lines[0] == "t,x,y,p_base,p_pert,diff,proxy,ratio"
        assert len(lines) == 1 + GRID.n_x * GRID.n_y
