import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psbalance import (
    FittedPropensity,
    compute_weightset,
    errors,
    parse_scheme,
    selection_g,
    selection_gradient,
    smoothing_coeffs,
    validate_scheme,
    weight_gradient,
    weight_wz,
)
from psbalance.glm import logistic
from psbalance.weights import selection_beta_factor, weight_beta_factor

from conftest import make_dataset

OW = validate_scheme("OW")
MW = validate_scheme("MW")
EW = validate_scheme("EW")
IPW = validate_scheme("IPW")
ATT = validate_scheme("ATT")
ATC = validate_scheme("ATC")

SMOOTH = [IPW, ATT, ATC, OW, MW, EW, validate_scheme("BW", nu=3.5),
          validate_scheme("BW", nu=11.0)]


def fp_from_scores(e):
    e = np.asarray(e, dtype=float)
    return FittedPropensity(coefficients=np.zeros(1), design_spec=(), scores=e,
                            converged=True, iterations=0, score_norm=0.0)


class TestSelectionG:
    def test_ow_peak(self):
        assert selection_g(OW, 0.5) == pytest.approx(0.25)

    def test_entropy_peak(self):
        assert selection_g(EW, 0.5) == pytest.approx(np.log(2.0))

    def test_trim_indicator(self):
        trim = validate_scheme("TRIM", alpha=0.1)
        assert selection_g(trim, 0.05) == 0.0
        assert selection_g(trim, 0.5) == 1.0
        assert selection_g(trim, 0.1) == 1.0
        assert selection_g(trim, 0.9) == 1.0
        assert selection_g(trim, 0.95) == 0.0

    def test_bw2_equals_ow_everywhere(self):
        bw2 = validate_scheme("BW", nu=2.0)
        e = np.linspace(0.0, 1.0, 101)
        np.testing.assert_array_equal(selection_g(bw2, e), selection_g(OW, e))
        np.testing.assert_array_equal(weight_wz(bw2, e, 1), weight_wz(OW, e, 1))
        np.testing.assert_array_equal(weight_wz(bw2, e, 0), weight_wz(OW, e, 0))

    def test_ipw_att_atc(self):
        assert selection_g(IPW, 0.3) == 1.0
        assert selection_g(ATT, 0.3) == pytest.approx(0.3)
        assert selection_g(ATC, 0.3) == pytest.approx(0.7)

    def test_trunc_requires_arm(self):
        trunc = validate_scheme("TRUNC", alpha=0.1)
        with pytest.raises(errors.MissingParam):
            selection_g(trunc, 0.3)
        assert selection_g(trunc, 0.3, z=1) == 1.0
        # below the cap the treated composite is e / alpha
        assert selection_g(trunc, 0.05, z=1) == pytest.approx(0.5)


class TestWeightWz:
    def test_ow_closed_forms(self):
        assert weight_wz(OW, 0.4, 1) == pytest.approx(0.6)
        assert weight_wz(OW, 0.4, 0) == pytest.approx(0.4)

    def test_mw_control(self):
        assert weight_wz(MW, 0.3, 0) == pytest.approx(3.0 / 7.0)
        assert weight_wz(MW, 0.3, 1) == pytest.approx(1.0)

    def test_ipw(self):
        assert weight_wz(IPW, 0.25, 1) == pytest.approx(4.0)

    def test_bw11_at_half(self):
        bw11 = validate_scheme("BW", nu=11.0)
        assert weight_wz(bw11, 0.5, 1) == pytest.approx(2.0 ** -19)

    def test_trunc_caps_both_tails(self):
        trunc = validate_scheme("TRUNC", alpha=0.1)
        # w1 = 1/e capped into [1/(1-alpha), 1/alpha]
        assert weight_wz(trunc, 0.05, 1) == pytest.approx(10.0)
        assert weight_wz(trunc, 0.5, 1) == pytest.approx(2.0)
        assert weight_wz(trunc, 0.95, 1) == pytest.approx(1.0 / 0.9)
        assert weight_wz(trunc, 0.95, 0) == pytest.approx(10.0)
        assert weight_wz(trunc, 0.05, 0) == pytest.approx(1.0 / 0.9)

    def test_general_algebra_matches_closed_forms(self):
        e = np.linspace(0.02, 0.98, 25)
        for scheme in SMOOTH:
            g = selection_g(scheme, e)
            np.testing.assert_allclose(weight_wz(scheme, e, 1), g / e, rtol=1e-12)
            np.testing.assert_allclose(weight_wz(scheme, e, 0), g / (1 - e), rtol=1e-12)

    def test_infinite_weight_raised_not_clipped(self):
        with pytest.raises(errors.InfiniteWeight) as exc:
            weight_wz(IPW, np.array([0.5, 0.0, 0.2]), 1)
        assert exc.value.rows == (1,)
        with pytest.raises(errors.InfiniteWeight):
            weight_wz(ATT, 1.0, 0)
        with pytest.raises(errors.InfiniteWeight):
            weight_wz(ATC, 0.0, 1)
        with pytest.raises(errors.InfiniteWeight):
            weight_wz(EW, 0.0, 1)

    def test_equipoise_weights_finite_at_boundaries(self):
        for scheme in (OW, MW, validate_scheme("BW", nu=2.0), validate_scheme("BW", nu=5.0)):
            for z in (0, 1):
                w = weight_wz(scheme, np.array([0.0, 1.0]), z)
                assert np.all(np.isfinite(w))


class TestComputeWeightset:
    def test_constant_half_scores_normalize_uniformly(self):
        z = [1, 1, 1, 0, 0, 0, 0]
        ds = make_dataset(None, z, np.zeros(7))
        fp = fp_from_scores(np.full(7, 0.5))
        for scheme in SMOOTH + [validate_scheme("TRIM", alpha=0.1),
                                validate_scheme("TRUNC", alpha=0.1)]:
            ws = compute_weightset(ds, fp, scheme)
            t = ds.treatment == 1
            np.testing.assert_allclose(ws.norm_w1[t], 1.0 / 3.0, rtol=1e-12)
            np.testing.assert_allclose(ws.norm_w0[~t], 1.0 / 4.0, rtol=1e-12)

    def test_normalized_weights_sum_to_one(self, poor_overlap_dataset):
        ds = poor_overlap_dataset
        rng = np.random.default_rng(0)
        fp = fp_from_scores(np.clip(rng.beta(2, 2, ds.n_units), 1e-3, 1 - 1e-3))
        for scheme in SMOOTH:
            ws = compute_weightset(ds, fp, scheme)
            t = ds.treatment == 1
            assert np.sum(ws.norm_w1[t]) == pytest.approx(1.0, abs=1e-12)
            assert np.sum(ws.norm_w0[~t]) == pytest.approx(1.0, abs=1e-12)

    def test_trimmed_unit_gets_exact_zero(self):
        e = np.array([0.05, 0.3, 0.6, 0.45, 0.2])
        ds = make_dataset(None, [1, 0, 1, 0, 1], np.zeros(5))
        ws = compute_weightset(ds, fp_from_scores(e), validate_scheme("TRIM", alpha=0.1))
        assert ws.norm_w1[0] == 0.0
        assert ws.g_values[0] == 0.0

    def test_ten_row_overlap_hand_oracle(self):
        # spreadsheet-style arithmetic: w1 = 1 - e on treated, w0 = e on controls
        e = np.array([0.10, 0.22, 0.35, 0.41, 0.50, 0.58, 0.66, 0.74, 0.85, 0.93])
        z = np.array([0, 1, 0, 1, 1, 0, 1, 0, 1, 0])
        sum_w1 = (1 - 0.22) + (1 - 0.41) + (1 - 0.50) + (1 - 0.66) + (1 - 0.85)
        sum_w0 = 0.10 + 0.35 + 0.58 + 0.74 + 0.93
        ds = make_dataset(None, z, np.zeros(10))
        ws = compute_weightset(ds, fp_from_scores(e), OW)
        assert ws.sum_w1 == pytest.approx(sum_w1, abs=1e-12)
        assert ws.sum_w0 == pytest.approx(sum_w0, abs=1e-12)
        np.testing.assert_allclose(ws.raw_w1, 1 - e, atol=1e-12)
        np.testing.assert_allclose(ws.raw_w0, e, atol=1e-12)
        np.testing.assert_allclose(ws.norm_w1, (1 - e) / sum_w1, atol=1e-12)
        np.testing.assert_allclose(ws.norm_w0, e / sum_w0, atol=1e-12)

    def test_empty_effective_arm(self):
        e = np.array([0.05, 0.04, 0.6, 0.45, 0.5])
        ds = make_dataset(None, [1, 1, 0, 0, 0], np.zeros(5))
        with pytest.raises(errors.EmptyEffectiveArm):
            compute_weightset(ds, fp_from_scores(e), validate_scheme("TRIM", alpha=0.1))

    def test_raw_weight_identity_per_scheme(self):
        rng = np.random.default_rng(9)
        e = rng.uniform(0.05, 0.95, 30)
        z = rng.integers(0, 2, 30)
        z[:2] = [0, 1]
        ds = make_dataset(None, z, np.zeros(30))
        for scheme in SMOOTH + [validate_scheme("TRIM", alpha=0.1)]:
            ws = compute_weightset(ds, fp_from_scores(e), scheme)
            g = ws.g_values
            np.testing.assert_allclose(ws.raw_w1, g / e, rtol=1e-10)
            np.testing.assert_allclose(ws.raw_w0, g / (1 - e), rtol=1e-10)


class TestGradients:
    @pytest.mark.parametrize("scheme", SMOOTH, ids=lambda s: s.label)
    def test_weight_gradient_matches_finite_differences(self, scheme):
        rng = np.random.default_rng(123)
        k, h = 3, 1e-5
        checked = 0
        while checked < 50:
            V = rng.normal(size=k)
            beta = rng.normal(size=k, scale=0.6)
            e0 = logistic(V @ beta)
            if not 1e-3 < e0 < 1 - 1e-3:
                continue
            checked += 1
            for z in (0, 1):
                def w_of(b):
                    return weight_wz(scheme, logistic(V @ b), z)
                num = np.array([
                    (w_of(beta + h * np.eye(k)[j]) - w_of(beta - h * np.eye(k)[j])) / (2 * h)
                    for j in range(k)])
                ana = weight_gradient(scheme, e0, z, V)
                np.testing.assert_allclose(ana, num, rtol=1e-6, atol=1e-6)

    @pytest.mark.parametrize("scheme", SMOOTH, ids=lambda s: s.label)
    def test_selection_gradient_matches_finite_differences(self, scheme):
        rng = np.random.default_rng(321)
        k, h = 3, 1e-5
        for _ in range(50):
            V = rng.normal(size=k)
            beta = rng.normal(size=k, scale=0.6)
            e0 = logistic(V @ beta)
            if not 1e-3 < e0 < 1 - 1e-3:
                continue

            def g_of(b):
                return selection_g(scheme, logistic(V @ b))
            num = np.array([
                (g_of(beta + h * np.eye(k)[j]) - g_of(beta - h * np.eye(k)[j])) / (2 * h)
                for j in range(k)])
            ana = selection_gradient(scheme, e0, V)
            np.testing.assert_allclose(ana, num, rtol=1e-6, atol=1e-6)

    def test_mw_band_gradients_match_finite_differences(self):
        V = np.array([1.0, 0.3, -0.2])
        b12 = np.array([0.11, -0.07])
        for e_target in (0.4985, 0.4995, 0.5, 0.5005, 0.5015):
            b0 = np.log(e_target / (1 - e_target)) - V[1:] @ b12
            beta = np.r_[b0, b12]
            e0 = logistic(V @ beta)
            h = 1e-6
            for z in (0, 1):
                def w_of(b):
                    return weight_wz(MW, logistic(V @ b), z)
                num = np.array([
                    (w_of(beta + h * np.eye(3)[j]) - w_of(beta - h * np.eye(3)[j])) / (2 * h)
                    for j in range(3)])
                np.testing.assert_allclose(weight_gradient(MW, e0, z, V), num, atol=1e-4)

    def test_ipw_selection_gradient_identically_zero(self):
        e = np.linspace(0.05, 0.95, 11)
        assert np.all(selection_beta_factor(IPW, e) == 0.0)

    def test_ow_gradient_vanishes_at_half(self):
        V = np.array([1.0, 2.0, -1.0])
        np.testing.assert_allclose(selection_gradient(OW, 0.5, V), 0.0, atol=1e-15)
        np.testing.assert_allclose(weight_gradient(OW, 0.4, 1, V), -0.24 * V, atol=1e-12)

    def test_ew_treated_gradient_row(self):
        # d w1/d beta = ln(1-e) (1-e)/e V  (negative multiple of V for e<1)
        e = 0.3
        V = np.array([1.0, -2.0])
        expected = np.log(1 - e) * (1 - e) / e * V
        np.testing.assert_allclose(weight_gradient(EW, e, 1, V), expected, rtol=1e-12)

    def test_trim_trunc_unsupported(self):
        for kind in ("TRIM", "TRUNC"):
            scheme = validate_scheme(kind, alpha=0.1)
            with pytest.raises(errors.UnsupportedScheme):
                weight_gradient(scheme, 0.3, 1, np.ones(2))
            with pytest.raises(errors.UnsupportedScheme):
                selection_gradient(scheme, 0.3, np.ones(2))

    def test_att_atc_rows(self):
        e = 0.3
        V = np.array([1.0, 0.5])
        assert np.all(weight_gradient(ATT, e, 1, V) == 0.0)
        np.testing.assert_allclose(weight_gradient(ATT, e, 0, V), e / (1 - e) * V)
        np.testing.assert_allclose(weight_gradient(ATC, e, 1, V), -(1 - e) / e * V)
        assert np.all(weight_gradient(ATC, e, 0, V) == 0.0)


class TestEquipoiseConditions:
    EQUIPOISE = [OW, MW, EW, validate_scheme("BW", nu=2.0), validate_scheme("BW", nu=4.0),
                 validate_scheme("BW", nu=11.0)]

    @pytest.mark.parametrize("scheme", EQUIPOISE, ids=lambda s: s.label)
    def test_boundary_condition(self, scheme):
        assert selection_g(scheme, 0.0) == 0.0
        assert selection_g(scheme, 1.0) == 0.0

    @pytest.mark.parametrize("scheme", EQUIPOISE, ids=lambda s: s.label)
    def test_symmetry(self, scheme):
        e = np.linspace(0.0, 1.0, 2001)
        np.testing.assert_allclose(selection_g(scheme, e), selection_g(scheme, 1 - e),
                                   rtol=1e-10, atol=1e-14)

    @pytest.mark.parametrize("scheme", EQUIPOISE, ids=lambda s: s.label)
    def test_strict_maximum_at_half(self, scheme):
        e = np.linspace(0.0, 1.0, 2001)
        g = selection_g(scheme, e)
        peak = selection_g(scheme, 0.5)
        off = e != 0.5
        assert np.all(g[off] < peak)

    @pytest.mark.parametrize("scheme", EQUIPOISE, ids=lambda s: s.label)
    def test_nonnegative_and_continuous(self, scheme):
        e = np.linspace(0.0, 1.0, 20001)
        g = selection_g(scheme, e)
        assert np.all(g >= 0.0)
        assert np.max(np.abs(np.diff(g))) < 1e-2  # no jumps on a fine grid

    @given(st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
    @settings(max_examples=200, deadline=None)
    def test_hypothesis_symmetry_and_range(self, e):
        for scheme in (OW, MW, EW):
            g = selection_g(scheme, e)
            g_sym = selection_g(scheme, 1.0 - e)
            assert g >= 0.0
            assert g == pytest.approx(g_sym, rel=1e-9, abs=1e-12)
            assert g <= selection_g(scheme, 0.5) + 1e-12


class TestFunctionAnalyticInequalities:
    def test_min_vs_ow_inequality(self):
        t = np.linspace(0.0, 1.0, 10_000)
        mn = np.minimum(t, 1 - t)
        ow2 = 2 * t * (1 - t)
        assert np.all(mn <= ow2 + 1e-15)
        assert np.all(ow2 <= 1.0 / 8.0 + mn + 1e-15)

    def test_product_identity(self):
        t = np.linspace(0.0, 1.0, 10_000)
        np.testing.assert_allclose(t * (1 - t), np.minimum(t, 1 - t) * np.maximum(t, 1 - t),
                                   atol=1e-15)

    @staticmethod
    def scaled_beta(nu, t):
        return 2.0 ** (2 * nu - 2) * (t * (1 - t)) ** (nu - 1)

    def test_entropy_envelope(self):
        # B_1.8 <= Omega <= B_1.7 holds on the interior; near the boundary the
        # lower bound crosses (checked and excluded: t < ~0.0025)
        t = np.linspace(0.01, 0.99, 10_000)
        omega = -(t * np.log(t) + (1 - t) * np.log1p(-t)) / np.log(2.0)
        assert np.all(self.scaled_beta(1.8, t) <= omega + 1e-12)
        assert np.all(omega <= self.scaled_beta(1.7, t) + 1e-12)

    def test_matching_envelope(self):
        # Lambda <= B_2.2 on the interior; B_16 <= Lambda away from the kink
        # at 0.5, where no smooth function scaled to Lambda(0.5) can stay below
        t = np.linspace(0.01, 0.99, 10_000)
        lam = 2 * np.minimum(t, 1 - t)
        assert np.all(lam <= self.scaled_beta(2.2, t) + 1e-12)
        flank = np.abs(t - 0.5) >= 0.05
        assert np.all(self.scaled_beta(16.0, t[flank]) <= lam[flank] + 1e-12)


class TestSmoothedMatching:
    def test_coefficients_solve_hermite_systems(self):
        sm = smoothing_coeffs(0.002)
        d = 0.002
        lo, hi = 0.5 - d, 0.5 + d
        D = np.array([
            [1, lo, lo ** 2, lo ** 3],
            [0, 1, 2 * lo, 3 * lo ** 2],
            [1, hi, hi ** 2, hi ** 3],
            [0, 1, 2 * hi, 3 * hi ** 2],
        ])
        rho = (1 - 2 * d) / (1 + 2 * d)
        sig = 4 / (1 + 2 * d) ** 2
        np.testing.assert_allclose(D @ np.array(sm.a1), [1.0, 0.0, rho, -sig], atol=1e-10)
        np.testing.assert_allclose(D @ np.array(sm.a2), [rho, sig, 1.0, 0.0], atol=1e-10)

    def test_equals_raw_outside_band(self):
        e = np.concatenate([np.linspace(0.0, 0.498, 200), np.linspace(0.502, 1.0, 200)])
        np.testing.assert_array_equal(selection_g(MW, e), np.minimum(e, 1 - e))
        raw_w1 = np.minimum(1.0, (1 - e[e > 0]) / e[e > 0])
        np.testing.assert_allclose(weight_wz(MW, e[e > 0], 1), raw_w1, rtol=1e-15)

    def test_c1_junctions(self):
        # value and slope of the smoothing polynomials match the raw tent at
        # both junction points to 1e-10
        d = 0.002
        sm = smoothing_coeffs(d)
        lo, hi = 0.5 - d, 0.5 + d

        def quartic(e):
            a = sm.a1
            return e * (a[0] + a[1] * e + a[2] * e ** 2 + a[3] * e ** 3)

        def quartic_slope(e):
            a = sm.a1
            return a[0] + 2 * a[1] * e + 3 * a[2] * e ** 2 + 4 * a[3] * e ** 3

        assert quartic(lo) == pytest.approx(lo, abs=1e-10)
        assert quartic(hi) == pytest.approx(1 - hi, abs=1e-10)
        assert quartic_slope(lo) == pytest.approx(1.0, abs=1e-10)
        assert quartic_slope(hi) == pytest.approx(-1.0, abs=1e-10)
        # the public gradient factors agree across the junction to 1e-10
        for junction in (lo, hi):
            out = selection_beta_factor(MW, np.array([junction]))[0]
            inner = selection_beta_factor(MW, np.array([np.nextafter(junction, 0.5)]))[0]
            assert out == pytest.approx(inner, abs=1e-10)
            for z in (0, 1):
                out_w = weight_beta_factor(MW, np.array([junction]), z)[0]
                in_w = weight_beta_factor(MW, np.array([np.nextafter(junction, 0.5)]), z)[0]
                assert out_w == pytest.approx(in_w, abs=1e-10)

    def test_band_value_close_to_raw(self):
        # the smoothing flattens the tent tip by at most delta/2
        e = np.linspace(0.498, 0.502, 101)
        g = selection_g(MW, e)
        dev = np.abs(g - np.minimum(e, 1 - e))
        assert np.max(dev) <= 0.002 / 2 + 1e-12
        assert dev[0] == 0.0 and dev[-1] == 0.0

    def test_custom_delta(self):
        mw = validate_scheme("MW", delta=0.01)
        assert selection_g(mw, 0.495) != pytest.approx(0.495, abs=1e-9)
        assert selection_g(mw, 0.48) == pytest.approx(0.48)
