"""Region classification: G surface, critical parameters, dual classifiers."""

import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from treepolymer import (
    CustomLaw,
    DeterministicConstant,
    DomainError,
    GaussianIndep,
    LogNormalUniformPhase,
    RademacherPhase,
    alpha_min,
    classify,
    classify_indep_closed_form,
    critical_set,
    g_of_alpha,
    l2_check,
    positive_weight_free_energy,
)

LN2 = math.log(2.0)
BETA_C = math.sqrt(2.0 * LN2)     # Gaussian b=2 strong-disorder threshold
BETA_0 = 0.5 * BETA_C
GAMMA_C = math.sqrt(LN2)
GAMMA_0 = math.sqrt(0.5 * LN2)


def _unit_modulus_custom():
    def polar(raw):
        count = raw.shape[0]
        return np.ones(count), np.zeros(count)

    return CustomLaw(
        polar=polar,
        log_moments={0.0: 0.0, 1.0: 0.0, 2.0: 0.0, 4.0: 0.0},
        mean=1.0 + 0j,
        independent=True,
        damping=1.0,
        lambda_c_fn=lambda g: 0.0,
    )


# ------------------------------------------------------------------ G(a)


def test_g_of_alpha_matches_closed_forms():
    assert g_of_alpha(DeterministicConstant(1.0), 2, 2.0) == pytest.approx(0.5 * LN2, rel=1e-12)
    law = GaussianIndep(1.0, 1.0)
    assert g_of_alpha(law, 2, 1.0) == pytest.approx(LN2 + 0.5, rel=1e-12)
    assert g_of_alpha(law, 2, 2.0) == pytest.approx((LN2 + 2.0) / 2.0, rel=1e-12)


def test_g_of_alpha_requires_positive_exponent():
    with pytest.raises(DomainError):
        g_of_alpha(GaussianIndep(1.0, 1.0), 2, 0.0)


def test_alpha_min_examples():
    assert alpha_min(GaussianIndep(1.0, 1.0), 2) == pytest.approx(BETA_C, abs=1e-6)
    assert alpha_min(GaussianIndep(0.3, 0.3), 2) == pytest.approx(BETA_C / 0.3, abs=1e-6)
    assert alpha_min(DeterministicConstant(1.0), 2) == math.inf
    assert alpha_min(_unit_modulus_custom(), 2) == math.inf


def test_alpha_min_rejects_small_cap():
    with pytest.raises(DomainError):
        alpha_min(GaussianIndep(1.0, 1.0), 2, alpha_cap=1.5)


@given(st.floats(0.2, 2.0))
def test_alpha_min_scales_inversely_with_radius_strength(beta):
    assert alpha_min(GaussianIndep(beta, 0.5), 2) == pytest.approx(BETA_C / beta, abs=1e-6)


@given(st.floats(0.3, 2.2), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_g_is_unimodal_around_its_minimizer(beta, frac1, frac2):
    law = GaussianIndep(beta, 0.7)
    amin = BETA_C / beta
    lo1, lo2 = sorted((frac1 * amin, frac2 * amin))
    assume(lo2 - lo1 > 1e-6)
    assert g_of_alpha(law, 2, lo1) >= g_of_alpha(law, 2, lo2) - 1e-12
    hi1, hi2 = sorted((amin * (1.0 + frac1), amin * (1.0 + frac2)))
    assume(hi2 - hi1 > 1e-6)
    assert g_of_alpha(law, 2, hi2) >= g_of_alpha(law, 2, hi1) - 1e-12


# ------------------------------------------------------------------ L2 test


def test_l2_condition_examples():
    assert l2_check(DeterministicConstant(1.0), 2) is True
    assert l2_check(GaussianIndep(0.3, 0.3), 2) is True
    assert l2_check(GaussianIndep(0.0, GAMMA_C + 0.01), 2) is False
    assert l2_check(GaussianIndep(0.0, GAMMA_C - 0.01), 2) is True
    # exact-equality case (both sides are 0.0 in floating point): the
    # strict inequality excludes the boundary itself
    assert l2_check(RademacherPhase(t=0.5, beta=0.0), 4) is False


# ------------------------------------------------------------ critical set


def test_critical_set_gaussian_closed_forms():
    crit = critical_set(GaussianIndep(1.0, 1.0), 2)
    assert crit.beta_c == pytest.approx(BETA_C, abs=1e-8)
    assert crit.beta_0 == pytest.approx(BETA_0, abs=1e-8)
    assert crit.gamma_c == pytest.approx(GAMMA_C, abs=1e-8)
    assert crit.gamma_0 == pytest.approx(GAMMA_0, abs=1e-8)
    lo, hi = crit.gamma_0_bracket
    assert lo <= crit.gamma_0 <= hi


def test_critical_set_ternary_tree():
    crit = critical_set(GaussianIndep(1.0, 1.0), 3)
    assert crit.beta_c == pytest.approx(math.sqrt(2.0 * math.log(3.0)), abs=1e-8)
    assert crit.beta_0 == pytest.approx(0.5 * crit.beta_c, abs=1e-8)


def test_critical_set_infinite_sentinels_for_bounded_radius():
    crit = critical_set(DeterministicConstant(1.0), 2)
    assert crit.beta_c == math.inf
    assert crit.beta_0 == math.inf
    assert crit.gamma_c == math.inf
    assert crit.gamma_0 == math.inf
    assert crit.gamma_0_bracket is None


def test_critical_set_roots_satisfy_their_equations_for_other_phase_laws():
    law = LogNormalUniformPhase(0.5, 0.5)
    crit = critical_set(law, 2)
    assert 0.0 < crit.gamma_c < 1.0
    assert 2.0 * law.lambda_c(crit.gamma_c) == pytest.approx(LN2, abs=1e-9)
    two_point = RademacherPhase(t=0.0, beta=0.0)
    assert critical_set(two_point, 2).gamma_c == pytest.approx(0.5, abs=1e-9)


# ------------------------------------------------------- generic classifier


@pytest.mark.parametrize(
    "beta,gamma,region,f",
    [
        (0.3, 0.3, "R1", LN2),
        (0.3, 1.2, "R3", (LN2 + 0.18) / 2.0),
        (1.5, 0.1, "R2a", 1.5 * BETA_C),
        (0.8, 0.8, "R2b", 0.8 * BETA_C),
    ],
)
def test_classify_gaussian_examples(beta, gamma, region, f):
    report = classify(GaussianIndep(beta, gamma), 2)
    assert report.region == region
    assert report.predicted_f == pytest.approx(f, abs=1e-7)
    assert report.condition_trace


def test_classify_constant_is_weak_disorder():
    report = classify(DeterministicConstant(1.0), 2)
    assert report.region == "R1"
    assert report.predicted_f == pytest.approx(LN2, rel=1e-12)
    assert report.alpha_min == math.inf


def test_classify_reports_exact_boundary_with_both_values():
    beta = 0.3
    gamma_star = math.sqrt(LN2 - beta**2)  # curve where R1 and R3 formulas meet
    report = classify(GaussianIndep(beta, gamma_star), 2)
    assert report.region == "Boundary"
    assert report.boundary_values is not None
    lhs, rhs = report.boundary_values
    assert lhs == pytest.approx(rhs, abs=1e-9)
    assert report.boundary_width is not None


def test_classify_undetermined_without_independence():
    def polar(raw):
        count = raw.shape[0]
        return np.ones(count), np.zeros(count)

    # moment table of a strong radius (quadratic in a), phases undeclared
    table = {a: 0.5 * (0.8 * a) ** 2 for a in (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0)}
    law = CustomLaw(polar=polar, log_moments=table, mean=0.941928 + 0j,
                    independent=False)
    report = classify(law, 2)
    assert report.region == "Undetermined"
    assert math.isnan(report.predicted_f)


def test_classify_free_energy_is_continuous_across_region_boundaries():
    delta = 1e-6
    cases = []
    beta = 0.3  # R1/R3 crossing in the phase direction
    gamma_star = math.sqrt(LN2 - beta**2)
    cases.append(((beta, gamma_star - delta), (beta, gamma_star + delta), {"R1", "R3"}))
    beta = 0.9  # R1/R2 crossing in the phase direction
    gamma_hat = BETA_C - beta
    cases.append(((beta, gamma_hat - delta), (beta, gamma_hat + delta), {"R1", "R2b"}))
    gamma = 0.9  # R3/R2 crossing in the radius direction
    cases.append(((BETA_0 - delta, gamma), (BETA_0 + delta, gamma), {"R3", "R2b"}))
    for (p_lo, p_hi, expected) in cases:
        rep_lo = classify(GaussianIndep(*p_lo), 2)
        rep_hi = classify(GaussianIndep(*p_hi), 2)
        assert {rep_lo.region, rep_hi.region} == expected
        assert abs(rep_lo.predicted_f - rep_hi.predicted_f) < 1e-5


def test_exactly_one_region_condition_fires_away_from_boundaries():
    checked = 0
    for beta in np.linspace(0.05, 2.0, 40):
        for gamma in np.linspace(0.05, 2.0, 40):
            target = LN2 + 0.5 * beta**2 - 0.5 * gamma**2

            def g(a):
                return LN2 / a + 0.5 * a * beta**2

            amin = BETA_C / beta
            c1 = g(min(max(amin, 1.0), 2.0)) < target
            c2 = amin < 1.0 or (amin < 2.0 and g(amin) > target)
            c3 = amin > 2.0 and g(2.0) > target
            margins = [
                abs(g(min(max(amin, 1.0), 2.0)) - target),
                abs(amin - 1.0),
                abs(amin - 2.0),
                abs(g(min(amin, 64.0)) - target),
                abs(g(2.0) - target),
            ]
            if min(margins) < 1e-7:
                continue
            checked += 1
            assert int(c1) + int(c2) + int(c3) == 1, (beta, gamma)
            report = classify(GaussianIndep(float(beta), float(gamma)), 2)
            expected = "R1" if c1 else ("R3" if c3 else ("R2a" if amin < 1 else "R2b"))
            assert report.region == expected, (beta, gamma)
    assert checked > 1200


# --------------------------------------------------- closed-form classifier


@pytest.fixture(scope="module")
def gaussian_tools():
    law = GaussianIndep(1.0, 1.0)
    crit = critical_set(law, 2)
    return crit, law.lambda_r, law.lambda_c, law.lambda_r_prime


@pytest.mark.parametrize(
    "beta,gamma,region",
    [
        (0.3, 0.3, "R1"),
        (0.3, 1.2, "R3"),
        (1.5, 0.1, "R2a"),
        (0.8, 0.8, "R2b"),
        (0.0, 0.0, "R1"),
    ],
)
def test_closed_form_classifier_examples(beta, gamma, region, gaussian_tools):
    crit, lam_r, lam_c, lam_r_prime = gaussian_tools
    report = classify_indep_closed_form(beta, gamma, crit, lam_r, lam_c, 2,
                                        lam_r_prime=lam_r_prime)
    assert report.region == region


def test_closed_form_classifier_boundary_band(gaussian_tools):
    crit, lam_r, lam_c, lam_r_prime = gaussian_tools

    def region_at(beta):
        return classify_indep_closed_form(beta, 0.1, crit, lam_r, lam_c, 2,
                                          lam_r_prime=lam_r_prime).region

    assert region_at(crit.beta_c) == "Boundary"
    assert region_at(crit.beta_c + 5e-10) == "Boundary"
    assert region_at(crit.beta_c + 1e-8) == "R2a"
    report = classify_indep_closed_form(crit.beta_c, 0.1, crit, lam_r, lam_c, 2,
                                        lam_r_prime=lam_r_prime)
    assert report.boundary_values is not None


def test_closed_form_classifier_works_with_numeric_derivative(gaussian_tools):
    crit, lam_r, lam_c, _ = gaussian_tools
    report = classify_indep_closed_form(0.8, 0.8, crit, lam_r, lam_c, 2)
    assert report.region == "R2b"
    assert report.predicted_f == pytest.approx(0.8 * BETA_C, abs=1e-5)


@given(st.floats(0.02, 2.0), st.floats(0.02, 2.0))
def test_dual_classifiers_agree_off_boundary(beta, gamma):
    law = GaussianIndep(beta, gamma)
    generic = classify(law, 2)
    crit = critical_set(law, 2)
    closed = classify_indep_closed_form(beta, gamma, crit, law.lambda_r,
                                        law.lambda_c, 2,
                                        lam_r_prime=law.lambda_r_prime)
    assume(generic.region != "Boundary" and closed.region != "Boundary")
    assert generic.region == closed.region
    assert generic.predicted_f == pytest.approx(closed.predicted_f, abs=1e-6)


# ------------------------------------------------- positive-weight polymer


def test_positive_weight_free_energy_examples():
    assert positive_weight_free_energy(GaussianIndep(0.3, 0.9), 1, 2) == pytest.approx(
        LN2 + 0.045, abs=1e-9)
    assert positive_weight_free_energy(GaussianIndep(1.5, 0.0), 1, 2) == pytest.approx(
        1.5 * BETA_C, abs=1e-7)
    assert positive_weight_free_energy(DeterministicConstant(1.0), 2, 2) == pytest.approx(
        LN2, rel=1e-12)
    with pytest.raises(DomainError):
        positive_weight_free_energy(GaussianIndep(0.3, 0.3), 3, 2)


def test_positive_weight_free_energy_square_weights():
    # weights |xi|^2 double the effective radius strength
    val = positive_weight_free_energy(GaussianIndep(0.4, 0.0), 2, 2)
    assert val == pytest.approx(LN2 + 0.5 * (2.0 * 0.4) ** 2, abs=1e-9)
    strong = positive_weight_free_energy(GaussianIndep(1.2, 0.0), 2, 2)
    assert strong == pytest.approx(2.4 * BETA_C, abs=1e-7)
