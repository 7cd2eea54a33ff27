"""Free-energy prediction and phase-region classification.

The classifier machinery rests on G(a) = (ln b + ln E|xi|^a) / a, which is
unimodal with a unique minimizer a_min (possibly +inf).  Three regions:

* R1 -- some a in (1, 2] has G(a) < ln(b|E xi|); f = ln(b|E xi|).
* R2 -- a_min < 1 (R2a), or 1 <= a_min < 2 with G(a_min) > ln(b|E xi|) and
  independent radius/phase (R2b); f = G(a_min).
* R3 -- a_min > 2 and G(2) > ln(b|E xi|); f = (1/2) ln(b E|xi|^2) = G(2).

Equality sub-cases are reported as Boundary, never guessed.  A second,
independent classifier uses the critical parameters (beta_c, beta_0,
gamma_c, gamma_0) and explicit inequalities in (beta, gamma); the two must
agree away from the boundary band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .env import EnvironmentSpec
from .errors import DomainError, NoBracket

_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0  # 0.618...


@dataclass
class PhaseReport:
    region: str                    # R1 | R2a | R2b | R3 | Boundary | Undetermined
    alpha_min: float               # +inf sentinel allowed
    g_at_alpha_min: float
    predicted_f: float
    l2_region: bool | None
    condition_trace: list = field(default_factory=list)
    boundary_values: tuple | None = None   # adjacent formula values when Boundary
    boundary_width: float | None = None

    def to_dict(self) -> dict:
        return {
            "region": self.region,
            "alpha_min": self.alpha_min,
            "g_at_alpha_min": self.g_at_alpha_min,
            "predicted_f": self.predicted_f,
            "l2_region": self.l2_region,
            "condition_trace": self.condition_trace,
            "boundary_values": list(self.boundary_values) if self.boundary_values else None,
            "boundary_width": self.boundary_width,
        }


@dataclass
class CriticalSet:
    beta_c: float
    beta_0: float
    gamma_c: float
    gamma_0: float
    gamma_0_bracket: tuple | None = None

    def to_dict(self) -> dict:
        return {
            "beta_c": self.beta_c,
            "beta_0": self.beta_0,
            "gamma_c": self.gamma_c,
            "gamma_0": self.gamma_0,
            "gamma_0_bracket": list(self.gamma_0_bracket) if self.gamma_0_bracket else None,
        }


def g_of_alpha(spec: EnvironmentSpec, b: int, a: float) -> float:
    """G(a) = (ln b + ln E|xi|^a) / a."""
    if a <= 0:
        raise DomainError("g_of_alpha requires a > 0")
    return (math.log(b) + spec.log_moment_abs(a)) / a


def golden_section_min(f, lo: float, hi: float, tol: float = 1e-8) -> float:
    """Minimizer of a unimodal f on [lo, hi] to absolute tolerance tol."""
    x1 = hi - _INV_GOLDEN * (hi - lo)
    x2 = lo + _INV_GOLDEN * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > tol:
        if f1 < f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _INV_GOLDEN * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _INV_GOLDEN * (hi - lo)
            f2 = f(x2)
    return 0.5 * (lo + hi)


def alpha_min(spec: EnvironmentSpec, b: int, alpha_cap: float = 64.0) -> float:
    """Unique minimizer of G on (0, alpha_cap], or +inf if G is still
    strictly decreasing at the cap (slope test)."""
    if alpha_cap < 2:
        raise DomainError("alpha_cap must be >= 2")
    cap = min(alpha_cap, getattr(spec, "moment_alpha_max", math.inf))
    h = 1e-6 * cap
    if g_of_alpha(spec, b, cap) < g_of_alpha(spec, b, cap - h):
        return math.inf
    return golden_section_min(lambda a: g_of_alpha(spec, b, a), 1e-6, cap, tol=1e-8)


def l2_check(spec: EnvironmentSpec, b: int) -> bool:
    """True iff E|xi|^2 < b |E xi|^2 (the uniform-integrability condition)."""
    return spec.log_moment_abs(2.0) < math.log(b) + 2.0 * _log_mean_abs(spec)


def _log_mean_abs(spec: EnvironmentSpec) -> float:
    """ln |E xi|, -inf when the mean vanishes, computed in log space."""
    lm = getattr(spec, "log_mean_abs", None)
    if lm is not None:
        return lm()
    m = abs(spec.mean_xi())
    return -math.inf if m == 0.0 else math.log(m)


def classify(spec: EnvironmentSpec, b: int, eps_boundary: float = 1e-9) -> PhaseReport:
    """Phase region and predicted free energy from the moment surface alone."""
    lnb = math.log(b)
    target = lnb + _log_mean_abs(spec)   # ln(b |E xi|)
    amin = alpha_min(spec, b)
    cap = min(64.0, getattr(spec, "moment_alpha_max", math.inf))
    a_eval = min(amin, cap)
    g_amin = g_of_alpha(spec, b, a_eval)
    clamp = min(max(amin, 1.0), 2.0)
    g_clamp = g_of_alpha(spec, b, clamp)
    g2 = g_of_alpha(spec, b, 2.0)
    f1 = target
    f2v = g_amin
    f3 = g2

    trace = [
        {"name": "min_G_on_(1,2]_vs_ln_b_mean", "lhs": g_clamp, "rhs": target,
         "fired": g_clamp < target - eps_boundary},
        {"name": "alpha_min_vs_1", "lhs": amin, "rhs": 1.0,
         "fired": amin < 1.0 - eps_boundary},
        {"name": "alpha_min_vs_2", "lhs": amin, "rhs": 2.0,
         "fired": amin > 2.0 + eps_boundary},
        {"name": "G_at_alpha_min_vs_ln_b_mean", "lhs": g_amin, "rhs": target,
         "fired": g_amin > target + eps_boundary},
        {"name": "G2_vs_ln_b_mean", "lhs": g2, "rhs": target,
         "fired": g2 > target + eps_boundary},
        {"name": "independent_phases", "lhs": spec.independent, "rhs": True,
         "fired": spec.independent},
    ]

    def report(region, f, boundary_values=None):
        return PhaseReport(
            region=region, alpha_min=amin, g_at_alpha_min=g_amin,
            predicted_f=f, l2_region=l2_check(spec, b), condition_trace=trace,
            boundary_values=boundary_values,
            boundary_width=eps_boundary if boundary_values else None)

    if g_clamp < target - eps_boundary:
        return report("R1", f1)
    if amin < 1.0 - eps_boundary:
        return report("R2a", f2v)
    if amin > 2.0 + eps_boundary:
        if g2 > target + eps_boundary:
            return report("R3", f3)
        # g2 within the band of target: R1/R3 boundary
        return report("Boundary", 0.5 * (f1 + f3), (f1, f3))
    if amin < 2.0 - eps_boundary:
        # 1 <= a_min < 2 region: deciding inequality G(a_min) vs target
        if g_amin > target + eps_boundary:
            if spec.independent:
                return report("R2b", f2v)
            return report("Undetermined", math.nan)
        return report("Boundary", 0.5 * (f1 + f2v), (f1, f2v))
    # a_min within the band of 1 or 2, or all inequalities inside the band
    return report("Boundary", 0.5 * (f1 + f2v), (f1, f2v))


def _bisect(f, lo: float, hi: float, tol: float = 1e-12) -> float:
    """Plain bracketing bisection; f(lo) and f(hi) must differ in sign."""
    flo = f(lo)
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _first_bracket(f, lo: float, hi: float, steps: int) -> tuple[float, float]:
    """Smallest bracket [x0, x1] in [lo, hi] where f changes sign from f(lo).

    Scans left to right so the returned bracket contains the smallest root.
    Raises NoBracket if f keeps the sign of f(lo) on the whole grid.
    """
    xs = [lo + (hi - lo) * k / steps for k in range(steps + 1)]
    f0 = f(xs[0])
    neg = f0 < 0
    prev = xs[0]
    for x in xs[1:]:
        fx = f(x)
        if (fx < 0) != neg or fx == 0.0:
            return prev, x
        prev = x
    raise NoBracket(f"no sign change in [{lo}, {hi}]")


def critical_set(spec: EnvironmentSpec, b: int,
                 beta_cap: float = 64.0, gamma_cap: float = 64.0) -> CriticalSet:
    """Solve the four critical-parameter equations by bracketing bisection.

    beta_c:  x L'(x) - L(x) = ln b           with L = lambda_r
    beta_0:  2x L'(2x) - L(2x) = ln b
    gamma_c: 2 lambda_c(g) = ln b
    gamma_0: L(2 beta_0) - 2 L(beta_0) + 2 lambda_c(g) = ln b

    A parameter whose equation has no root below the cap is set to +inf.
    """
    lnb = math.log(b)
    cap = min(beta_cap, 0.5 * getattr(spec, "moment_alpha_max", math.inf))

    def legendre_gap(x):
        return x * spec.lambda_r_prime(x) - spec.lambda_r(x) - lnb

    def legendre_gap2(x):
        return legendre_gap(2.0 * x)

    beta_c = _solve_or_inf(legendre_gap, cap)
    beta_0 = _solve_or_inf(legendre_gap2, 0.5 * cap)

    def phase_gap(g):
        return 2.0 * spec.lambda_c(g) - lnb

    gamma_c = _solve_or_inf(phase_gap, gamma_cap)

    gamma_0 = math.inf
    g0_bracket = None
    if math.isfinite(beta_0):
        rhs = 0.5 * (lnb - spec.lambda_r(2.0 * beta_0) + 2.0 * spec.lambda_r(beta_0))

        def mixed_gap(g):
            return spec.lambda_c(g) - rhs

        try:
            g_lo, g_hi = _first_bracket(mixed_gap, 0.0, gamma_cap, steps=4096)
            gamma_0 = _bisect(mixed_gap, g_lo, g_hi, tol=1e-12)
            g0_bracket = (g_lo, g_hi)
        except NoBracket:
            pass

    return CriticalSet(beta_c, beta_0, gamma_c, gamma_0, g0_bracket)


def _solve_or_inf(f, cap: float) -> float:
    if not math.isfinite(cap) or cap <= 0:
        return math.inf
    try:
        lo, hi = _first_bracket(f, 1e-9, cap, steps=4096)
    except NoBracket:
        return math.inf
    return _bisect(f, lo, hi, tol=1e-12)


def classify_indep_closed_form(beta: float, gamma: float, crit: CriticalSet,
                               lam_r, lam_c, b: int, lam_r_prime=None,
                               eps_boundary: float = 1e-9) -> PhaseReport:
    """Region by the explicit independent-case inequalities.

    Independent of `classify`: uses only lambda_r/lambda_c, their critical
    parameters, and the model's (beta, gamma) coordinates.
    """
    if lam_r_prime is None:
        def lam_r_prime(x, _h=1e-7):
            return (lam_r(x + _h) - lam_r(x - _h)) / (2.0 * _h)

    lnb = math.log(b)
    lc = lam_c(gamma)

    def f_weak():
        return lnb + lam_r(beta) - lc

    def f_strong():
        return beta * lam_r_prime(crit.beta_c)

    def f_second():
        return 0.5 * (lnb + lam_r(2.0 * beta))

    def report(region, f, trace, boundary_values=None):
        return PhaseReport(
            region=region, alpha_min=math.nan, g_at_alpha_min=math.nan,
            predicted_f=f, l2_region=None, condition_trace=trace,
            boundary_values=boundary_values,
            boundary_width=eps_boundary if boundary_values else None)

    if math.isfinite(crit.beta_c) and beta > crit.beta_c + eps_boundary:
        # beta above beta_c puts the G minimizer below 1 (a_min = beta_c/beta)
        trace = [{"name": "beta_vs_beta_c", "lhs": beta, "rhs": crit.beta_c,
                  "fired": True}]
        return report("R2a", f_strong(), trace)
    if math.isfinite(crit.beta_c) and abs(beta - crit.beta_c) <= eps_boundary:
        trace = [{"name": "beta_vs_beta_c", "lhs": beta, "rhs": crit.beta_c,
                  "fired": False}]
        return report("Boundary", 0.5 * (f_weak() + f_strong()),
                      trace, (f_weak(), f_strong()))

    if math.isfinite(crit.beta_0) and beta >= crit.beta_0:
        # beta in [beta_0, beta_c): R1 vs R2 decided by the tilted inequality
        lhs = beta * lam_r_prime(crit.beta_c) - lam_r(beta) + lc
        trace = [{"name": "tilted_mean_vs_ln_b", "lhs": lhs, "rhs": lnb,
                  "fired": lhs < lnb - eps_boundary}]
        if lhs < lnb - eps_boundary:
            return report("R1", f_weak(), trace)
        if lhs > lnb + eps_boundary:
            return report("R2b", f_strong(), trace)
        return report("Boundary", 0.5 * (f_weak() + f_strong()),
                      trace, (f_weak(), f_strong()))

    # beta below beta_0 (or beta_0 infinite): R1 vs R3 by the L2-type inequality
    lhs = lam_r(2.0 * beta) - 2.0 * lam_r(beta) + 2.0 * lc
    trace = [{"name": "second_moment_gap_vs_ln_b", "lhs": lhs, "rhs": lnb,
              "fired": lhs < lnb - eps_boundary}]
    if lhs < lnb - eps_boundary:
        return report("R1", f_weak(), trace)
    if lhs > lnb + eps_boundary:
        return report("R3", f_second(), trace)
    return report("Boundary", 0.5 * (f_weak() + f_second()),
                  trace, (f_weak(), f_second()))


def positive_weight_free_energy(spec: EnvironmentSpec, exponent: int, b: int) -> float:
    """Almost-sure free energy of the positive-weight polymer with weights
    |xi|^exponent: ln b + L(1) in weak disorder (u_c >= 1), else L'(u_c),
    where L(u) = ln E|xi|^(exponent*u) and u_c solves u L'(u) - L(u) = ln b.
    """
    if exponent not in (1, 2):
        raise DomainError("exponent must be 1 or 2")
    lnb = math.log(b)

    def big_l(u):
        return spec.log_moment_abs(exponent * u)

    def big_l_prime(u):
        return exponent * spec.log_moment_abs_prime(exponent * u)

    def gap(u):
        return u * big_l_prime(u) - big_l(u) - lnb

    cap = min(64.0, getattr(spec, "moment_alpha_max", math.inf) / exponent)
    u_c = _solve_or_inf(gap, cap)
    if u_c >= 1.0:
        return lnb + big_l(1.0)
    return big_l_prime(u_c)
