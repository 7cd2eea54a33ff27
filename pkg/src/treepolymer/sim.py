"""Exact evaluation of partition functionals on one sampled weight tree.

``dfs_evaluate`` computes, in a single post-order pass that never stores the
tree, the root values of

* Z_n        = sum over paths of the product of complex weights,
* Z_n(|xi|)  = the same sum over |xi|,
* Z_n(|xi|^2),
* T_n        = q^n Z_n(|xi|)   with q = |E e^{i theta}| (internal to W),
* W_n        = E[|Z_n|^2 | radii], via the per-node recursion
               W <- sum_x |xi_x|^2 W_x + q^2 [ (sum_x |xi_x| T_x)^2
                                               - sum_x |xi_x|^2 T_x^2 ],
               T <- q sum_x |xi_x| T_x,   leaf base W = T = 1.

The pair term uses the squared-sum identity to stay O(b) per node; the
dropped cross terms are exactly the x = x' diagonal, and W dominates that
diagonal, so the subtraction loses no relative accuracy.

Every quantity is carried as (mantissa, base-2 exponent) with exact
power-of-two rescaling, so deep trees with large |ln xi| cannot overflow.
Bottom subtrees of at most ``_BLOCK_LEAVES`` leaves are evaluated as
vectorized level sweeps; the traversal above them is plain recursion, so
memory stays O(n*b + block) however deep the tree is.

``brute_force_evaluate`` is the independent oracle: literal path
enumeration, with W summed over ordered path pairs damped by
q^(2*(n - meet)) where meet is the generation of the pair's deepest common
node (sites strictly after the split are damped).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace

import numpy as np

from .env import EnvironmentSpec
from .errors import BudgetExceeded, CoupledLaw, DomainError, ZeroMeanEnvironment
from .rng import TreeStream

DEFAULT_NODE_BUDGET = 1 << 24
_BLOCK_LEAVES = 1 << 14
_LN2 = math.log(2.0)


@dataclass
class FunctionalSet:
    """Root values of the path functionals on one sampled tree.

    Plain fields may overflow to inf for extreme parameters; the ln_* fields
    are always finite unless the value itself is 0 (ln = -inf) or absent
    (None).  arg_z is the angle of Z_n, well defined even when |Z_n|
    overflows.
    """

    n: int
    z: complex
    z_abs: float
    z_abs2: float
    t_damped: float | None
    w_cond: float | None
    ln_abs_z: float
    ln_z_abs: float
    ln_z_abs2: float
    ln_t_damped: float | None
    ln_w_cond: float | None
    arg_z: float
    m_norm: complex | None = None
    x_norm: float | None = None


@dataclass
class _State:
    """Scaled per-subtree accumulators: value = mantissa * 2**exp."""
    z: complex
    ez: int
    za: float
    ea: int
    a2: float
    ea2: int
    t: float
    et: int
    w: float
    ew: int


def _renorm_f(m: float, e: int) -> tuple[float, int]:
    if m == 0.0 or not math.isfinite(m):
        return m, e
    fr, k = math.frexp(m)
    return fr, e + k


def _renorm_c(m: complex, e: int) -> tuple[complex, int]:
    a = max(abs(m.real), abs(m.imag))
    if a == 0.0 or not math.isfinite(a):
        return m, e
    k = math.frexp(a)[1]
    return complex(math.ldexp(m.real, -k), math.ldexp(m.imag, -k)), e + k


def _renorm_farr(arr: np.ndarray, e: int) -> tuple[np.ndarray, int]:
    mx = float(np.max(arr)) if arr.size else 0.0
    if mx <= 0.0 or not math.isfinite(mx):
        return arr, e
    k = math.frexp(mx)[1]
    if k == 0:
        return arr, e
    return np.ldexp(arr, -k), e + k


def _renorm_carr(arr: np.ndarray, e: int) -> tuple[np.ndarray, int]:
    mx = float(np.max(np.abs(arr))) if arr.size else 0.0
    if mx <= 0.0 or not math.isfinite(mx):
        return arr, e
    k = math.frexp(mx)[1]
    if k == 0:
        return arr, e
    return arr * math.ldexp(1.0, -k), e + k


def _to_float(m: float, e: int) -> float:
    try:
        return math.ldexp(m, e)
    except OverflowError:
        return math.copysign(math.inf, m)


def _to_complex(m: complex, e: int) -> complex:
    return complex(_to_float(m.real, e), _to_float(m.imag, e))


def _ln_scaled(m: float, e: int) -> float:
    return -math.inf if m == 0.0 else math.log(m) + e * _LN2


def _group_sum(x: np.ndarray, b: int, compensated: bool) -> np.ndarray:
    """Sum consecutive groups of b elements; optionally Neumaier-compensated."""
    v = x.reshape(-1, b)
    if not compensated:
        return v.sum(axis=1)
    s = v[:, 0].copy()
    c = np.zeros_like(s)
    for k in range(1, b):
        term = v[:, k]
        tot = s + term
        c += np.where(np.abs(s) >= np.abs(term), (s - tot) + term, (term - tot) + s)
        s = tot
    return s + c


def _group_sum_c(x: np.ndarray, b: int, compensated: bool) -> np.ndarray:
    if not compensated:
        return x.reshape(-1, b).sum(axis=1)
    re = _group_sum(np.ascontiguousarray(x.real), b, True)
    im = _group_sum(np.ascontiguousarray(x.imag), b, True)
    return re + 1j * im


def _check_budget(b: int, n: int, node_budget: int) -> None:
    if b < 2:
        raise DomainError("branching factor must be >= 2")
    if n < 0:
        raise DomainError("depth must be >= 0")
    if b ** (n + 1) > node_budget:
        raise BudgetExceeded(
            f"b^(n+1) = {b}^{n + 1} exceeds node budget {node_budget}")


def _block_depth(b: int, n: int) -> int:
    d = 0
    while d < n and b ** (d + 1) <= _BLOCK_LEAVES:
        d += 1
    return d


def _xi_of(spec: EnvironmentSpec, raw: np.ndarray):
    return spec.radius_weight_from_raw(raw)


def _eval_block(spec, b: int, g0: int, i0: int, d: int, stream: TreeStream,
                q: float, include_w: bool, compensated: bool,
                corrupt: bool) -> _State:
    """Vectorized level sweep over the depth-d subtree rooted at (g0, i0)."""
    leaves = b**d
    z = np.ones(leaves, dtype=np.complex128)
    za = np.ones(leaves)
    a2 = np.ones(leaves)
    t = np.ones(leaves)
    w = np.ones(leaves)
    ez = ea = ea2 = et = ew = 0
    for j in range(d, 0, -1):
        count = b**j
        raw = stream.node_block(b, g0 + j, i0 * count, count)
        r, xi = _xi_of(spec, raw)
        r2 = r * r
        z = _group_sum_c(xi * z, b, compensated)
        za = _group_sum(r * za, b, False)
        a2 = _group_sum(r2 * a2, b, False)
        if include_w:
            rt = r * t
            s1 = _group_sum(rt, b, False)
            s2 = _group_sum(rt * rt, b, False)
            diag = _group_sum(r2 * w, b, compensated)
            pair = (q * q) * np.maximum(s1 * s1 - s2, 0.0)
            if corrupt:
                pair = pair * 1.001
            e_new = max(ew, 2 * et)
            w = diag * math.ldexp(1.0, ew - e_new) \
                + pair * math.ldexp(1.0, 2 * et - e_new)
            ew = e_new
            t = q * s1
            t, et = _renorm_farr(t, et)
            w, ew = _renorm_farr(w, ew)
        z, ez = _renorm_carr(z, ez)
        za, ea = _renorm_farr(za, ea)
        a2, ea2 = _renorm_farr(a2, ea2)
    return _State(complex(z[0]), ez, float(za[0]), ea, float(a2[0]), ea2,
                  float(t[0]), et, float(w[0]), ew)


def _combine_children(children: list[_State], r: np.ndarray, xi: np.ndarray,
                      q: float, include_w: bool, compensated: bool,
                      corrupt: bool) -> _State:
    """One scalar application of the per-node recursions."""
    b = len(children)
    ez = max(c.ez for c in children)
    zt = np.array([xi[x] * c.z * math.ldexp(1.0, c.ez - ez)
                   for x, c in enumerate(children)])
    z = complex(_group_sum_c(zt, b, compensated)[0])
    ea = max(c.ea for c in children)
    za = float(sum(r[x] * c.za * math.ldexp(1.0, c.ea - ea)
                   for x, c in enumerate(children)))
    ea2 = max(c.ea2 for c in children)
    a2 = float(sum(r[x] * r[x] * c.a2 * math.ldexp(1.0, c.ea2 - ea2)
                   for x, c in enumerate(children)))
    t = et = w = ew = 0
    if include_w:
        et = max(c.et for c in children)
        rts = [r[x] * c.t * math.ldexp(1.0, c.et - et)
               for x, c in enumerate(children)]
        s1 = sum(rts)
        s2 = sum(v * v for v in rts)
        ew0 = max(c.ew for c in children)
        diag_t = np.array([r[x] * r[x] * c.w * math.ldexp(1.0, c.ew - ew0)
                           for x, c in enumerate(children)])
        diag = float(_group_sum(diag_t, b, compensated)[0])
        pair = (q * q) * max(s1 * s1 - s2, 0.0)
        if corrupt:
            pair = pair * 1.001
        ew = max(ew0, 2 * et)
        w = diag * math.ldexp(1.0, ew0 - ew) + pair * math.ldexp(1.0, 2 * et - ew)
        t = q * s1
        t, et = _renorm_f(t, et)
        w, ew = _renorm_f(w, ew)
    z, ez = _renorm_c(z, ez)
    za, ea = _renorm_f(za, ea)
    a2, ea2 = _renorm_f(a2, ea2)
    return _State(z, ez, za, ea, a2, ea2, t, et, w, ew)


def dfs_evaluate(spec: EnvironmentSpec, b: int, n: int, stream: TreeStream,
                 node_budget: int = DEFAULT_NODE_BUDGET,
                 include_w: bool = True, compensated: bool | None = None,
                 _corrupt_w_pair: bool = False) -> FunctionalSet:
    """All root functionals of the depth-n tree in one streaming traversal."""
    _check_budget(b, n, node_budget)
    if include_w and not spec.independent:
        raise CoupledLaw("W requires independent radius/phase")
    q = spec.phase_damping() if include_w else 0.0
    comp = (n > 16) if compensated is None else compensated
    d = _block_depth(b, n)

    def eval_node(g: int, i: int) -> _State:
        if n - g <= d:
            return _eval_block(spec, b, g, i, n - g, stream, q, include_w,
                               comp, _corrupt_w_pair)
        children = [eval_node(g + 1, i * b + x) for x in range(b)]
        raw = stream.node_block(b, g + 1, i * b, b)
        r, xi = _xi_of(spec, raw)
        return _combine_children(children, r, xi, q, include_w, comp,
                                 _corrupt_w_pair)

    return _finish(eval_node(0, 0), n, include_w)


def _finish(st: _State, n: int, include_w: bool) -> FunctionalSet:
    return FunctionalSet(
        n=n,
        z=_to_complex(st.z, st.ez),
        z_abs=_to_float(st.za, st.ea),
        z_abs2=_to_float(st.a2, st.ea2),
        t_damped=_to_float(st.t, st.et) if include_w else None,
        w_cond=_to_float(st.w, st.ew) if include_w else None,
        ln_abs_z=_ln_scaled(abs(st.z), st.ez),
        ln_z_abs=_ln_scaled(st.za, st.ea),
        ln_z_abs2=_ln_scaled(st.a2, st.ea2),
        ln_t_damped=_ln_scaled(st.t, st.et) if include_w else None,
        ln_w_cond=_ln_scaled(st.w, st.ew) if include_w else None,
        arg_z=cmath.phase(st.z),
    )


def brute_force_evaluate(spec: EnvironmentSpec, b: int, n: int,
                         stream: TreeStream,
                         include_w: bool = True) -> FunctionalSet:
    """Literal path/pair enumeration oracle; shares no combine code with
    dfs_evaluate."""
    if n > 8 or b > 3:
        raise BudgetExceeded("brute force limited to n <= 8, b <= 3")
    if n < 0 or b < 2:
        raise DomainError("need n >= 0 and b >= 2")
    if include_w and not spec.independent:
        raise CoupledLaw("W requires independent radius/phase")
    q = spec.phase_damping() if include_w else 0.0

    leaves = b**n
    path_c = np.ones(leaves, dtype=np.complex128)
    path_r = np.ones(leaves)
    for g in range(1, n + 1):
        raw = stream.node_block(b, g, 0, b**g)
        r, xi = _xi_of(spec, raw)
        rep = b ** (n - g)
        path_c = path_c * np.repeat(xi, rep)
        path_r = path_r * np.repeat(r, rep)

    z = complex(path_c.sum())
    za = float(path_r.sum())
    a2 = float((path_r * path_r).sum())

    t = w = None
    if include_w:
        t = q**n * za
        idx = np.arange(leaves)
        w = 0.0
        chunk = max(1, (1 << 22) // max(leaves, 1))
        for c0 in range(0, leaves, chunk):
            rows = idx[c0:c0 + chunk]
            meet = np.zeros((rows.size, leaves), dtype=np.int16)
            for g in range(1, n + 1):
                div = b ** (n - g)
                meet += rows[:, None] // div == idx[None, :] // div
            damp = np.power(q, 2.0 * (n - meet))
            w += float(path_r[rows] @ (damp @ path_r))

    def _ln(v):
        return -math.inf if v == 0.0 else math.log(v)

    return FunctionalSet(
        n=n, z=z, z_abs=za, z_abs2=a2, t_damped=t, w_cond=w,
        ln_abs_z=_ln(abs(z)), ln_z_abs=_ln(za), ln_z_abs2=_ln(a2),
        ln_t_damped=_ln(t) if t is not None else None,
        ln_w_cond=_ln(w) if w is not None else None,
        arg_z=cmath.phase(z),
    )


@dataclass
class SecondMomentReport:
    value: float
    ln_value: float
    growth: str        # mean_squared | critical | diagonal
    growth_rate: float  # asymptotic (1/n) ln E|Z_n|^2


def closed_form_second_moment(spec: EnvironmentSpec, b: int, n: int) -> SecondMomentReport:
    """Exact E|Z_n|^2 = b^n (b|m1|^2)^n + sigma^2 b^n m2^(n-1) sum_j x^j,
    with x = b|m1|^2 / m2, plus the growth-rate trichotomy label."""
    if n < 1:
        raise DomainError("closed form needs n >= 1")
    lnb = math.log(b)
    ln_m2 = spec.log_moment_abs(2.0)
    ln_m1 = spec.log_mean_abs()
    sigma2 = max(spec.sigma2(), 0.0)
    ln_a = lnb + 2.0 * ln_m1            # ln(b |m1|^2)
    term1 = n * lnb + n * ln_a
    if sigma2 == 0.0:
        term2 = -math.inf
    else:
        ln_x = ln_a - ln_m2
        term2 = (math.log(sigma2) + n * lnb + (n - 1) * ln_m2
                 + _ln_geom_sum(ln_x, n))
    ln_value = _logaddexp(term1, term2)
    value = math.exp(ln_value) if ln_value < 709.0 else math.inf
    gap = ln_a - ln_m2                   # sign of b|m1|^2 - m2
    if gap > 1e-12:
        growth, rate = "mean_squared", 2.0 * (lnb + ln_m1)
    elif gap < -1e-12:
        growth, rate = "diagonal", lnb + ln_m2
    else:
        growth, rate = "critical", lnb + ln_m2
    return SecondMomentReport(value, ln_value, growth, rate)


def _ln_geom_sum(ln_x: float, n: int) -> float:
    """ln sum_{j=0}^{n-1} x^j for x = e^ln_x >= 0."""
    if ln_x == -math.inf:
        return 0.0                      # only the j = 0 term
    if abs(ln_x) < 1e-14:
        return math.log(n)
    x = math.exp(ln_x)
    if ln_x < 0:
        return math.log1p(-x**n) - math.log1p(-x)
    return (n - 1) * ln_x + math.log1p(-x**-n) - math.log1p(-1.0 / x)


def _logaddexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = (a, b) if a >= b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def normalize(fs: FunctionalSet, spec: EnvironmentSpec, b: int,
              want_m: bool = True) -> FunctionalSet:
    """Fill m_norm = Z_n/(b m1)^n and x_norm = |Z_n|^2 / E|Z_n|^2."""
    m1 = spec.mean_xi()
    m_norm = fs.m_norm
    if want_m:
        if m1 == 0:
            raise ZeroMeanEnvironment("E[xi] = 0: martingale normalization undefined")
        ln_mag = fs.ln_abs_z - fs.n * (math.log(b) + spec.log_mean_abs())
        ang = fs.arg_z - fs.n * cmath.phase(m1)
        mag = math.exp(ln_mag) if ln_mag < 709.0 else math.inf
        m_norm = mag * complex(math.cos(ang), math.sin(ang))
    if fs.n == 0:
        ln_x = 2.0 * fs.ln_abs_z
    else:
        ln_x = 2.0 * fs.ln_abs_z - closed_form_second_moment(spec, b, fs.n).ln_value
    x_norm = math.exp(ln_x) if ln_x < 709.0 else math.inf
    return replace(fs, m_norm=m_norm, x_norm=x_norm)


@dataclass
class OneStepReport:
    resamples: int
    mean_residual: float     # |empirical E[Z_{n+1}|F_n] - b m1 Z_n| / SE (or abs diff when SE = 0)
    second_residual: float   # same for E[|Z_{n+1}|^2|F_n]
    mean_se: float
    second_se: float


def one_step_identity_check(spec: EnvironmentSpec, b: int, n: int,
                            stream: TreeStream, resamples: int = 10000,
                            node_budget: int = DEFAULT_NODE_BUDGET) -> OneStepReport:
    """Freeze a depth-n tree, resample generation n+1 `resamples` times, and
    compare the empirical conditional mean of Z_{n+1} with b m1 Z_n and the
    conditional second moment with b^2|m1|^2 |Z_n|^2 + b sigma^2 Z_n(|xi|^2)."""
    if n < 1:
        raise DomainError("need n >= 1")
    _check_budget(b, n + 1, node_budget)
    leaves = b**n
    if leaves * 16 > node_budget * 8:
        raise BudgetExceeded("path table for the frozen tree exceeds budget")

    path_c = np.ones(leaves, dtype=np.complex128)
    for g in range(1, n + 1):
        raw = stream.node_block(b, g, 0, b**g)
        _, xi = _xi_of(spec, raw)
        path_c = path_c * np.repeat(xi, b ** (n - g))
    z_n = complex(path_c.sum())
    fs = dfs_evaluate(spec, b, n, stream, node_budget=node_budget,
                      include_w=False)
    za2 = fs.z_abs2

    z_next = np.empty(resamples, dtype=np.complex128)
    for rix in range(resamples):
        sub = TreeStream(stream.seed, stream.replica + 1 + rix)
        raw = sub.node_block(b, n + 1, 0, b ** (n + 1))
        _, xi = _xi_of(spec, raw)
        z_next[rix] = path_c @ xi.reshape(leaves, b).sum(axis=1)

    m1 = spec.mean_xi()
    sigma2 = max(spec.sigma2(), 0.0)
    target1 = b * m1 * z_n
    mean1 = complex(z_next.mean())
    se1 = math.sqrt((np.var(z_next.real) + np.var(z_next.imag)) / resamples)
    diff1 = abs(mean1 - target1)
    resid1 = diff1 if se1 == 0.0 else diff1 / se1

    v = np.abs(z_next) ** 2
    target2 = b * b * abs(m1) ** 2 * abs(z_n) ** 2 + b * sigma2 * za2
    mean2 = float(v.mean())
    se2 = float(np.std(v) / math.sqrt(resamples))
    diff2 = abs(mean2 - target2)
    resid2 = diff2 if se2 == 0.0 else diff2 / se2

    return OneStepReport(resamples, resid1, resid2, se1, se2)


def trace_depths(spec: EnvironmentSpec, b: int, n: int, stream: TreeStream,
                 node_budget: int = DEFAULT_NODE_BUDGET,
                 include_w: bool = True) -> list[dict]:
    """Per-depth normalized logs for convergence traces: rows of
    (n', ln|z|/n', ln z_abs/n', ln z_abs2/n', ln w/(2n'))."""
    rows = []
    for depth in range(1, n + 1):
        fs = dfs_evaluate(spec, b, depth, stream, node_budget=node_budget,
                          include_w=include_w)
        rows.append({
            "n": depth,
            "ln_abs_z_over_n": fs.ln_abs_z / depth,
            "ln_z_abs_over_n": fs.ln_z_abs / depth,
            "ln_z_abs2_over_n": fs.ln_z_abs2 / depth,
            "ln_w_over_2n": (fs.ln_w_cond / (2.0 * depth))
                            if fs.ln_w_cond is not None else None,
        })
    return rows
