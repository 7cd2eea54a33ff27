"""Environment laws for the complex random weights xi = e^{beta*omega + i*gamma*theta}.

Each law exposes the sampling transform (raw Philox words -> radius and
phase arrays) and the analytic moment surface used by the phase module:

* ``log_moment_abs(a)``  -- ln E|xi|^a
* ``mean_xi``            -- m1 = E[xi]
* ``second_abs``         -- E|xi|^2
* ``lambda_r(x)``        -- ln E e^{x*omega} for the standardized log-radius
* ``lambda_c(g)``        -- -ln|E e^{i*g*theta}| for the standardized phase
* ``phase_damping``      -- q = |E e^{i*theta_model}| at the law's own scale

Radius and phase draw from disjoint parts of one node's word block, so a
frozen-radius phase resample only has to swap the stream feeding
``phase_from_raw``.
"""

from __future__ import annotations

import cmath
import math

import numpy as np

from .errors import CoupledLaw, DomainError, NonIntegrable
from .rng import normal_pair, to_uniform


class EnvironmentSpec:
    """Base law. Subclasses fill the sampling and moment surface."""

    model = "abstract"
    independent = True
    beta_scale = 1.0   # point on the lambda_r axis the law itself sits at
    gamma_scale = 1.0  # point on the lambda_c axis the law itself sits at
    moment_alpha_max = math.inf  # largest certified exponent for E|xi|^a

    # -- sampling ---------------------------------------------------------
    def radius_from_raw(self, raw: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def phase_from_raw(self, raw: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def polar_from_raw(self, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.radius_from_raw(raw), self.phase_from_raw(raw)

    def radius_weight_from_raw(self, raw: np.ndarray) \
            -> tuple[np.ndarray, np.ndarray]:
        """(|xi|, xi) pairs; by default xi is rebuilt from the polar sample.

        Laws whose complex value is known exactly override this to avoid
        the roundoff of the r*exp(i*phi) reconstruction.
        """
        r, phi = self.polar_from_raw(raw)
        return r, r * np.exp(1j * phi)

    def sample(self, stream, count: int | None = None):
        """i.i.d. draws of xi from the stream's sequential region."""
        raw = stream.seq_block(1 if count is None else count)
        vals = self.radius_weight_from_raw(raw)[1]
        return complex(vals[0]) if count is None else vals

    # -- moment surface ----------------------------------------------------
    def log_moment_abs(self, a: float) -> float:
        raise NotImplementedError

    def moment_abs(self, a: float) -> float:
        if a < 0:
            raise DomainError("moment_abs requires a >= 0")
        try:
            return math.exp(self.log_moment_abs(a))
        except OverflowError:
            return math.inf

    def log_moment_abs_prime(self, a: float) -> float:
        """d/da ln E|xi|^a."""
        return self.beta_scale * self.lambda_r_prime(a * self.beta_scale)

    def mean_xi(self) -> complex:
        raise NotImplementedError

    def log_mean_abs(self) -> float:
        """ln |E xi|, -inf when the mean vanishes."""
        m = abs(self.mean_xi())
        return -math.inf if m == 0.0 else math.log(m)

    def second_abs(self) -> float:
        return self.moment_abs(2.0)

    def sigma2(self) -> float:
        return self.second_abs() - abs(self.mean_xi()) ** 2

    def lambda_r(self, x: float) -> float:
        raise NotImplementedError

    def lambda_r_prime(self, x: float) -> float:
        raise NotImplementedError

    def lambda_c(self, g: float) -> float:
        raise NotImplementedError

    def phase_damping(self) -> float:
        lc = self.lambda_c(self.gamma_scale)
        return 0.0 if math.isinf(lc) else math.exp(-lc)

    def to_config(self) -> dict:
        raise NotImplementedError


class GaussianIndep(EnvironmentSpec):
    """omega, theta independent standard normals scaled by beta, gamma."""

    model = "gaussian"

    def __init__(self, beta: float, gamma: float):
        if beta < 0 or gamma < 0:
            raise DomainError("beta and gamma must be >= 0")
        self.beta = float(beta)
        self.gamma = float(gamma)
        self.beta_scale = self.beta
        self.gamma_scale = self.gamma

    def radius_from_raw(self, raw):
        z1, _ = normal_pair(raw[:, 0], raw[:, 1])
        return np.exp(self.beta * z1)

    def phase_from_raw(self, raw):
        _, z2 = normal_pair(raw[:, 0], raw[:, 1])
        return self.gamma * z2

    def polar_from_raw(self, raw):
        z1, z2 = normal_pair(raw[:, 0], raw[:, 1])
        return np.exp(self.beta * z1), self.gamma * z2

    def log_moment_abs(self, a):
        return 0.5 * (a * self.beta) ** 2

    def mean_xi(self):
        return complex(math.exp(0.5 * self.beta**2 - 0.5 * self.gamma**2))

    def log_mean_abs(self):
        return 0.5 * self.beta**2 - 0.5 * self.gamma**2

    def lambda_r(self, x):
        return 0.5 * x * x

    def lambda_r_prime(self, x):
        return float(x)

    def lambda_c(self, g):
        return 0.5 * g * g

    def phase_damping(self):
        return math.exp(-0.5 * self.gamma**2)

    def to_config(self):
        return {"model": self.model, "beta": self.beta, "gamma": self.gamma}


class LogNormalUniformPhase(EnvironmentSpec):
    """Radius e^{beta*omega} with standard normal omega; phase uniform on
    [-gamma*pi, gamma*pi], gamma in [0, 1]."""

    model = "uniform"

    def __init__(self, beta: float, gamma: float):
        if beta < 0:
            raise DomainError("beta must be >= 0")
        if not 0.0 <= gamma <= 1.0:
            raise DomainError("gamma must be in [0, 1]")
        self.beta = float(beta)
        self.gamma = float(gamma)
        self.beta_scale = self.beta
        self.gamma_scale = self.gamma

    def radius_from_raw(self, raw):
        z1, _ = normal_pair(raw[:, 0], raw[:, 1])
        return np.exp(self.beta * z1)

    def phase_from_raw(self, raw):
        u = to_uniform(raw[:, 2])
        return self.gamma * math.pi * (2.0 * u - 1.0)

    def log_moment_abs(self, a):
        return 0.5 * (a * self.beta) ** 2

    def mean_xi(self):
        return complex(math.exp(0.5 * self.beta**2) * _sinc(self.gamma))

    def log_mean_abs(self):
        s = abs(_sinc(self.gamma))
        return -math.inf if s == 0.0 else 0.5 * self.beta**2 + math.log(s)

    def lambda_r(self, x):
        return 0.5 * x * x

    def lambda_r_prime(self, x):
        return float(x)

    def lambda_c(self, g):
        s = abs(_sinc(g))
        return math.inf if s == 0.0 else -math.log(s)

    def phase_damping(self):
        return abs(_sinc(self.gamma))

    def to_config(self):
        return {"model": self.model, "beta": self.beta, "gamma": self.gamma}


def _sinc(g: float) -> float:
    """sin(pi*g)/(pi*g) with the removable singularity at 0 and exact zeros
    at the other integers (sin(pi*k) would come back ~1e-16 otherwise)."""
    if g == 0.0:
        return 1.0
    if g == math.floor(g):
        return 0.0
    return math.sin(math.pi * g) / (math.pi * g)


class RademacherPhase(EnvironmentSpec):
    """Two-point phase: e^{i*theta} = t + i*sqrt(1-t^2) or its conjugate,
    each with probability 1/2, so |E e^{i*theta}| = t exactly.  Radius is
    e^{beta*omega} with standard normal omega."""

    model = "rademacher"

    def __init__(self, t: float, beta: float = 0.0):
        if not 0.0 <= t <= 1.0:
            raise DomainError("t must be in [0, 1]")
        if beta < 0:
            raise DomainError("beta must be >= 0")
        self.t = float(t)
        self.beta = float(beta)
        self.beta_scale = self.beta
        self.gamma_scale = 1.0
        self._theta = math.acos(self.t)

    def radius_from_raw(self, raw):
        z1, _ = normal_pair(raw[:, 0], raw[:, 1])
        return np.exp(self.beta * z1)

    def phase_from_raw(self, raw):
        u = to_uniform(raw[:, 2])
        return np.where(u < 0.5, self._theta, -self._theta)

    def log_moment_abs(self, a):
        return 0.5 * (a * self.beta) ** 2

    def mean_xi(self):
        return complex(math.exp(0.5 * self.beta**2) * self.t)

    def log_mean_abs(self):
        if self.t == 0.0:
            return -math.inf
        return 0.5 * self.beta**2 + math.log(self.t)

    def lambda_r(self, x):
        return 0.5 * x * x

    def lambda_r_prime(self, x):
        return float(x)

    def lambda_c(self, g):
        c = abs(math.cos(g * self._theta))
        return math.inf if c == 0.0 else -math.log(c)

    def phase_damping(self):
        return self.t

    def to_config(self):
        return {"model": self.model, "t": self.t, "beta": self.beta}


class DeterministicConstant(EnvironmentSpec):
    """xi identically equal to a nonzero complex constant c."""

    model = "constant"

    def __init__(self, c: complex):
        c = complex(c)
        if c == 0:
            raise DomainError("c must be nonzero")
        self.c = c
        self.beta_scale = 1.0
        self.gamma_scale = 1.0

    def radius_from_raw(self, raw):
        return np.full(raw.shape[0], abs(self.c))

    def phase_from_raw(self, raw):
        return np.full(raw.shape[0], cmath.phase(self.c))

    def radius_weight_from_raw(self, raw):
        return (np.full(raw.shape[0], abs(self.c)),
                np.full(raw.shape[0], self.c))

    def log_moment_abs(self, a):
        return a * math.log(abs(self.c))

    def mean_xi(self):
        return self.c

    def lambda_r(self, x):
        return x * math.log(abs(self.c))

    def lambda_r_prime(self, x):
        return math.log(abs(self.c))

    def lambda_c(self, g):
        return 0.0

    def phase_damping(self):
        return 1.0

    def to_config(self):
        return {"model": self.model, "c": [self.c.real, self.c.imag]}


class CustomLaw(EnvironmentSpec):
    """Law given by a polar sampler plus a finite moment table.

    ``log_moments`` maps exponents a to ln E|xi|^a; values between table
    nodes come from monotone cubic (PCHIP) interpolation on (a, ln m),
    which preserves the log-convex shape the classifiers rely on.  Queries
    outside the table raise NonIntegrable.
    """

    model = "custom"

    def __init__(self, polar, log_moments: dict, mean: complex,
                 independent: bool = False, damping: float | None = None,
                 lambda_c_fn=None):
        from scipy.interpolate import PchipInterpolator

        self._polar = polar
        pts = sorted(log_moments.items())
        if len(pts) < 2:
            raise DomainError("log_moments needs at least two table nodes")
        self._alphas = np.array([p[0] for p in pts], dtype=float)
        self._logm = np.array([p[1] for p in pts], dtype=float)
        self._interp = PchipInterpolator(self._alphas, self._logm)
        self._deriv = self._interp.derivative()
        self._mean = complex(mean)
        self.independent = bool(independent)
        self._damping = damping
        self._lambda_c_fn = lambda_c_fn
        self.beta_scale = 1.0
        self.gamma_scale = 1.0
        self.moment_alpha_max = float(self._alphas[-1])

    def polar_from_raw(self, raw):
        return self._polar(raw)

    def radius_from_raw(self, raw):
        return self._polar(raw)[0]

    def phase_from_raw(self, raw):
        if not self.independent:
            raise CoupledLaw("phase resampling requires independent radius/phase")
        return self._polar(raw)[1]

    def log_moment_abs(self, a):
        if a < self._alphas[0] - 1e-12 or a > self._alphas[-1] + 1e-12:
            raise NonIntegrable(
                f"moment exponent {a} outside table range "
                f"[{self._alphas[0]}, {self._alphas[-1]}]")
        return float(self._interp(a))

    def mean_xi(self):
        return self._mean

    def lambda_r(self, x):
        return self.log_moment_abs(x)

    def lambda_r_prime(self, x):
        if x < self._alphas[0] - 1e-12 or x > self._alphas[-1] + 1e-12:
            raise NonIntegrable(f"exponent {x} outside table range")
        return float(self._deriv(x))

    def lambda_c(self, g):
        if self._lambda_c_fn is None:
            raise CoupledLaw("law does not declare a phase moment function")
        return self._lambda_c_fn(g)

    def phase_damping(self):
        if self._damping is None:
            raise CoupledLaw("law does not declare independent phase damping")
        return self._damping

    def to_config(self):
        raise DomainError("custom laws are not config-serializable")


def spec_from_config(record: dict) -> EnvironmentSpec:
    """Build a law from a tagged config record, e.g. {"model": "gaussian", ...}."""
    rec = dict(record)
    model = rec.pop("model", None)
    rec.pop("b", None)  # branching factor belongs to the run, tolerated here
    try:
        if model == "gaussian":
            return GaussianIndep(beta=rec.pop("beta"), gamma=rec.pop("gamma"))
        if model == "uniform":
            return LogNormalUniformPhase(beta=rec.pop("beta"), gamma=rec.pop("gamma"))
        if model == "rademacher":
            return RademacherPhase(t=rec.pop("t"), beta=rec.pop("beta", 0.0))
        if model == "constant":
            c = rec.pop("c")
            if isinstance(c, (list, tuple)):
                c = complex(c[0], c[1])
            return DeterministicConstant(c)
    except KeyError as exc:
        raise DomainError(f"model {model!r} is missing field {exc}") from exc
    raise DomainError(f"unknown model {model!r}")


# Thin functional aliases matching the operation names used elsewhere.

def sample(spec: EnvironmentSpec, stream, count: int | None = None):
    return spec.sample(stream, count)


def lambda_r(spec: EnvironmentSpec, x: float) -> float:
    return spec.lambda_r(x)


def lambda_c(spec: EnvironmentSpec, g: float) -> float:
    return spec.lambda_c(g)


def moment_abs(spec: EnvironmentSpec, a: float) -> float:
    return spec.moment_abs(a)


def mean_xi(spec: EnvironmentSpec) -> complex:
    return spec.mean_xi()


def second_abs(spec: EnvironmentSpec) -> float:
    return spec.second_abs()
