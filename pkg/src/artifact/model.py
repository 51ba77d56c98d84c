"""Economic parameters, renewal and claim laws, samplers and the
density of the last claim epoch before a fixed time.

Waiting-time laws are described by their intensity (hazard) function.  The
state of the renewal clock is ``w``, the time elapsed since the last claim,
so the conditional survival of the next claim is ``Fbar(w + t) / Fbar(w)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np
from scipy import integrate, special

from .errors import ConfigError, DomainError, NumericError

SERIES_TOL = 1e-10
OVERFLOW_GUARD = 1e12


@dataclass(frozen=True)
class ModelParams:
    """Premium ``p``, risk-free rate ``r``, stock drift ``mu`` and volatility
    ``sigma``, discount rate ``c``, maximal dividend rate ``M`` and horizon
    ``T``."""

    p: float
    r: float
    mu: float
    sigma: float
    c: float
    M: float
    T: float

    def __post_init__(self):
        for name in ("p", "r", "mu", "sigma", "c", "M", "T"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"{name} must be a finite number, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.p <= 0 or self.r <= 0 or self.sigma <= 0 or self.c <= 0 or self.T <= 0:
            raise ConfigError("p, r, sigma, c and T must be positive")
        if self.mu <= self.r:
            raise ConfigError(f"mu must exceed r (mu={self.mu}, r={self.r})")
        if self.M < self.p:
            raise ConfigError(f"M must be at least p (M={self.M}, p={self.p})")

    def max_discounted_dividends(self, horizon: float | None = None) -> float:
        """Dividends paid at the maximal rate ``M`` over ``horizon``, discounted."""
        h = self.T if horizon is None else horizon
        return self.M * (-math.expm1(-self.c * h)) / self.c


@dataclass(frozen=True)
class State:
    s: float
    x: float
    w: float

    def in_physical(self, T: float) -> bool:
        return 0.0 <= self.s <= T and self.x >= 0.0 and 0.0 <= self.w <= self.s

    def in_extended(self, T: float, delta: float) -> bool:
        return (0.0 < self.s <= T + delta and self.x >= -delta
                and -delta <= self.w <= self.s + delta)


# ---------------------------------------------------------------- waiting laws


def _as_float_array(a):
    return np.asarray(a, dtype=float)


def _check_nonneg(w, what="w"):
    w = _as_float_array(w)
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise DomainError(f"{what} must be finite and nonnegative")
    return w


@dataclass(frozen=True)
class Exponential:
    """Poisson claim arrivals: constant intensity ``rate``."""

    rate: float

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ConfigError(f"exponential rate must be positive, got {self.rate}")
        object.__setattr__(self, "rate", float(self.rate))

    def _rate(self, w):
        return np.full_like(_as_float_array(w), self.rate)

    def _cum_hazard(self, w):
        return self.rate * _as_float_array(w)

    def rate_max(self, lo: float, hi: float) -> float:
        return self.rate

    def mean(self) -> float:
        return 1.0 / self.rate


@dataclass(frozen=True)
class Erlang:
    """Sum of ``k`` independent exponential stages with rate ``rate``.

    For ``k >= 2`` the intensity vanishes at ``w = 0`` and increases to
    ``rate``; it is positive on every interval bounded away from zero.
    """

    k: int
    rate: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"Erlang shape must be a positive integer, got {self.k}")
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ConfigError(f"Erlang rate must be positive, got {self.rate}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "rate", float(self.rate))

    def _partial_sums(self, w):
        # sum_{j<k} (rate w)^j / j!  and the last term (rate w)^{k-1}/(k-1)!
        z = self.rate * _as_float_array(w)
        term = np.ones_like(z)
        total = np.ones_like(z)
        for j in range(1, self.k):
            term = term * z / j
            total = total + term
        return total, term

    def _rate(self, w):
        total, last = self._partial_sums(np.maximum(w, 0.0))
        return self.rate * last / total

    def _cum_hazard(self, w):
        w = _as_float_array(w)
        total, _ = self._partial_sums(np.maximum(w, 0.0))
        return self.rate * w - np.log(total)

    def density(self, t):
        t = _as_float_array(t)
        return self.rate * np.exp(
            (self.k - 1) * np.log(np.maximum(self.rate * t, 1e-300))
            - self.rate * t - special.gammaln(self.k))

    def rate_max(self, lo: float, hi: float) -> float:
        return float(self._rate(hi))

    def mean(self) -> float:
        return self.k / self.rate


@dataclass(frozen=True)
class TabulatedIntensity:
    """Piecewise-linear intensity through ``(nodes[i], values[i])``.

    The cumulative hazard is the exact piecewise-quadratic integral.
    Evaluation outside ``[nodes[0], nodes[-1]]`` raises unless a caller asks
    for the constant extension explicitly.
    """

    nodes: tuple
    values: tuple
    _cum: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        n = np.asarray(self.nodes, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if n.ndim != 1 or n.shape != v.shape or n.size < 2:
            raise ConfigError("tabulated intensity needs at least two (node, value) pairs")
        if not (np.all(np.isfinite(n)) and np.all(np.isfinite(v))):
            raise ConfigError("tabulated intensity must be finite")
        if n[0] != 0.0:
            raise ConfigError("tabulated intensity must start at w = 0")
        if np.any(np.diff(n) <= 0):
            raise ConfigError("tabulated intensity nodes must be strictly increasing")
        if np.any(v <= 0):
            raise ConfigError("tabulated intensity values must be positive")
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(n))])
        object.__setattr__(self, "nodes", tuple(float(a) for a in n))
        object.__setattr__(self, "values", tuple(float(a) for a in v))
        object.__setattr__(self, "_cum", tuple(float(a) for a in cum))

    @property
    def domain(self):
        return self.nodes[0], self.nodes[-1]

    def _check(self, w, extend):
        w = _as_float_array(w)
        if not extend:
            lo, hi = self.domain
            if np.any(~np.isfinite(w)) or np.any(w < lo) or np.any(w > hi):
                raise DomainError(f"w outside the tabulated domain [{lo}, {hi}]")
        return w

    def _rate(self, w, extend=False):
        w = self._check(w, extend)
        # np.interp extends with the end values
        return np.interp(w, self.nodes, self.values)

    def _cum_hazard(self, w, extend=False):
        w = self._check(w, extend)
        n = np.asarray(self.nodes)
        v = np.asarray(self.values)
        cum = np.asarray(self._cum)
        wc = np.clip(w, n[0], n[-1])
        i = np.clip(np.searchsorted(n, wc, side="right") - 1, 0, n.size - 2)
        h = wc - n[i]
        slope = (v[i + 1] - v[i]) / (n[i + 1] - n[i])
        out = cum[i] + v[i] * h + 0.5 * slope * h * h
        out = out + v[-1] * np.maximum(w - n[-1], 0.0) + v[0] * np.minimum(w - n[0], 0.0)
        return out

    def rate_max(self, lo: float, hi: float) -> float:
        n = np.asarray(self.nodes)
        inner = np.asarray(self.values)[(n > lo) & (n < hi)]
        ends = self._rate(np.array([lo, hi]), extend=True)
        return float(max(ends.max(), inner.max() if inner.size else -np.inf))

    def mean(self) -> float:
        val, _ = integrate.quad(lambda t: math.exp(-float(self._cum_hazard(t, extend=True))),
                                0.0, np.inf, limit=200)
        return val

    @classmethod
    def from_csv(cls, path) -> "TabulatedIntensity":
        n, v = _read_two_columns(path)
        return cls(tuple(n), tuple(v))


WaitingLaw = Union[Exponential, Erlang, TabulatedIntensity]


def _rate(law, w, extend):
    if isinstance(law, TabulatedIntensity):
        return law._rate(w, extend)
    return law._rate(w)


def _cum_hazard(law, w, extend):
    if isinstance(law, TabulatedIntensity):
        return law._cum_hazard(w, extend)
    return law._cum_hazard(w)


def intensity(law: WaitingLaw, w, extend: bool = False):
    """Intensity ``lambda(w)`` of the waiting-time law.

    ``extend=True`` continues a tabulated intensity by its end values, which
    the solver needs on the collar ``w < 0`` and ``w > T + 1``.
    """
    w_arr = _as_float_array(w)
    if not extend:
        _check_nonneg(w_arr)
        out = _rate(law, w_arr, False)
    else:
        out = _rate(law, np.maximum(w_arr, 0.0), True)
    return float(out) if np.ndim(w) == 0 else out


def survival(law: WaitingLaw, t, extend: bool = False):
    """Unconditional survival ``Fbar(t)``."""
    t_arr = _check_nonneg(t, "t")
    out = np.exp(-_cum_hazard(law, t_arr, extend))
    return float(out) if np.ndim(t) == 0 else out


def survival_delayed(law: WaitingLaw, w, t, extend: bool = False):
    """Probability of no claim during ``t`` more time units given age ``w``."""
    w_arr = _check_nonneg(w)
    t_arr = _check_nonneg(t, "t")
    if isinstance(law, Exponential):
        out = np.exp(-law.rate * t_arr) * np.ones_like(w_arr)
    else:
        out = np.exp(-(_cum_hazard(law, w_arr + t_arr, extend) - _cum_hazard(law, w_arr, extend)))
    return float(out) if np.ndim(out) == 0 else out


def waiting_time_from_uniform(law: WaitingLaw, w, u, extend: bool = True):
    """Invert the conditional survival: the ``t`` with ``survival_delayed = u``.

    ``u`` must lie in ``(0, 1]``.  Exponential and Erlang laws are inverted in
    closed form; tabulated laws by bisection on the cumulative hazard.
    """
    w = _as_float_array(w)
    u = _as_float_array(u)
    if np.any(~(u > 0)) or np.any(u > 1):
        raise DomainError("uniform draws must lie in (0, 1]")
    target = -np.log(u)
    if isinstance(law, Exponential):
        return target / law.rate + 0.0 * w
    if isinstance(law, Erlang):
        q = np.exp(-(_cum_hazard(law, w, True) + target))
        # Fbar(w + t) = u Fbar(w) with Fbar(y) = Q(k, rate y)
        y = special.gammainccinv(law.k, q) / law.rate
        return np.maximum(y - w, 0.0)
    return _bisect_waiting(law, w, target, extend)


def _bisect_waiting(law, w, target, extend, iters=200, tol=1e-13):
    w, target = np.broadcast_arrays(w, target)
    base = _cum_hazard(law, w, extend)
    goal = base + target
    if not extend and np.any(goal > law._cum[-1]):
        raise DomainError("waiting time falls beyond the tabulated domain")
    lo = np.zeros(w.shape)
    # the hazard is at least min(values) everywhere
    hi = target / min(law.values) + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = _cum_hazard(law, w + mid, True) >= goal
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, hi)):
            return 0.5 * (lo + hi)
    raise NumericError("bisection for the waiting time did not converge")


def sample_first_waiting(law: WaitingLaw, w, rng: np.random.Generator, extend: bool = True):
    """Draw the time to the next claim for a clock of age ``w``."""
    _check_nonneg(w)
    u = 1.0 - rng.random(np.shape(w))  # in (0, 1]
    out = waiting_time_from_uniform(law, w, u, extend)
    return float(out) if np.ndim(w) == 0 else out


# ------------------------------------------------------------------ claim laws


@dataclass(frozen=True)
class ExponentialClaims:
    mean_size: float

    def __post_init__(self):
        if not (self.mean_size > 0 and math.isfinite(self.mean_size)):
            raise ConfigError(f"claim mean must be positive, got {self.mean_size}")
        object.__setattr__(self, "mean_size", float(self.mean_size))

    def cdf(self, u):
        u = _as_float_array(u)
        return np.where(u >= 0, -np.expm1(-np.maximum(u, 0.0) / self.mean_size), 0.0)

    def cdf_integral(self, a, b):
        """Exact ``int_a^b G(u) du`` for ``0 <= a <= b``."""
        a = np.maximum(_as_float_array(a), 0.0)
        b = np.maximum(_as_float_array(b), 0.0)
        th = self.mean_size
        return (b - a) + th * np.exp(-a / th) * np.expm1(-(b - a) / th)

    def from_uniform(self, u):
        return -self.mean_size * np.log(_as_float_array(u))

    def mean(self) -> float:
        return self.mean_size


@dataclass(frozen=True)
class TabulatedCdf:
    """Piecewise-linear claim CDF through ``(nodes[i], values[i])``,
    starting at 0 and ending at 1."""

    nodes: tuple
    values: tuple
    _icum: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        n = np.asarray(self.nodes, dtype=float)
        g = np.asarray(self.values, dtype=float)
        if n.ndim != 1 or n.shape != g.shape or n.size < 2:
            raise ConfigError("tabulated CDF needs at least two (node, value) pairs")
        if not (np.all(np.isfinite(n)) and np.all(np.isfinite(g))):
            raise ConfigError("tabulated CDF must be finite")
        if n[0] < 0 or np.any(np.diff(n) <= 0):
            raise ConfigError("CDF nodes must be nonnegative and strictly increasing")
        if np.any(np.diff(g) < 0) or g[0] != 0.0 or g[-1] != 1.0:
            raise ConfigError("CDF values must be nondecreasing from 0 to 1")
        icum = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(n))])
        object.__setattr__(self, "nodes", tuple(float(a) for a in n))
        object.__setattr__(self, "values", tuple(float(a) for a in g))
        object.__setattr__(self, "_icum", tuple(float(a) for a in icum))

    def cdf(self, u):
        return np.interp(_as_float_array(u), self.nodes, self.values, left=0.0, right=1.0)

    def _antiderivative(self, u):
        u = _as_float_array(u)
        n = np.asarray(self.nodes)
        g = np.asarray(self.values)
        icum = np.asarray(self._icum)
        uc = np.clip(u, n[0], n[-1])
        i = np.clip(np.searchsorted(n, uc, side="right") - 1, 0, n.size - 2)
        h = uc - n[i]
        slope = (g[i + 1] - g[i]) / (n[i + 1] - n[i])
        out = icum[i] + g[i] * h + 0.5 * slope * h * h
        return out + np.maximum(u - n[-1], 0.0)

    def cdf_integral(self, a, b):
        return self._antiderivative(b) - self._antiderivative(a)

    def from_uniform(self, u):
        u = _as_float_array(u)
        n = np.asarray(self.nodes)
        g = np.asarray(self.values)
        i = np.clip(np.searchsorted(g, u, side="left") - 1, 0, n.size - 2)
        dg = g[i + 1] - g[i]
        frac = np.where(dg > 0, (u - g[i]) / np.where(dg > 0, dg, 1.0), 1.0)
        return n[i] + np.clip(frac, 0.0, 1.0) * (n[i + 1] - n[i])

    def mean(self) -> float:
        n = self.nodes[-1]
        return float(n - self._antiderivative(n))

    @classmethod
    def from_csv(cls, path) -> "TabulatedCdf":
        n, v = _read_two_columns(path)
        return cls(tuple(n), tuple(v))


@dataclass(frozen=True)
class PointMass:
    """Degenerate claim size; ``at = 0`` gives claims that only reset the clock."""

    at: float = 0.0

    def __post_init__(self):
        if not (self.at >= 0 and math.isfinite(self.at)):
            raise ConfigError("point-mass claim size must be finite and nonnegative")
        object.__setattr__(self, "at", float(self.at))

    def cdf(self, u):
        return np.where(_as_float_array(u) >= self.at, 1.0, 0.0)

    def cdf_integral(self, a, b):
        a = _as_float_array(a)
        b = _as_float_array(b)
        return np.maximum(b - self.at, 0.0) - np.maximum(a - self.at, 0.0)

    def from_uniform(self, u):
        return np.full_like(_as_float_array(u), self.at)

    def mean(self) -> float:
        return self.at


ClaimLaw = Union[ExponentialClaims, TabulatedCdf, PointMass]


def claim_cdf(law: ClaimLaw, u):
    out = law.cdf(u)
    return float(out) if np.ndim(u) == 0 else out


def sample_claim(law: ClaimLaw, rng: np.random.Generator, size=None):
    u = 1.0 - rng.random(size)
    out = law.from_uniform(u)
    return float(out) if size is None else out


def _read_two_columns(path):
    data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    if data.shape[1] != 2:
        raise ConfigError(f"{path}: expected two columns (node, value)")
    return data[:, 0], data[:, 1]


# ------------------------------------------------ last claim epoch before t


def _poisson_tail(n, mean):
    """P(Poisson(mean) >= n)."""
    if n <= 0:
        return 1.0
    return float(special.gammainc(n, mean))


def _erlang_renewal_density(law: Erlang, u):
    # sum_n f_{nk}(u), where f_m is the Erlang(m, rate) density
    u = np.atleast_1d(_as_float_array(u))
    lam = law.rate
    z = lam * u
    out = np.zeros_like(u)
    n = 1
    while True:
        m = n * law.k
        out += lam * np.exp((m - 1) * np.log(np.maximum(z, 1e-300)) - z - special.gammaln(m))
        if lam * _poisson_tail(m, float(z.max())) < SERIES_TOL:
            return out
        n += 1
        if n > 100000:
            raise NumericError("renewal series did not reach its tolerance")


@lru_cache(maxsize=32)
def _tabulated_renewal_table(law: TabulatedIntensity, u_max: float, n_grid: int = 4001):
    y = np.linspace(0.0, u_max, n_grid)
    h = y[1] - y[0]
    f = law._rate(y) * np.exp(-law._cum_hazard(y))
    lam_max = max(law.values)
    total = f.copy()
    fn = f.copy()
    for n in range(2, 100000):
        if lam_max * _poisson_tail(n - 1, lam_max * u_max) < SERIES_TOL:
            break
        # trapezoid convolution fn * f on the uniform grid
        conv = np.convolve(fn, f)[:n_grid] * h
        conv -= 0.5 * h * (fn[0] * f + f[0] * fn)
        fn = conv
        total += fn
    else:
        raise NumericError("renewal series did not reach its tolerance")
    return y, total


def renewal_density(law: WaitingLaw, u, u_max: float | None = None):
    """Renewal density ``sum_n f_n(u)`` of the claim epochs."""
    u_arr = _as_float_array(u)
    if isinstance(law, Exponential):
        out = np.full_like(u_arr, law.rate)
    elif isinstance(law, Erlang):
        out = _erlang_renewal_density(law, u_arr).reshape(u_arr.shape)
    else:
        hi = float(np.max(u_arr)) if u_max is None else float(u_max)
        y, tab = _tabulated_renewal_table(law, hi)
        out = np.interp(u_arr, y, tab)
    return float(out) if np.ndim(u) == 0 else out


def sigma_nt_density(law: WaitingLaw, t: float, u, u_max: float | None = None):
    """Density on ``(0, t]`` of the last claim epoch before ``t``.

    The law also has an atom of mass ``Fbar(t)`` at ``u = 0`` (no claim by
    ``t``); see :func:`sigma_nt_atom`.
    """
    u_arr = _as_float_array(u)
    if np.any(~(u_arr > 0)) or np.any(u_arr > t):
        raise DomainError("density defined only for 0 < u <= t")
    if isinstance(law, Exponential):
        out = law.rate * np.exp(-law.rate * (t - u_arr))
    else:
        out = survival(law, t - u_arr) * renewal_density(
            law, u_arr, u_max if u_max is not None else t)
    return float(out) if np.ndim(u) == 0 else out


def sigma_nt_atom(law: WaitingLaw, t: float) -> float:
    """Probability of no claim up to ``t``."""
    return survival(law, t)


@dataclass(frozen=True)
class IntegrabilityResult:
    value: float
    closed_bound: float | None
    passed: bool
    gamma_prime: float
    T: float


def closed_integrability_bound(law: WaitingLaw, gamma_prime: float, T: float):
    """``2 rate^g / (5 - g) * T^((5 - g) / 2)`` for exponential and Erlang laws."""
    if isinstance(law, (Exponential, Erlang)):
        g = gamma_prime
        return 2.0 * law.rate ** g / (5.0 - g) * T ** ((5.0 - g) / 2.0)
    return None


def integrability_check(law: WaitingLaw, gamma_prime: float, T: float) -> IntegrabilityResult:
    """Integrate ``t^((1-g)/2) f(t, u)^g`` over ``0 < u < t < T``.

    The outer variable is changed to ``t = tau^2`` and integrated with the
    algebraic weight ``tau^(2-g)``, which absorbs the singularity at 0.
    """
    g = float(gamma_prime)
    if not (1.0 < g < 5.0):
        raise ConfigError(f"exponent must lie in (1, 5), got {gamma_prime}")
    if T < 0:
        raise ConfigError("horizon must be nonnegative")
    bound = closed_integrability_bound(law, g, T)
    if T == 0:
        return IntegrabilityResult(0.0, bound, True, g, T)

    def inner(t):
        if t <= 0:
            return 0.0
        val, _ = integrate.quad(lambda u: sigma_nt_density(law, t, u, u_max=T) ** g,
                                0.0, t, epsabs=1e-13, epsrel=1e-11, limit=200)
        return val

    root = math.sqrt(T)
    try:
        value, _ = integrate.quad(lambda tau: 2.0 * inner(tau * tau), 0.0, root,
                                  weight="alg", wvar=(2.0 - g, 0.0),
                                  epsabs=1e-12, epsrel=1e-10, limit=200)
    except (OverflowError, FloatingPointError):
        value = math.inf
    passed = math.isfinite(value) and value < OVERFLOW_GUARD
    if passed and bound is not None:
        passed = value <= bound + 1e-4
    return IntegrabilityResult(float(value), bound, bool(passed), g, float(T))
