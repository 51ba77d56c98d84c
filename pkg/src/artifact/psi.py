"""Boundary function imposed outside the computational domain.

For ``s <= T`` the function depends on ``x`` only: a profile ``h`` that
vanishes below ``x0 = -strip - rise``, rises with a quintic smoothstep slope,
keeps slope exactly ``slope_b`` on ``[-strip, 0]`` and then flattens.  The
flattening rate of the slope ``g = h'`` is chosen pointwise from the largest
negative curvature the drift, discount, jump and cutoff terms can absorb.

On the terminal collar ``(T, T + delta]`` the profile is multiplied by a C1
cutoff ``eta`` that reaches zero at ``T + delta`` and is translated to the
left at speed ``shift_speed``, so the time derivative picks up a positive
``eta * kappa' * g`` term that pays for the decay of ``eta``.

A smooth ramp ``chi`` in ``w`` makes the function vanish outside
``-1 <= w <= s + 1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import ConfigError
from .model import ModelParams


def smoothstep5(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def _smoothstep5_integral(t):
    """``int_0^t smoothstep5`` for ``t`` in [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    return t ** 4 * (2.5 - 3.0 * t + t * t)


def _smoothstep5_prime(t):
    inside = (t > 0) & (t < 1)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30.0 * t * t * (1.0 - t) ** 2, 0.0)


@dataclass(frozen=True)
class PsiSpec:
    """Shape parameters of the boundary function.

    ``k1`` caps the supremum, ``slope_b`` is the slope on the strip
    ``[-strip, 0]``, ``rise`` the width of the slope ramp below the strip,
    ``tail_onset`` the width over which flattening switches on,
    ``shift_speed`` and ``collar_ramp`` shape the terminal collar,
    ``budget_safety`` is the fraction of the curvature budget used and
    ``w_ramp`` the width of the ramps in ``w``.  ``k2`` defaults to ``M/2``.

    ``strip``, ``rise``, ``tail_onset`` and the integration ``step`` are
    fractions of the collar width ``delta``, so the profile and its supremum
    shrink with ``delta`` while the collar terms keep their balance.
    """

    k1: float = 0.1
    slope_b: float = 1.02
    strip: float = 0.08
    rise: float = 0.12
    tail_onset: float = 0.1
    shift_speed: float = 5.0
    collar_ramp: float = 0.1
    budget_safety: float = 0.8
    w_ramp: float = 0.5
    k2: float | None = None
    step: float = 2e-4

    def __post_init__(self):
        if not self.slope_b > 1:
            raise ConfigError(f"slope_b must exceed 1, got {self.slope_b}")
        if not self.k1 > 0:
            raise ConfigError(f"k1 must be positive, got {self.k1}")
        for name in ("strip", "rise", "tail_onset", "shift_speed", "step"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.collar_ramp < 0.5:
            raise ConfigError("collar_ramp must lie in (0, 0.5)")
        if not 0 < self.budget_safety <= 1:
            raise ConfigError("budget_safety must lie in (0, 1]")
        if not 0 < self.w_ramp <= 1:
            raise ConfigError("w_ramp must lie in (0, 1]")

    def to_dict(self):
        return asdict(self)


class Psi:
    """Vectorized callable ``Psi(s, x, w)`` with analytic derivatives."""

    def __init__(self, spec: PsiSpec, T: float, delta: float, xs, h, g):
        self.spec = spec
        self.T = float(T)
        self.delta = float(delta)
        self.x_lo = float(xs[0])
        self.x_hi = float(xs[-1])
        self.sup = float(h[-1])
        self.strip = spec.strip * delta
        self._h = CubicHermiteSpline(xs, h, g)
        self._g = self._h.derivative()
        self._gp = self._h.derivative(2)
        self.w_independent = True

    # collar pieces -----------------------------------------------------
    def _tau(self, s):
        return np.clip((np.asarray(s, dtype=float) - self.T) / self.delta, 0.0, 1.0)

    def eta(self, s):
        a = self.spec.collar_ramp
        k = 1.0 / (1.0 - a)
        t = self._tau(s)
        P = np.where(t < a, k * t * t / (2 * a),
                     np.where(t > 1 - a, 1.0 - k * (1 - t) ** 2 / (2 * a), k * (t - a / 2)))
        return 1.0 - P

    def eta_s(self, s):
        a = self.spec.collar_ramp
        k = 1.0 / (1.0 - a)
        t = self._tau(s)
        dP = np.where(t < a, k * t / a, np.where(t > 1 - a, k * (1 - t) / a, k))
        return -dP / self.delta

    def kappa(self, s):
        a = self.spec.collar_ramp
        t = self._tau(s)
        inner = np.where(t <= a, a * _smoothstep5_integral(t / a), a * 0.5 + (t - a))
        return self.delta * self.spec.shift_speed * inner

    def kappa_s(self, s):
        return self.spec.shift_speed * smoothstep5(self._tau(s) / self.spec.collar_ramp)

    def chi(self, s, w):
        r = self.spec.w_ramp
        return smoothstep5((w + 1.0) / r) * smoothstep5((s + 1.0 - w) / r)

    def _chi_parts(self, s, w):
        r = self.spec.w_ramp
        lo, up = (w + 1.0) / r, (s + 1.0 - w) / r
        L, U = smoothstep5(lo), smoothstep5(up)
        dL, dU = _smoothstep5_prime(lo) / r, _smoothstep5_prime(up) / r
        return L, U, dL, dU

    # profile -------------------------------------------------------------
    def profile(self, z, nu=0):
        z = np.asarray(z, dtype=float)
        zc = np.clip(z, self.x_lo, self.x_hi)
        if nu == 0:
            out = self._h(zc)
            return np.where(z <= self.x_lo, 0.0, np.where(z >= self.x_hi, self.sup, out))
        f = self._g if nu == 1 else self._gp
        return np.where((z <= self.x_lo) | (z >= self.x_hi), 0.0, f(zc))

    def _live(self, s):
        s = np.asarray(s, dtype=float)
        return (s > 0) & (s < self.T + self.delta)

    def __call__(self, s, x, w):
        s, x, w = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, x, w)))
        val = self.eta(s) * self.profile(x + self.kappa(s)) * self.chi(s, w)
        out = np.where(self._live(s), val, 0.0)
        return float(out) if out.ndim == 0 else out

    def derivatives(self, s, x, w):
        """Analytic ``(psi, psi_s, psi_x, psi_w, psi_xx, psi_ww)``."""
        s, x, w = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, x, w)))
        live = self._live(s)
        z = x + self.kappa(s)
        e, es, ks = self.eta(s), self.eta_s(s), self.kappa_s(s)
        h0, h1, h2 = self.profile(z), self.profile(z, 1), self.profile(z, 2)
        L, U, dL, dU = self._chi_parts(s, w)
        r = self.spec.w_ramp
        lo, up = (w + 1.0) / r, (s + 1.0 - w) / r
        ddL = _smoothstep5_second(lo) / r ** 2
        ddU = _smoothstep5_second(up) / r ** 2
        chi = L * U
        chi_s = L * dU
        chi_w = dL * U - L * dU
        chi_ww = ddL * U - 2 * dL * dU + L * ddU
        out = (
            e * h0 * chi,
            (es * h0 + e * ks * h1) * chi + e * h0 * chi_s,
            e * h1 * chi,
            e * h0 * chi_w,
            e * h2 * chi,
            e * h0 * chi_ww,
        )
        return tuple(np.where(live, o, 0.0) for o in out)

    def describe(self):
        return {"spec": self.spec.to_dict(), "T": self.T, "delta": self.delta,
                "sup": self.sup, "support_start": self.x_lo, "flat_from": self.x_hi}


def _smoothstep5_second(t):
    inside = (t > 0) & (t < 1)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t), 0.0)


class ZeroPsi:
    """Identically zero boundary data."""

    sup = 0.0
    w_independent = True

    def __call__(self, s, x, w):
        s, x, w = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, x, w)))
        out = np.zeros(s.shape)
        return float(out) if out.ndim == 0 else out

    def derivatives(self, s, x, w):
        z = np.zeros(np.broadcast(np.asarray(s), np.asarray(x), np.asarray(w)).shape)
        return (z,) * 6

    def describe(self):
        return {"kind": "zero"}


def build_psi(spec: PsiSpec, params: ModelParams, delta: float, eps_n: float,
              lam_max: float, max_width: float = 50.0) -> Psi:
    """Construct the boundary function for one ``(eps_n, delta)`` pair.

    ``lam_max`` bounds the claim intensity over the extended ``w`` range.
    Raises :class:`ConfigError` when the profile cannot flatten before
    exceeding ``spec.k1``.
    """
    if not delta > 0:
        raise ConfigError("delta must be positive")
    if not eps_n > 0:
        raise ConfigError("the profile construction needs eps_n > 0")
    k2 = params.M / 2 if spec.k2 is None else spec.k2
    if not 0 < k2 < params.M:
        raise ConfigError(f"k2 must lie in (0, M), got {k2}")
    b, hx = spec.slope_b, spec.step * delta
    strip, rise, onset = spec.strip * delta, spec.rise * delta, spec.tail_onset * delta
    x0 = -strip - rise
    n_rise = int(math.ceil(rise / hx))
    xr = np.linspace(x0, -strip, n_rise + 1)
    gr = b * smoothstep5((xr - x0) / rise)
    xs = [xr, np.array([0.0])]
    gs = [gr, np.array([b])]
    h_at_0 = float(np.sum(0.5 * (gr[1:] + gr[:-1]) * np.diff(xr))) + b * strip

    eta_max = 1.0 / ((1.0 - spec.collar_ramp) * delta)
    v = spec.shift_speed
    p, r, M, c = params.p, params.r, params.M, params.c
    land = 0.05 * b
    half_eps = 0.5 * eps_n
    n_max = int(max_width / hx) if max_width / hx < 5e7 else int(5e7)
    tail_x = np.empty(n_max)
    tail_g = np.empty(n_max)
    g, h, x = b, h_at_0, 0.0
    for i in range(n_max):
        lead = M - p - r * x
        budget = spec.budget_safety * min(k2 - lead * g - (lam_max + c) * h,
                                          k2 - eta_max * h + (v - lead) * g - c * h)
        rate = max(budget, 0.0) / half_eps * float(smoothstep5(x / onset))
        slope = -rate * min(1.0, g / land)
        g_new = g + hx * slope
        h += 0.5 * (g + g_new) * hx
        x += hx
        g = g_new
        tail_x[i] = x
        tail_g[i] = g
        if h > spec.k1:
            raise ConfigError(
                f"boundary profile exceeds k1={spec.k1} before flattening; "
                "increase k1 or reduce slope_b")
        if g < 1e-13:
            break
    else:
        raise ConfigError("boundary profile did not flatten; the curvature budget is exhausted")
    tail_x = tail_x[: i + 1]
    tail_g = tail_g[: i + 1]
    tail_g[-1] = 0.0
    xs.append(tail_x)
    gs.append(tail_g)
    xs = np.concatenate(xs)
    gs = np.concatenate(gs)
    hs = np.concatenate([[0.0], np.cumsum(0.5 * (gs[1:] + gs[:-1]) * np.diff(xs))])
    return Psi(spec, params.T, delta, xs, hs, gs)


# ------------------------------------------------------------------ validation


@dataclass
class PsiReport:
    """Worst residual of ``Psi_s + H^n(.., gamma=0, a=M) - (M - k2)`` and the
    smallest slope on the strip."""

    min_residual: float
    worst_node: tuple
    min_strip_slope: float
    slope_b: float
    k2: float
    n_nodes: int
    sup: float
    passed: bool
    residual_passed: bool
    slope_passed: bool

    def to_dict(self):
        return asdict(self)


def _fd_derivatives(psi, s, x, w, h1=1e-6, h2=1e-5):
    f = psi
    v = f(s, x, w)
    ps = (f(s + h1, x, w) - f(s - h1, x, w)) / (2 * h1)
    px = (f(s, x + h1, w) - f(s, x - h1, w)) / (2 * h1)
    pw = (f(s, x, w + h1) - f(s, x, w - h1)) / (2 * h1)
    pxx = (f(s, x + h2, w) - 2 * v + f(s, x - h2, w)) / (h2 * h2)
    pww = (f(s, x, w + h2) - 2 * v + f(s, x, w - h2)) / (h2 * h2)
    return v, ps, px, pw, pxx, pww


def validation_lattice(T, delta, s_extra=(), n_collar=120):
    s_vals = [1e-3, 0.25 * T, 0.5 * T, T]
    s_vals += list(T + delta * np.linspace(0.002, 0.998, n_collar))
    s_vals += [T + delta, T + delta + 0.5 * (1 - delta), T + 1.0]
    s_vals += [float(v) for v in s_extra if 0 < v <= T + 1]
    return np.unique(np.asarray(s_vals, dtype=float))


def validate_psi(psi, params: ModelParams, waiting, claims, eps_n: float, delta: float,
                 k2: float, s_nodes=(), hx: float | None = None, x_fine_span: float = 1.2,
                 x_far: float = 12.0, n_collar: int = 120) -> PsiReport:
    """Check the boundary-function inequality on a lattice covering D_1.

    Derivatives come from central finite differences of ``psi``; the claim
    integral is evaluated on a uniform grid anchored at ``x = -delta``.
    Lattice ``s`` values include dense probes inside the terminal collar,
    which a coarse solver grid would step over.
    """
    from .model import intensity
    from .pide import DerivBundle, ControlPair, hamiltonian_n, nonlocal_on_grid

    M = params.M
    if not 0 < k2 < M:
        raise ConfigError(f"k2 must lie in (0, M), got {k2}")
    T = params.T
    hx = 0.01 * delta if hx is None else hx
    s_vals = validation_lattice(T, delta, s_nodes, n_collar)
    # fine uniform grid anchored at -delta, then a coarse continuation
    x_fine = -delta + hx * np.arange(int(round((x_fine_span + delta) / hx)) + 1)
    coarse_h = 0.01
    x_coarse = -delta + coarse_h * np.arange(int(round((x_far + delta) / coarse_h)) + 1)
    x_left = np.linspace(-1.0, -delta, 6)[:-1]
    ctrl = ControlPair(0.0, M)
    worst = (math.inf, None)
    count = 0
    for s in s_vals:
        w_vals = np.array([-1.0, -0.95, -0.8, -0.6, -0.5, -delta, 0.0, 0.5 * s, s,
                           s + delta, s + 0.5, s + 0.6, s + 0.8, s + 0.95, s + 1.0])
        lam = intensity(waiting, w_vals, extend=True)
        for xs, step in ((x_fine, hx), (x_coarse, coarse_h)):
            slice_vals = psi(s, xs, -delta)
            jump = nonlocal_on_grid(slice_vals, claims, step)
            if step == coarse_h:
                keep = xs > x_fine[-1]
                xs, jump = xs[keep], jump[keep]
            X, W = np.meshgrid(xs, w_vals, indexing="ij")
            v, ps, px, pw, pxx, pww = _fd_derivatives(psi, s, X, W)
            bundle = DerivBundle(v, px, pw, pxx, pww, jump[:, None] - v)
            res = ps + hamiltonian_n(X, bundle, ctrl, params, lam[None, :], eps_n) - (M - k2)
            k = int(np.argmin(res))
            if res.flat[k] < worst[0]:
                worst = (float(res.flat[k]), (float(s), float(X.flat[k]), float(W.flat[k])))
            count += res.size
        # left of the collar the claim integral is empty
        X, W = np.meshgrid(x_left, w_vals, indexing="ij")
        v, ps, px, pw, pxx, pww = _fd_derivatives(psi, s, X, W)
        bundle = DerivBundle(v, px, pw, pxx, pww, -v)
        res = ps + hamiltonian_n(X, bundle, ctrl, params, lam[None, :], eps_n) - (M - k2)
        k = int(np.argmin(res))
        if res.flat[k] < worst[0]:
            worst = (float(res.flat[k]), (float(s), float(X.flat[k]), float(W.flat[k])))
        count += res.size

    strip = getattr(psi, "strip", 0.0)
    b = getattr(getattr(psi, "spec", None), "slope_b", math.nan)
    s_strip = np.concatenate([s_vals[s_vals <= T], np.asarray(s_nodes, dtype=float)])
    s_strip = s_strip[(s_strip > 0) & (s_strip <= T)]
    min_slope = math.inf
    if strip > 0:
        xp = np.linspace(-strip, 0.0, 41)
        for s in s_strip:
            S, X, W = np.meshgrid([s], xp, np.linspace(0.0, s, 5), indexing="ij")
            h1 = 1e-6
            slope = (psi(S, X + h1, W) - psi(S, X - h1, W)) / (2 * h1)
            min_slope = min(min_slope, float(slope.min()))
    residual_ok = worst[0] >= 0.0
    slope_ok = min_slope > 1.0 and min_slope >= b - 1e-6
    return PsiReport(worst[0], worst[1], min_slope, b, k2, count,
                     float(getattr(psi, "sup", math.nan)),
                     bool(residual_ok and slope_ok), bool(residual_ok), bool(slope_ok))
