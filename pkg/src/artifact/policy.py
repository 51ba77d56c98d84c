"""Feedback strategies extracted from a solved value field."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import convolve1d

from .errors import ConfigError
from .model import ModelParams, intensity
from .pide import DEFAULT_TOL, DerivBundle, Tolerances, maximize_hamiltonian, nonlocal_matrix
from .solver import Grid, ValueField, _fmt

VXX_FLOOR = -1e8


@dataclass
class PolicyField:
    grid: Grid
    gamma: np.ndarray
    a: np.ndarray
    params: ModelParams
    provenance: str
    n_flagged: int = 0
    value: np.ndarray | None = field(default=None, repr=False)
    lipschitz: float | None = None


def field_derivatives(vf: ValueField):
    """Central differences inside, one-sided at the edges of each axis."""
    g = vf.grid
    V = vf.values
    v_x = np.gradient(V, g.x, axis=1, edge_order=1)
    v_w = np.gradient(V, g.w, axis=2, edge_order=1)

    def second(A, h, axis):
        A = np.moveaxis(A, axis, 0)
        out = np.empty_like(A)
        out[1:-1] = (A[2:] - 2 * A[1:-1] + A[:-2]) / h ** 2
        out[0] = (A[0] - 2 * A[1] + A[2]) / h ** 2
        out[-1] = (A[-1] - 2 * A[-2] + A[-3]) / h ** 2
        return np.moveaxis(out, 0, axis)

    v_xx = np.maximum(second(V, g.dx, 1), VXX_FLOOR)
    v_ww = second(V, g.dw, 2) if g.w.size >= 3 else np.zeros_like(V)
    return v_x, v_w, v_xx, v_ww


def extract_policy(vf: ValueField, waiting, claims, tol: Tolerances = DEFAULT_TOL,
                   keep_value: bool = False) -> PolicyField:
    """Apply the Hamiltonian maximizer at every node of the field."""
    g = vf.grid
    P = vf.params
    v_x, v_w, v_xx, v_ww = field_derivatives(vf)
    N = nonlocal_matrix(claims, g.dx, g.x.size)
    post = np.einsum("ij,sj->si", N, vf.values[:, :, 0])
    i_delta = post[:, :, None] - vf.values
    lam = np.asarray(intensity(waiting, g.w, extend=True))[None, None, :]
    X = g.x[None, :, None] + 0.0 * vf.values
    d = DerivBundle(vf.values, v_x, v_w, v_xx, v_ww, i_delta)
    bad = np.zeros(vf.values.shape, dtype=bool)
    for name in ("v", "v_x", "v_w", "v_xx", "v_ww", "i_delta"):
        bad |= ~np.isfinite(getattr(d, name))
    if bad.any():
        warnings.warn(f"{int(bad.sum())} nodes with non-finite derivatives set to (0, 0)")
        for name in ("v", "v_x", "v_w", "v_xx", "v_ww", "i_delta"):
            setattr(d, name, np.where(bad, 0.0, getattr(d, name)))
    res = maximize_hamiltonian(X, d, P, lam, g.eps_n, tol)
    gamma = np.asarray(res.ctrl.gamma, dtype=float).copy()
    a = np.asarray(res.ctrl.a, dtype=float).copy()
    ruin = (X < 0) | bad
    gamma[ruin] = 0.0
    a[ruin] = 0.0
    return PolicyField(g, gamma, a, P, vf.digest(), int(bad.sum()),
                       np.asarray(res.value) if keep_value else None)


def _tent(radius: int):
    k = radius + 1 - np.abs(np.arange(-radius, radius + 1))
    return k / k.sum()


def discrete_lipschitz(pf: PolicyField) -> float:
    g = pf.grid
    out = 0.0
    for axis, coords in ((0, g.s), (1, g.x), (2, g.w)):
        if coords.size < 2:
            continue
        dg = np.abs(np.diff(pf.gamma, axis=axis))
        shape = [1, 1, 1]
        shape[axis] = coords.size - 1
        out = max(out, float(np.max(dg / np.diff(coords).reshape(shape))))
    return out


def mollify_policy(pf: PolicyField, radius: int) -> PolicyField:
    """Tent-kernel average of ``gamma`` over ``radius`` cells along every
    axis; ``a`` is left untouched."""
    if radius < 0 or int(radius) != radius:
        raise ConfigError("radius must be a nonnegative integer")
    gamma = pf.gamma.copy()
    if radius > 0:
        k = _tent(int(radius))
        for axis in range(3):
            gamma = convolve1d(gamma, k, axis=axis, mode="nearest")
        gamma = np.clip(gamma, 0.0, 1.0)
    out = PolicyField(pf.grid, gamma, pf.a.copy(), pf.params, pf.provenance, pf.n_flagged)
    out.lipschitz = discrete_lipschitz(out)
    return out


class FeedbackPolicy:
    """``(gamma, a)`` at arbitrary states: multilinear ``gamma``,
    nearest-node ``a``, coordinates clamped to the grid."""

    def __init__(self, pf: PolicyField):
        g = pf.grid
        self.pf = pf
        self._lo = np.array([g.s[0], g.x[0], g.w[0]])
        self._hi = np.array([g.s[-1], g.x[-1], g.w[-1]])
        self._gamma = RegularGridInterpolator((g.s, g.x, g.w), pf.gamma)
        self._axes = (g.s, g.x, g.w)
        self._a = pf.a

    @staticmethod
    def _nearest(axis, v):
        i = np.clip(np.searchsorted(axis, v), 1, axis.size - 1)
        left = axis[i - 1]
        right = axis[i]
        return np.where(v - left <= right - v, i - 1, i)

    def __call__(self, s, x, w):
        s, x, w = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, x, w)))
        pts = np.stack([s, x, w], -1)
        pts = np.clip(pts, self._lo, self._hi)
        gam = np.clip(self._gamma(pts), 0.0, 1.0)
        idx = [self._nearest(ax, pts[..., k]) for k, ax in enumerate(self._axes)]
        a = self._a[idx[0], idx[1], idx[2]]
        if gam.ndim == 0:
            return float(gam), float(a)
        return gam, a


class ConstantPolicy:
    def __init__(self, gamma: float, a: float):
        if not 0 <= gamma <= 1 or a < 0:
            raise ConfigError("constant policy needs gamma in [0, 1] and a >= 0")
        self.gamma = float(gamma)
        self.a = float(a)

    def __call__(self, s, x, w):
        s, x, w = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (s, x, w)))
        if s.ndim == 0:
            return self.gamma, self.a
        return np.full(s.shape, self.gamma), np.full(s.shape, self.a)

    def __repr__(self):
        return f"ConstantPolicy(gamma={self.gamma}, a={self.a})"


def closed_loop_coefficients(policy, s, x, w, params: ModelParams):
    """Drift, volatility and dividend rate of the controlled reserve."""
    gam, a = policy(s, x, w)
    x = np.asarray(x, dtype=float)
    drift = params.p + (params.r + (params.mu - params.r) * gam) * x - a
    vol = params.sigma * gam * x
    if np.ndim(drift) == 0:
        return {"drift": float(drift), "vol": float(vol), "dividend": float(a)}
    return {"drift": drift, "vol": vol, "dividend": a}


def write_policy_csv(pf: PolicyField, path):
    g = pf.grid
    with open(path, "w", newline="") as fh:
        fh.write("s,x,w,gamma,a\n")
        for i, s in enumerate(g.s):
            ss = _fmt(s)
            for k, x in enumerate(g.x):
                xs = _fmt(x)
                fh.write("".join(
                    f"{ss},{xs},{_fmt(w)},{_fmt(gm)},{_fmt(av)}\n"
                    for w, gm, av in zip(g.w, pf.gamma[i, k], pf.a[i, k])))
    from dataclasses import asdict
    meta = {"schema": "v1", "kind": "policy_field", "provenance": pf.provenance,
            "grid": {"n_s": int(g.s.size), "n_x": int(g.x.size), "n_w": int(g.w.size),
                     "T": g.T, "delta": g.delta, "eps_n": g.eps_n},
            "params": asdict(pf.params), "n_flagged": pf.n_flagged,
            "lipschitz": pf.lipschitz if pf.lipschitz is not None else discrete_lipschitz(pf)}
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return meta


def read_policy_csv(path) -> PolicyField:
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    if meta.get("schema") != "v1" or meta.get("kind") != "policy_field":
        raise ConfigError(f"{path}: not a v1 policy sidecar")
    gm = meta["grid"]
    shape = (gm["n_s"], gm["n_x"], gm["n_w"])
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != (shape[0] * shape[1] * shape[2], 5):
        raise ConfigError(f"{path}: row count does not match the sidecar grid")
    s = data[:, 0].reshape(shape)[:, 0, 0].copy()
    x = data[:, 1].reshape(shape)[0, :, 0].copy()
    w = data[:, 2].reshape(shape)[0, 0, :].copy()
    grid = Grid(s, x, w, gm["delta"], gm["eps_n"], gm["T"])
    return PolicyField(grid, data[:, 3].reshape(shape).copy(), data[:, 4].reshape(shape).copy(),
                       ModelParams(**meta["params"]), meta["provenance"], meta.get("n_flagged", 0))
