"""Explicit monotone finite-difference solver for the perturbed HJB
integro-differential equation on the extended domain.

The time variable runs backward from the terminal slice ``s = T + delta``.
Drift terms are upwinded by sign, second derivatives are central, the
clock term uses a forward difference in ``w`` and the claim integral uses
exact CDF increments per cell.  The supremum over controls is taken over a
candidate set that contains the exact maximizer of the discrete expression
for each dividend level, so every update is a maximum of monotone maps.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import CFLError, ConfigError, NumericError
from .model import ModelParams, intensity
from .pide import DEFAULT_TOL, Tolerances, nonlocal_matrix, optimal_gamma
from .psi import Psi, PsiReport, PsiSpec, ZeroPsi, build_psi, validate_psi  # noqa: F401

OUTSIDE, INTERIOR, PINNED = 0, 1, 2


@dataclass(frozen=True)
class GridSpec:
    n_s: int = 40
    n_x: int = 60
    n_w: int = 40
    delta: float = 0.05
    eps_n: float = 0.05
    x_max: float | None = None
    x_query: float = 2.0

    def __post_init__(self):
        if self.n_s < 3 or self.n_x < 3 or self.n_w < 2:
            raise ConfigError("grid needs n_s >= 3, n_x >= 3 and n_w >= 2")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if self.eps_n < 0:
            raise ConfigError("eps_n must be nonnegative")
        if self.x_max is not None and not self.x_max > 0:
            raise ConfigError("x_max must be positive")

    def with_schedule(self, eps_n, delta):
        d = asdict(self)
        d.update(eps_n=eps_n, delta=delta)
        return GridSpec(**d)


@dataclass
class Grid:
    """Node coordinates of the extended domain.

    The stored ``s`` nodes split ``[0, T]`` uniformly and add the terminal
    slice ``T + delta``; ``x`` runs from ``-delta`` to ``x_max``; ``w`` covers
    the rectangle ``[-delta, T + 2 delta]`` and nodes with ``w > s + delta``
    are flagged outside.
    """

    s: np.ndarray
    x: np.ndarray
    w: np.ndarray
    delta: float
    eps_n: float
    T: float

    @classmethod
    def build(cls, spec: GridSpec, params: ModelParams, claim_mean: float) -> "Grid":
        T, d = params.T, spec.delta
        x_max = spec.x_max
        if x_max is None:
            xq = spec.x_query
            x_max = xq + 5.0 * claim_mean + (params.p + params.mu * xq) * T
        s = np.concatenate([np.linspace(0.0, T, spec.n_s - 1), [T + d]])
        x = np.linspace(-d, x_max, spec.n_x)
        w = np.linspace(-d, T + 2 * d, spec.n_w)
        return cls(s, x, w, d, spec.eps_n, T)

    @property
    def dx(self):
        return float(self.x[1] - self.x[0])

    @property
    def dw(self):
        return float(self.w[1] - self.w[0])

    @property
    def ds(self):
        return float(self.s[1] - self.s[0])

    @property
    def shape(self):
        return (self.s.size, self.x.size, self.w.size)

    def mask(self):
        m = np.full(self.shape, INTERIOR, dtype=np.int8)
        outside = self.w[None, :] > self.s[:, None] + self.delta + 1e-12
        m[np.broadcast_to(outside[:, None, :], self.shape)] = OUTSIDE
        m[:, 0, :] = np.where(m[:, 0, :] == OUTSIDE, OUTSIDE, PINNED)
        m[-1] = np.where(m[-1] == OUTSIDE, OUTSIDE, PINNED)
        return m

    def physical_mask(self):
        """Nodes of the physical domain ``0 <= s <= T, x >= 0, 0 <= w <= s``."""
        S, X, W = np.meshgrid(self.s, self.x, self.w, indexing="ij")
        tol = 1e-12
        return (S <= self.T + tol) & (X >= -tol) & (W >= -tol) & (W <= S + tol)

    def to_dict(self):
        return {"s": self.s.tolist(), "x": self.x.tolist(), "w": self.w.tolist(),
                "delta": self.delta, "eps_n": self.eps_n, "T": self.T}


@dataclass
class SchemeOptions:
    substeps: int | None = None  # per stored interval; None derives it from the CFL bound
    cfl_safety: float = 0.9
    tol: Tolerances = DEFAULT_TOL
    forced: tuple | None = None  # fixed (gamma, a) instead of the supremum


@dataclass
class ValueField:
    grid: Grid
    values: np.ndarray
    mask: np.ndarray
    params: ModelParams
    substeps: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def eps_n(self):
        return self.grid.eps_n

    @property
    def delta(self):
        return self.grid.delta

    def interpolator(self):
        g = self.grid
        return RegularGridInterpolator((g.s, g.x, g.w), self.values,
                                       bounds_error=False, fill_value=None)

    def __call__(self, s, x, w):
        arrs = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, x, w)))
        out = self.interpolator()(np.stack(arrs, -1).reshape(-1, 3)).reshape(arrs[0].shape)
        return float(out) if out.ndim == 0 else out

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.grid.s, self.grid.x, self.grid.w, self.values):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def _lam_on_w(waiting, w):
    return np.asarray(intensity(waiting, w, extend=True), dtype=float)


def cfl_bound(grid: Grid, params: ModelParams, lam_w) -> float:
    """Largest stable explicit step for the worst-case controls."""
    x = grid.x
    s2 = params.sigma ** 2
    eps = grid.eps_n
    diff = (s2 * x * x + eps) / grid.dx ** 2
    drifts = [np.abs(params.p + (params.r + (params.mu - params.r) * g) * x - a)
              for g in (0.0, 1.0) for a in (0.0, params.M)]
    b = np.max(drifts, axis=0)
    rate = diff + eps / grid.dw ** 2 + b / grid.dx + 1.0 / grid.dw + float(np.max(lam_w)) + params.c
    return float(1.0 / np.max(rate))


class _Operator:
    """Spatial part of the scheme on one ``(x, w)`` slab."""

    def __init__(self, grid: Grid, params: ModelParams, lam_w, claims, opts: SchemeOptions):
        self.g = grid
        self.p = params
        self.lam = lam_w[None, :]
        self.opts = opts
        self.N = nonlocal_matrix(claims, grid.dx, grid.x.size)
        self.X = grid.x[:, None]
        if opts.forced is not None:
            gam, a = opts.forced
            self.dividends = (float(a),)
            self.forced_gamma = float(gam)
        else:
            self.dividends = tuple(sorted({0.0, params.p, params.M}))
            self.forced_gamma = None

    def apply(self, V):
        g, P = self.g, self.p
        dx, dw, eps = g.dx, g.dw, g.eps_n
        Dp = np.zeros_like(V)
        Dm = np.zeros_like(V)
        D2x = np.zeros_like(V)
        Dp[:-1] = (V[1:] - V[:-1]) / dx
        Dm[1:] = (V[1:] - V[:-1]) / dx
        D2x[1:-1] = (V[2:] - 2.0 * V[1:-1] + V[:-2]) / dx ** 2
        # zero-gradient closure at both w edges
        Vw = np.concatenate([V[:, :1], V, V[:, -1:]], axis=1)
        Dwp = (Vw[:, 2:] - Vw[:, 1:-1]) / dw
        D2w = (Vw[:, 2:] - 2.0 * Vw[:, 1:-1] + Vw[:, :-2]) / dw ** 2
        jump = (self.N @ V[:, 0])[:, None] - V
        common = 0.5 * eps * (D2x + D2w) + Dwp + self.lam * jump - P.c * V
        D2x_ctrl = D2x  # rows 0 and -1 stay zero: v_xx := 0 at the top edge
        X = self.X
        s2 = P.sigma ** 2
        excess = P.mu - P.r
        best = None
        for a in self.dividends:
            if self.forced_gamma is not None:
                cands = [np.full_like(V, self.forced_gamma)]
            else:
                base = P.p + P.r * X - a
                with np.errstate(divide="ignore", invalid="ignore"):
                    g0 = np.where(X != 0, -base / (excess * X), 0.0)
                cands = [np.zeros_like(V), np.ones_like(V), np.clip(g0, 0.0, 1.0) + 0.0 * V,
                         optimal_gamma(X, Dp, D2x_ctrl, P, self.opts.tol),
                         optimal_gamma(X, Dm, D2x_ctrl, P, self.opts.tol)]
            for gam in cands:
                b = P.p + (P.r + excess * gam) * X - a
                val = (0.5 * s2 * gam * gam * X * X * D2x_ctrl
                       + np.maximum(b, 0.0) * Dp + np.minimum(b, 0.0) * Dm + a)
                best = val if best is None else np.maximum(best, val)
        return common + best


def solve_backward(grid: Grid, psi, params: ModelParams, waiting, claims,
                   opts: SchemeOptions | None = None) -> ValueField:
    """March the scheme from ``s = T + delta`` down to ``s = 0``.

    Nodes with ``x = -delta`` and the terminal slice take the values of
    ``psi``.  The ``w`` edges use a zero-gradient closure and are not pinned.
    """
    opts = opts or SchemeOptions()
    lam_w = _lam_on_w(waiting, grid.w)
    bound = cfl_bound(grid, params, lam_w)
    op = _Operator(grid, params, lam_w, claims, opts)
    X, W = np.meshgrid(grid.x, grid.w, indexing="ij")
    values = np.empty(grid.shape)
    V = np.asarray(psi(grid.s[-1], X, W), dtype=float).copy()
    values[-1] = V
    counts = []
    for j in range(grid.s.size - 2, -1, -1):
        span = grid.s[j + 1] - grid.s[j]
        if opts.substeps is None:
            m = max(1, int(math.ceil(span / (opts.cfl_safety * bound))))
        else:
            m = int(opts.substeps)
            if span / m > bound:
                raise CFLError(
                    f"time step {span / m:.3e} exceeds the stability bound {bound:.3e}; "
                    f"use at least {int(math.ceil(span / bound))} substeps per interval",
                    required_ds=bound)
        h = span / m
        for k in range(m):
            s_new = grid.s[j + 1] - (k + 1) * h if k < m - 1 else grid.s[j]
            V = V + h * op.apply(V)
            V[0, :] = psi(s_new, grid.x[0], grid.w)
            if not np.all(np.isfinite(V)):
                i, l = np.argwhere(~np.isfinite(V))[0]
                raise NumericError("non-finite value in the backward sweep",
                                   where={"s": float(s_new), "x": float(grid.x[i]),
                                          "w": float(grid.w[l])})
        counts.append(m)
        values[j] = V
    meta = {"cfl_bound": bound, "forced": opts.forced,
            "tolerances": asdict(opts.tol)}
    return ValueField(grid, values, grid.mask(), params, counts[::-1], meta)


# ------------------------------------------------------------ refinement study


@dataclass
class RefineLevel:
    eps_n: float
    delta: float
    shape: tuple
    sup_diff_to_previous: float | None


def compare_on_physical(fields):
    """Sup-norm differences between consecutive fields over the physical
    domain.

    Each pair is compared at the physical-domain nodes of the later (finer
    schedule) grid; the earlier field is interpolated multilinearly there.
    """
    diffs = []
    where = []
    for a, b in zip(fields[:-1], fields[1:]):
        g = b.grid
        m = g.physical_mask()
        S, X, W = np.meshgrid(g.s, g.x, g.w, indexing="ij")
        d = np.abs(a(S[m], X[m], W[m]) - b.values[m])
        k = int(np.argmax(d))
        diffs.append(float(d[k]))
        where.append((float(S[m][k]), float(X[m][k]), float(W[m][k])))
    return diffs, where


def compare_on_common_points(fields, n_x=121, n_w=9):
    """Sup-norm differences at a common lattice of the physical domain
    starting at ``x = 0``; inside the first cell this measures the linear
    interpolation towards the pinned ``x = -delta`` node as well."""
    g0 = fields[0].grid
    s_pts = g0.s[g0.s <= g0.T + 1e-12]
    x_pts = np.linspace(0.0, min(f.grid.x[-1] for f in fields), n_x)
    pts = np.concatenate([np.column_stack([np.full(n_x, s), x_pts, np.full(n_x, w)])
                          for s in s_pts for w in np.linspace(0.0, s, n_w)])
    evals = [f(pts[:, 0], pts[:, 1], pts[:, 2]) for f in fields]
    return [float(np.max(np.abs(b - a))) for a, b in zip(evals[:-1], evals[1:])]


def refine_study(base: GridSpec, schedule, params: ModelParams, waiting, claims,
                 psi_spec: PsiSpec | None = None, refine_grid: bool = False,
                 opts: SchemeOptions | None = None):
    """Solve along an ``(eps_n, delta)`` schedule and report the successive
    sup-norm differences over the physical domain.

    With ``refine_grid`` the node counts roughly double at each level.
    """
    if len(schedule) < 2:
        raise ConfigError("a refinement study needs at least two levels")
    fields = []
    spec = base
    for k, (eps, d) in enumerate(schedule):
        if refine_grid and k > 0:
            spec = GridSpec(2 * spec.n_s - 1, 2 * spec.n_x - 1, 2 * spec.n_w - 1,
                            d, eps, spec.x_max, spec.x_query)
        else:
            spec = spec.with_schedule(eps, d)
        grid = Grid.build(spec, params, claims.mean())
        lam_max = float(np.max(_lam_on_w(waiting, grid.w)))
        psi = build_psi(psi_spec or PsiSpec(), params, d, eps, lam_max)
        fields.append(solve_backward(grid, psi, params, waiting, claims, opts))
    diffs, where = compare_on_physical(fields)
    levels = [RefineLevel(eps, d, f.grid.shape, None if k == 0 else diffs[k - 1])
              for k, ((eps, d), f) in enumerate(zip(schedule, fields))]
    decreasing = all(b < a for a, b in zip(diffs[:-1], diffs[1:]))
    return {"levels": levels, "diffs": diffs, "where": where,
            "strictly_decreasing": decreasing,
            "diffs_common_points": compare_on_common_points(fields), "fields": fields}


# ------------------------------------------------------------------ export


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_field_csv(field: ValueField, path, sidecar_extra: dict | None = None):
    """CSV ``s,x,w,v`` for every node in C order plus a JSON sidecar."""
    g = field.grid
    with open(path, "w", newline="") as fh:
        fh.write("s,x,w,v\n")
        for i, s in enumerate(g.s):
            ss = _fmt(s)
            for k, x in enumerate(g.x):
                xs = _fmt(x)
                row = field.values[i, k]
                fh.write("".join(f"{ss},{xs},{_fmt(w)},{_fmt(v)}\n" for w, v in zip(g.w, row)))
    meta = {
        "schema": "v1",
        "kind": "value_field",
        "grid": {"n_s": int(g.s.size), "n_x": int(g.x.size), "n_w": int(g.w.size),
                 "T": g.T, "delta": g.delta, "eps_n": g.eps_n,
                 "x_min": float(g.x[0]), "x_max": float(g.x[-1]),
                 "w_min": float(g.w[0]), "w_max": float(g.w[-1]),
                 "s_nodes": [float(v) for v in g.s]},
        "params": asdict(field.params),
        "substeps": [int(m) for m in field.substeps],
        "scheme": {k: v for k, v in field.meta.items()},
        "values_sha256": field.digest(),
    }
    meta["scheme_hash"] = hashlib.sha256(
        json.dumps(meta["scheme"], sort_keys=True, default=str).encode()).hexdigest()
    if sidecar_extra:
        meta.update(sidecar_extra)
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
    return meta


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def read_field_csv(path) -> ValueField:
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    if meta.get("schema") != "v1" or meta.get("kind") != "value_field":
        raise ConfigError(f"{path}: not a v1 value-field sidecar")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    gm = meta["grid"]
    shape = (gm["n_s"], gm["n_x"], gm["n_w"])
    if data.shape != (shape[0] * shape[1] * shape[2], 4):
        raise ConfigError(f"{path}: row count does not match the sidecar grid")
    s = data[:, 0].reshape(shape)[:, 0, 0].copy()
    x = data[:, 1].reshape(shape)[0, :, 0].copy()
    w = data[:, 2].reshape(shape)[0, 0, :].copy()
    grid = Grid(s, x, w, gm["delta"], gm["eps_n"], gm["T"])
    params = ModelParams(**meta["params"])
    vf = ValueField(grid, data[:, 3].reshape(shape).copy(), grid.mask(), params,
                    meta.get("substeps", []), meta.get("scheme", {}))
    return vf
