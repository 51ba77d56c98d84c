"""Hamiltonian of the dividend/investment problem, its maximizer and the
nonlocal claim operator.

Every function accepts scalars or numpy arrays (broadcast elementwise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .model import ModelParams


@dataclass
class DerivBundle:
    """Value, derivatives and nonlocal term ``i_delta`` at one or many nodes."""

    v: object = 0.0
    v_x: object = 0.0
    v_w: object = 0.0
    v_xx: object = 0.0
    v_ww: object = 0.0
    i_delta: object = 0.0


@dataclass
class ControlPair:
    gamma: object
    a: object


@dataclass
class MaxResult:
    ctrl: ControlPair
    value: object


@dataclass(frozen=True)
class Tolerances:
    """``x_tol``: surplus below which full investment is used; ``curv_tol``:
    curvature treated as nonnegative; ``tie_tol``: half-width of the band
    ``|v_x - 1|`` where the premium rate is paid out."""

    x_tol: float = 1e-6
    curv_tol: float = 0.0
    tie_tol: float = 1e-6


DEFAULT_TOL = Tolerances()


def hamiltonian(x, d: DerivBundle, ctrl: ControlPair, params: ModelParams, lam):
    g = ctrl.gamma
    a = ctrl.a
    diff = 0.5 * params.sigma ** 2 * g * g * x * x * d.v_xx
    drift = (params.p + (params.r + (params.mu - params.r) * g) * x - a) * d.v_x
    return diff + drift + d.v_w + lam * d.i_delta + (a - params.c * d.v)


def hamiltonian_n(x, d: DerivBundle, ctrl: ControlPair, params: ModelParams, lam, eps_n):
    return hamiltonian(x, d, ctrl, params, lam) + 0.5 * eps_n * (d.v_xx + d.v_ww)


def optimal_gamma(x, v_x, v_xx, params: ModelParams, tol: Tolerances = DEFAULT_TOL):
    """Maximizer over ``[0, 1]`` of ``sigma^2 x^2 v_xx g^2 / 2 + (mu - r) x v_x g``."""
    x, v_x, v_xx = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, v_x, v_xx)))
    s2 = params.sigma ** 2
    excess = params.mu - params.r
    concave = v_xx < -tol.curv_tol
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vertex = -excess * v_x / (s2 * x * v_xx)
    interior = np.clip(np.where(concave & (x != 0), vertex, 0.0), 0.0, 1.0)
    # convex or flat in gamma: compare the endpoints, ties go to 1
    ends = np.where(0.5 * s2 * x * x * v_xx + excess * x * v_x >= 0.0, 1.0, 0.0)
    g = np.where(concave, interior, ends)
    return np.where((x >= 0) & (x <= tol.x_tol), 1.0, g)


def optimal_dividend(v_x, params: ModelParams, tol: Tolerances = DEFAULT_TOL):
    v_x = np.asarray(v_x, dtype=float)
    return np.where(v_x < 1.0 - tol.tie_tol, params.M,
                    np.where(v_x > 1.0 + tol.tie_tol, 0.0, params.p))


def maximize_hamiltonian(x, d: DerivBundle, params: ModelParams, lam, eps_n,
                         tol: Tolerances = DEFAULT_TOL) -> MaxResult:
    """Closed-form maximizer of the perturbed Hamiltonian over controls."""
    for name in ("v", "v_x", "v_w", "v_xx", "v_ww", "i_delta"):
        if not np.all(np.isfinite(getattr(d, name))):
            raise NumericError(f"non-finite {name} passed to the maximizer")
    gamma = optimal_gamma(x, d.v_x, d.v_xx, params, tol)
    a = optimal_dividend(d.v_x, params, tol)
    if np.ndim(gamma) == 0 and np.ndim(a) == 0:
        gamma, a = float(gamma), float(a)
    ctrl = ControlPair(gamma, a)
    return MaxResult(ctrl, hamiltonian_n(x, d, ctrl, params, lam, eps_n))


# ------------------------------------------------------------ nonlocal operator


def cell_weights(claims, h: float, n_cells: int):
    """Weights of the claim integral on a uniform grid of spacing ``h``.

    Cell ``c`` covers claim sizes ``[c h, (c+1) h]``.  With the integrand
    reconstructed linearly between ``x - c h`` and ``x - (c+1) h``, the cell
    contributes ``near[c] * v(x - c h) + far[c] * v(x - (c+1) h)``, where
    ``far[c] = int (u - c h) / h dG`` and ``near[c] = mass[c] - far[c]``.
    Both are nonnegative, which keeps the discrete operator monotone.
    """
    edges = h * np.arange(n_cells + 1)
    G = np.asarray(claims.cdf(edges), dtype=float)
    mass = np.diff(G)
    mass[0] = G[1]  # includes any atom at zero
    intG = np.asarray(claims.cdf_integral(edges[:-1], edges[1:]), dtype=float)
    far = np.clip(G[1:] - intG / h, 0.0, None)
    far = np.minimum(far, mass)
    near = mass - far
    return near, far


def nonlocal_matrix(claims, h: float, n: int):
    """Dense lower-triangular map from slice values to ``int v(x_i - u) dG``
    on the grid ``x_i = x_0 + i h`` where ``x_0`` is the lower collar edge."""
    near, far = cell_weights(claims, h, max(n - 1, 1))
    N = np.zeros((n, n))
    for c in range(n - 1):
        rows = np.arange(c + 1, n)
        N[rows, rows - c] += near[c]
        N[rows, rows - c - 1] += far[c]
    return N


def nonlocal_on_grid(values, claims, h: float):
    """``int_0^{x_i - x_0} v(x_i - u) dG(u)`` for every node of a uniform grid.

    ``values`` has the grid along its last axis.  Direct convolution keeps
    the sum a nonnegative combination of the inputs.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    near, far = cell_weights(claims, h, max(n - 1, 1))
    flat = values.reshape(-1, n)
    out = np.zeros_like(flat)
    for k, row in enumerate(flat):
        cn = np.convolve(row, near)[:n]
        # a full convolution also holds the c = i term near[i] * v_0
        cn[1:n - 1] -= near[1:n - 1] * row[0]
        out[k, 1:] = cn[1:] + np.convolve(row, far)[: n - 1]
    return out.reshape(values.shape)


def nonlocal_integral(field_slice, v_here: float, x: float, delta: float, claims,
                      h: float = 1e-3) -> float:
    """``int_0^{x+delta} field_slice(x - u) dG(u) - v_here``.

    ``field_slice`` is the post-claim section ``u -> v(s, u, -delta)``
    evaluated on a uniform grid from ``-delta`` to ``x`` with spacing close
    to ``h``.
    """
    span = x + delta
    if span <= 0:
        return -float(v_here)
    n_cells = max(int(math.ceil(span / h)), 1)
    step = span / n_cells
    nodes = -delta + step * np.arange(n_cells + 1)
    nodes[-1] = x
    try:
        vals = np.asarray(field_slice(nodes), dtype=float)
        if vals.shape != nodes.shape:
            raise TypeError
    except (TypeError, ValueError):
        vals = np.asarray([field_slice(z) for z in nodes], dtype=float)
    near, far = cell_weights(claims, step, n_cells)
    # node n_cells - c is x - c step
    idx = n_cells - np.arange(n_cells)
    total = math.fsum(near * vals[idx]) + math.fsum(far * vals[idx - 1])
    return total - float(v_here)
