"""Acceptance harness: Monte Carlo against the solved field, ordering and
bound checks on the field, integrability and boundary-function checks, and
closed-form end-to-end oracles.

Each check returns one :class:`CheckResult`.  A :class:`VerificationReport`
passes only if every requested check is present exactly once and passed;
a missing or crashed check fails the report.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .config import ALL_CHECKS, RunConfig
from .errors import ConfigError, NumericError
from .model import (Erlang, Exponential, PointMass, State, integrability_check,
                    closed_integrability_bound)
from .pide import ControlPair, DerivBundle, hamiltonian_n, maximize_hamiltonian
from .policy import ConstantPolicy, FeedbackPolicy, extract_policy, mollify_policy
from .psi import ZeroPsi, build_psi, validate_psi
from .sim import SimConfig, estimate_J
from .solver import (OUTSIDE, Grid, GridSpec, SchemeOptions, _lam_on_w, refine_study,
                     solve_backward)

MONOTONE_TOL = 1e-12
W_SPREAD_TOL = 1e-10
MAXIMIZER_TOL = 1e-9
CAUCHY_TOL = 0.05
BASELINE_RTOL = 1e-6


@dataclass
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    runtime: float = 0.0
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} {self.name}: measured={self.measured:.6g} "
                f"tolerance={self.tolerance:.6g} ({self.runtime:.1f}s)")


@dataclass
class VerificationReport:
    entries: list
    expected: tuple
    seed: int = 0
    source: str = ""

    def names(self):
        return [e.name for e in self.entries]

    @property
    def missing(self):
        return [n for n in self.expected if n not in self.names()]

    @property
    def duplicates(self):
        names = self.names()
        return sorted({n for n in names if names.count(n) > 1})

    @property
    def unexpected(self):
        return [n for n in self.names() if n not in self.expected]

    @property
    def passed(self) -> bool:
        return (not self.missing and not self.duplicates and not self.unexpected
                and all(e.passed for e in self.entries))

    def entry(self, name) -> CheckResult:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self):
        return {"schema": "v1", "kind": "verification_report", "passed": self.passed,
                "seed": self.seed, "config": self.source, "expected": list(self.expected),
                "missing": self.missing, "duplicates": self.duplicates,
                "checks": [_clean(asdict(e)) for e in self.entries]}

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _clean(o):
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if math.isfinite(v) else None
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    return o


# ------------------------------------------------------------------ context


class Context:
    """Shared, lazily computed artifacts of one instance (grid, boundary
    function, solved field, extracted policy)."""

    def __init__(self, cfg: RunConfig, seed: int | None = None, threads: int = 1):
        self.cfg = cfg
        self.seed = cfg.sim.seed if seed is None else int(seed)
        self.threads = max(1, int(threads))
        self._lock = threading.RLock()
        self._cache = {}

    def _get(self, key, fn):
        with self._lock:
            if key not in self._cache:
                self._cache[key] = fn()
            return self._cache[key]

    @property
    def params(self):
        return self.cfg.params

    @property
    def grid(self) -> Grid:
        return self._get("grid", lambda: Grid.build(self.cfg.grid_spec(), self.params,
                                                    self.cfg.claims.mean()))

    @property
    def psi(self):
        def make():
            eps, d = self.cfg.solve_pair
            lam_max = float(np.max(_lam_on_w(self.cfg.waiting, self.grid.w)))
            return build_psi(self.cfg.psi, self.params, d, eps, lam_max)
        return self._get("psi", make)

    @property
    def field(self):
        return self._get("field", lambda: solve_backward(
            self.grid, self.psi, self.params, self.cfg.waiting, self.cfg.claims,
            self.cfg.scheme))

    @property
    def policy(self):
        def make():
            pf = extract_policy(self.field, self.cfg.waiting, self.cfg.claims,
                                self.cfg.scheme.tol)
            if self.cfg.mollify_radius:
                pf = mollify_policy(pf, self.cfg.mollify_radius)
            return FeedbackPolicy(pf)
        return self._get("policy", make)

    def sim_config(self) -> SimConfig:
        n = self.cfg.verify.mc_paths or self.cfg.sim.n_paths
        return replace(self.cfg.sim, seed=self.seed, n_paths=n, record_paths=False)

    def value_at_start(self) -> float:
        st = self.cfg.sim.start
        if st.x < 0:
            return 0.0
        return float(self.field(st.s, st.x, st.w))


def _timed(fn):
    def run(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.runtime = time.perf_counter() - t0
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


# ------------------------------------------------------------------ MC checks


def resolve_control(params, gamma, a):
    if a == "p":
        a = params.p
    elif a == "M":
        a = params.M
    return float(gamma), float(a)


@_timed
def mc_vs_pde(ctx: Context, threads: int = 1) -> CheckResult:
    """Monte Carlo value of the extracted policy against the field at the
    start state."""
    cfg = ctx.cfg
    v = ctx.value_at_start()
    est = estimate_J(ctx.policy, ctx.params, cfg.waiting, cfg.claims, ctx.sim_config(), threads)
    gap = abs(est.mean - v)
    tol = 3 * est.std_error + cfg.verify.tol_scheme
    return CheckResult("mc_vs_pde", gap, tol, bool(est.valid and gap <= tol),
                       details={"pde_value": v, "mc_mean": est.mean,
                                "std_error": est.std_error, "n_paths": est.n_paths,
                                "n_aborted": est.n_aborted, "ruin_fraction": est.ruin_fraction,
                                "tol_scheme": cfg.verify.tol_scheme})


@_timed
def suboptimality_sweep(ctx: Context, threads: int = 1) -> CheckResult:
    """No fixed heuristic beats the field at the start state beyond the
    Monte Carlo and scheme error budget.  ``measured`` is the largest
    ``J - V - 3 SE``."""
    cfg = ctx.cfg
    v = ctx.value_at_start()
    sc = ctx.sim_config()
    rows = []
    worst = -math.inf
    ok = True
    for g, a in cfg.verify.heuristics:
        gamma, rate = resolve_control(ctx.params, g, a)
        est = estimate_J(ConstantPolicy(gamma, rate), ctx.params, cfg.waiting, cfg.claims, sc,
                         threads)
        excess = est.mean - v - 3 * est.std_error
        worst = max(worst, excess)
        ok = ok and est.valid
        rows.append({"gamma": gamma, "a": rate, "mc_mean": est.mean,
                     "std_error": est.std_error, "excess": excess})
    tol = cfg.verify.tol_suboptimal
    return CheckResult("suboptimality", worst, tol, bool(ok and worst <= tol),
                       details={"pde_value": v, "heuristics": rows,
                                "violations": sum(r["excess"] > tol for r in rows)})


@_timed
def deterministic_oracle(ctx: Context, threads: int = 1) -> CheckResult:
    """Zero-size claims and the fixed control ``(0, p)``: both the simulator
    and a degenerate solve must reproduce the discounted premium stream."""
    ds = ctx.cfg.verify.deterministic
    P = ds.params()
    waiting = Exponential(ds.rate)
    claims = PointMass(0.0)
    st = ctx.cfg.sim.start
    start = State(st.s, max(st.x, 0.0), 0.0)
    oracle = P.p * -math.expm1(-P.c * (P.T - start.s)) / P.c
    pol = ConstantPolicy(0.0, P.p)
    est = estimate_J(pol, P, waiting, claims,
                     SimConfig(dt=ds.dt, n_paths=ds.n_paths, seed=ctx.seed, start=start),
                     threads)
    spec = GridSpec(ds.n_s, ds.n_x, ds.n_w, ds.delta, 0.0, None, max(2.0, start.x))
    grid = Grid.build(spec, P, claims.mean())
    vf = solve_backward(grid, ZeroPsi(), P, waiting, claims,
                        SchemeOptions(forced=(0.0, P.p)))
    pde = float(vf(start.s, start.x, start.w))
    err = max(abs(est.mean - oracle), abs(pde - oracle))
    return CheckResult("deterministic_oracle", err, ds.tol, bool(est.valid and err <= ds.tol),
                       details={"oracle": oracle, "mc_mean": est.mean, "pde_value": pde,
                                "mc_std_error": est.std_error})


# ------------------------------------------------------------------ field checks


def sandwich_distance(s, x, w, T):
    """Distance to the boundary of the physical domain (collar width 0)."""
    return np.minimum.reduce([x, w, (s - w) / math.sqrt(2.0), T - s, s])


def barrier_constants(params, waiting):
    q1 = max(2.0 + params.M, 2.0 * (params.p + params.mu * params.T))
    q2 = (params.c + waiting.rate_max(0.0, params.T)) * params.T + 1.0
    return q1, q2


def _d_nodes(grid: Grid, values):
    m = grid.physical_mask()
    S, X, W = np.meshgrid(grid.s, grid.x, grid.w, indexing="ij")
    return S[m], X[m], W[m], values[m]


def check_monotonicity(field) -> CheckResult:
    V = field.values
    inside = field.mask != OUTSIDE
    drop = (V[:, :-1, :] - V[:, 1:, :])[inside[:, :-1, :] & inside[:, 1:, :]]
    worst = float(drop.max()) if drop.size else 0.0
    n_bad = int(np.sum(drop > MONOTONE_TOL))
    return CheckResult("monotonicity", worst, MONOTONE_TOL, n_bad == 0,
                       details={"violations": n_bad, "pairs": int(drop.size)})


def check_sandwich(field, params, waiting, slack) -> CheckResult:
    q1, q2 = barrier_constants(params, waiting)
    S, X, W, V = _d_nodes(field.grid, field.values)
    d = sandwich_distance(S, X, W, params.T)
    lower = d - q2 * (params.T - S) - slack
    upper = 2 * d + q1 * (params.T - S) + slack
    lo_gap, up_gap = lower - V, V - upper
    worst = float(max(lo_gap.max(), up_gap.max()))
    return CheckResult("sandwich", worst, 0.0, worst <= 0.0,
                       details={"Q1": q1, "Q2": q2, "slack": slack,
                                "worst_lower": float(lo_gap.max()),
                                "worst_upper": float(up_gap.max()), "nodes": int(V.size)})


def check_boundedness(field, params, psi) -> CheckResult:
    S, X, W, V = _d_nodes(field.grid, field.values)
    cap = params.max_discounted_dividends(params.T + field.grid.delta) + float(psi.sup)
    worst = float(max(-V.min(), V.max() - cap))
    return CheckResult("boundedness", worst, 0.0, worst <= 0.0,
                       details={"min": float(V.min()), "max": float(V.max()), "cap": cap})


def check_w_invariance(field, waiting, psi) -> CheckResult:
    applicable = isinstance(waiting, Exponential) and bool(getattr(psi, "w_independent", False))
    V = np.where(field.mask != OUTSIDE, field.values, np.nan)
    with np.errstate(all="ignore"):
        spread = np.nanmax(V, axis=2) - np.nanmin(V, axis=2)
    worst = float(np.nanmax(spread))
    passed = worst <= W_SPREAD_TOL if applicable else True
    return CheckResult("w_invariance", worst, W_SPREAD_TOL, bool(passed),
                       details={"applicable": applicable})


def bounds_and_shape(field, params, waiting, psi, slack=0.1):
    """Monotonicity, sandwich, boundedness and w-invariance entries."""
    return [check_monotonicity(field), check_sandwich(field, params, waiting, slack),
            check_boundedness(field, params, psi), check_w_invariance(field, waiting, psi)]


@_timed
def cauchy_check(ctx: Context, threads: int = 1) -> CheckResult:
    cfg = ctx.cfg
    study = refine_study(cfg.grid, list(cfg.refine), ctx.params, cfg.waiting, cfg.claims,
                         cfg.psi, opts=cfg.scheme)
    diffs = study["diffs"]
    final = diffs[-1]
    passed = study["strictly_decreasing"] and final < CAUCHY_TOL
    return CheckResult("cauchy", final, CAUCHY_TOL, bool(passed),
                       details={"schedule": [list(p) for p in cfg.refine], "diffs": diffs,
                                "argmax": study["where"],
                                "strictly_decreasing": study["strictly_decreasing"],
                                "diffs_common_points": study["diffs_common_points"]})


@_timed
def maximizer_check(ctx: Context, threads: int = 1) -> CheckResult:
    """Closed-form maximizer against a grid search over random bundles."""
    cfg = ctx.cfg
    P = ctx.params
    n = cfg.verify.n_bundles
    rng = np.random.default_rng(cfg.verify.bundle_seed)
    eps, d = cfg.solve_pair
    x_hi = float(ctx.grid.x[-1])
    x = rng.uniform(-d, x_hi, n)
    bundle = DerivBundle(rng.uniform(0.0, 3.0, n), rng.uniform(-1.0, 3.0, n),
                         rng.uniform(-1.0, 1.0, n), rng.uniform(-10.0, 10.0, n),
                         rng.uniform(-10.0, 10.0, n), rng.uniform(-2.0, 0.5, n))
    lam = rng.uniform(0.1, 3.0, n)
    closed = np.asarray(maximize_hamiltonian(x, bundle, P, lam, eps, cfg.scheme.tol).value)
    gammas = np.linspace(0.0, 1.0, 1001)[None, :, None]
    rates = np.array([0.0, P.p, P.M])[None, None, :]
    col = DerivBundle(*(np.asarray(getattr(bundle, k))[:, None, None]
                        for k in ("v", "v_x", "v_w", "v_xx", "v_ww", "i_delta")))
    brute = hamiltonian_n(x[:, None, None], col, ControlPair(gammas, rates), P,
                          lam[:, None, None], eps)
    brute = brute.reshape(n, -1).max(axis=1)
    worst = float(np.max(brute - closed))
    return CheckResult("maximizer", worst, MAXIMIZER_TOL, worst <= MAXIMIZER_TOL,
                       details={"bundles": n, "violations": int(np.sum(brute - closed
                                                                      > MAXIMIZER_TOL))})


# ------------------------------------------------------------------ model checks


@_timed
def integrability_entry(ctx: Context, threads: int = 1) -> CheckResult:
    g = ctx.cfg.verify.gamma_prime
    T = ctx.params.T
    rows = []
    ok = True
    for name, law in (("exponential", Exponential(1.0)), ("erlang", Erlang(2, 1.0))):
        res = integrability_check(law, g, T)
        rows.append({"law": name, "value": res.value, "closed_bound": res.closed_bound,
                     "passed": res.passed})
        ok = ok and res.passed
    bound = min(closed_integrability_bound(law, g, T) for law in (Exponential(1.0),
                                                                  Erlang(2, 1.0)))
    worst = max(r["value"] for r in rows)
    return CheckResult("integrability", worst, bound + 1e-4, bool(ok and worst <= bound + 1e-4),
                       details={"gamma_prime": g, "T": T, "laws": rows})


@_timed
def psi_entry(ctx: Context, threads: int = 1) -> CheckResult:
    eps, d = ctx.cfg.solve_pair
    k2 = ctx.params.M / 2 if ctx.cfg.psi.k2 is None else ctx.cfg.psi.k2
    rep = validate_psi(ctx.psi, ctx.params, ctx.cfg.waiting, ctx.cfg.claims, eps, d, k2,
                       s_nodes=ctx.grid.s)
    return CheckResult("psi_validation", rep.min_residual, 0.0, rep.passed,
                       details=rep.to_dict())


# ------------------------------------------------------------------ driver


def _field_check(name):
    def run(ctx: Context, threads: int = 1):
        t0 = time.perf_counter()
        f = ctx.field
        if name == "monotonicity":
            res = check_monotonicity(f)
        elif name == "sandwich":
            res = check_sandwich(f, ctx.params, ctx.cfg.waiting, ctx.cfg.verify.slack)
        elif name == "boundedness":
            res = check_boundedness(f, ctx.params, ctx.psi)
        else:
            res = check_w_invariance(f, ctx.cfg.waiting, ctx.psi)
        res.runtime = time.perf_counter() - t0
        return res
    return run


CHECK_FUNCS = {
    "mc_vs_pde": mc_vs_pde,
    "suboptimality": suboptimality_sweep,
    "cauchy": cauchy_check,
    "monotonicity": _field_check("monotonicity"),
    "sandwich": _field_check("sandwich"),
    "w_invariance": _field_check("w_invariance"),
    "integrability": integrability_entry,
    "deterministic_oracle": deterministic_oracle,
    "maximizer": maximizer_check,
    "psi_validation": psi_entry,
    "boundedness": _field_check("boundedness"),
}
assert set(CHECK_FUNCS) == set(ALL_CHECKS)

_NEEDS_FIELD = {"mc_vs_pde", "suboptimality", "monotonicity", "sandwich", "w_invariance",
                "boundedness"}


def _guarded(name, ctx, threads):
    try:
        return CHECK_FUNCS[name](ctx, threads)
    except (ConfigError, NumericError):
        raise
    except Exception as e:  # a crashed check fails the report
        return CheckResult(name, math.nan, math.nan, False,
                           details={"error": f"{type(e).__name__}: {e}",
                                    "traceback": traceback.format_exc()})


def compare_baseline(entries, baseline: dict, rtol: float = BASELINE_RTOL) -> CheckResult:
    rows = {}
    worst = 0.0
    ok = True
    for e in entries:
        if e.name not in baseline:
            ok = False
            rows[e.name] = "missing from baseline"
            continue
        ref = baseline[e.name]
        if ref is None or not math.isfinite(e.measured):
            same = ref is None and not math.isfinite(e.measured)
            rel = 0.0 if same else math.inf
        else:
            rel = abs(e.measured - ref) / max(1.0, abs(ref))
        worst = max(worst, rel)
        rows[e.name] = {"measured": e.measured, "baseline": ref, "rel_diff": rel}
        ok = ok and rel <= rtol
    return CheckResult("baseline", worst, rtol, bool(ok), details=rows)


def run_verification(cfg: RunConfig, seed: int | None = None, threads: int = 1,
                     record: bool = False, log=None) -> VerificationReport:
    """Run every check named in ``cfg.verify.checks``.

    With ``threads > 1`` checks run concurrently; the report keeps the
    configured order.  With a configured baseline file, ``record`` writes the
    measured values to it and otherwise they are compared against it.
    """
    ctx = Context(cfg, seed, threads)
    names = list(cfg.verify.checks)
    if _NEEDS_FIELD & set(names):
        ctx.field  # shared by several checks; computed once up front
    parallel = threads > 1 and len(names) > 1
    if parallel:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            futs = [ex.submit(_guarded, n, ctx, 1) for n in names]
            entries = [f.result() for f in futs]
    else:
        entries = []
        for n in names:
            entries.append(_guarded(n, ctx, threads))
            if log:
                log(entries[-1].line())
    expected = tuple(names)
    base = cfg.verify.baseline
    if base:
        if record:
            os.makedirs(os.path.dirname(os.path.abspath(base)), exist_ok=True)
            with open(base, "w") as fh:
                json.dump({"schema": "v1", "kind": "verification_baseline", "seed": ctx.seed,
                           "values": _clean({e.name: e.measured for e in entries})},
                          fh, indent=2, sort_keys=True)
        else:
            expected = expected + ("baseline",)
            if os.path.exists(base):
                with open(base) as fh:
                    doc = json.load(fh)
                if doc.get("schema") != "v1" or doc.get("seed") != ctx.seed:
                    res = CheckResult("baseline", math.nan, BASELINE_RTOL, False,
                                      details={"error": "baseline schema or seed mismatch"})
                else:
                    res = compare_baseline(entries, doc["values"])
            else:
                res = CheckResult("baseline", math.nan, BASELINE_RTOL, False,
                                  details={"error": f"no baseline at {base}; "
                                                    "run verify --record"})
            entries.append(res)
            if log and not parallel:
                log(res.line())
    if log and parallel:
        for e in entries:
            log(e.line())
    return VerificationReport(entries, expected, ctx.seed, cfg.source)
