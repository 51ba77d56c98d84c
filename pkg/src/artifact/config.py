"""Run configuration: a TOML file with fixed sections, parsed into validated
objects.

Every error names the file and, where it can be located, the line of the
offending key or section.  Unknown sections and keys are rejected.

Schema (all sections optional except ``[model]``)::

    [model]     p r mu sigma c M T
    [waiting]   kind = "exponential" | "erlang" | "tabulated"; rate; k; nodes; values; csv
    [claims]    kind = "exponential" | "tabulated" | "point_mass"; mean; nodes; values; csv; at
    [grid]      n_s n_x n_w x_max x_query
    [schedule]  solve = [eps, delta]; refine = [[eps, delta], ...]
    [psi]       fields of PsiSpec
    [scheme]    substeps cfl_safety x_tol curv_tol tie_tol
    [policy]    mollify_radius
    [sim]       dt n_paths seed batch_size record_paths record_limit start = [s, x, w];
                policy = "extracted" | [gamma, a]
    [verify]    checks slack tol_scheme tol_suboptimal heuristics mc_paths gamma_prime
                n_bundles bundle_seed baseline
    [verify.deterministic]  p r mu sigma c M T rate n_paths dt delta n_s n_x n_w tol
    [output]    dir

Relative paths (``csv``, ``baseline``) are resolved against the directory of
the config file; ``output.dir`` is resolved against the working directory.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .model import (Erlang, Exponential, ExponentialClaims, ModelParams, PointMass, State,
                    TabulatedCdf, TabulatedIntensity)
from .pide import Tolerances
from .psi import PsiSpec
from .sim import SimConfig
from .solver import GridSpec, SchemeOptions

ALL_CHECKS = ("mc_vs_pde", "suboptimality", "cauchy", "monotonicity", "sandwich",
              "w_invariance", "integrability", "deterministic_oracle", "maximizer",
              "psi_validation", "boundedness")

_KEYS = {
    "model": {"p", "r", "mu", "sigma", "c", "M", "T"},
    "waiting": {"kind", "rate", "k", "nodes", "values", "csv"},
    "claims": {"kind", "mean", "nodes", "values", "csv", "at"},
    "grid": {"n_s", "n_x", "n_w", "x_max", "x_query"},
    "schedule": {"solve", "refine"},
    "psi": {f.name for f in fields(PsiSpec)},
    "scheme": {"substeps", "cfl_safety", "x_tol", "curv_tol", "tie_tol"},
    "policy": {"mollify_radius"},
    "sim": {"dt", "n_paths", "seed", "batch_size", "record_paths", "record_limit", "start",
            "policy"},
    "verify": {"checks", "slack", "tol_scheme", "tol_suboptimal", "heuristics", "mc_paths",
               "gamma_prime", "n_bundles", "bundle_seed", "baseline", "deterministic"},
    "output": {"dir"},
}
_DET_KEYS = {"p", "r", "mu", "sigma", "c", "M", "T", "rate", "n_paths", "dt", "delta",
             "n_s", "n_x", "n_w", "tol"}


@dataclass(frozen=True)
class DeterministicSpec:
    """Instance of the closed-form end-to-end check: zero-size claims and the
    fixed control ``(0, p)``."""

    p: float = 1.0
    r: float = 0.03
    mu: float = 0.08
    sigma: float = 0.3
    c: float = 0.1
    M: float = 1.0
    T: float = 1.0
    rate: float = 1.0
    n_paths: int = 1000
    dt: float = 1e-3
    delta: float = 1e-3
    n_s: int = 11
    n_x: int = 41
    n_w: int = 3
    tol: float = 5e-3

    def params(self) -> ModelParams:
        return ModelParams(self.p, self.r, self.mu, self.sigma, self.c, self.M, self.T)


@dataclass(frozen=True)
class VerifySpec:
    checks: tuple = ALL_CHECKS
    slack: float = 0.1
    tol_scheme: float = 0.1
    tol_suboptimal: float = 0.05
    heuristics: tuple = ((0.0, "M"), (1.0, 0.0), (0.5, "p"), (1.0, "M"), (0.0, "p"))
    mc_paths: int | None = None
    gamma_prime: float = 2.0
    n_bundles: int = 1000
    bundle_seed: int = 0
    baseline: str | None = None
    deterministic: DeterministicSpec = DeterministicSpec()


@dataclass
class RunConfig:
    params: ModelParams
    waiting: object
    claims: object
    grid: GridSpec = GridSpec()
    psi: PsiSpec = PsiSpec()
    solve_pair: tuple = (0.05, 0.05)
    refine: tuple = ((0.1, 0.1), (0.05, 0.05), (0.025, 0.025))
    scheme: SchemeOptions = field(default_factory=SchemeOptions)
    mollify_radius: int = 0
    sim: SimConfig = SimConfig()
    sim_policy: object = "extracted"
    verify: VerifySpec = VerifySpec()
    out_dir: str = "out"
    source: str = "<memory>"

    def grid_spec(self) -> GridSpec:
        eps, d = self.solve_pair
        return self.grid.with_schedule(eps, d)


# ------------------------------------------------------------ parsing helpers


class _Locator:
    def __init__(self, path, text):
        self.path = path
        self.lines = text.splitlines()

    def line(self, section, key=None):
        header = re.compile(r"^\s*\[\s*" + re.escape(section) + r"\s*\]\s*(#.*)?$")
        any_header = re.compile(r"^\s*\[")
        start = None
        for i, ln in enumerate(self.lines):
            if header.match(ln):
                start = i
                break
        if start is None:
            return None
        if key is None:
            return start + 1
        pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
        for i in range(start + 1, len(self.lines)):
            if any_header.match(self.lines[i]):
                break
            if pat.match(self.lines[i]):
                return i + 1
        return start + 1

    def error(self, section, key, msg):
        ln = self.line(section, key)
        where = f"{self.path}:{ln}" if ln else self.path
        label = f"[{section}]" + (f" {key}" if key else "")
        return ConfigError(f"{where}: {label}: {msg}")


def _number(loc, sec, key, v, integer=False, positive=False, nonneg=False):
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    if integer:
        ok = ok and float(v).is_integer()
    if ok and not math.isfinite(float(v)):
        ok = False
    if not ok:
        kind = "an integer" if integer else "a finite number"
        raise loc.error(sec, key, f"expected {kind}, got {v!r}")
    if positive and not v > 0:
        raise loc.error(sec, key, f"must be positive, got {v!r}")
    if nonneg and v < 0:
        raise loc.error(sec, key, f"must be nonnegative, got {v!r}")
    return int(v) if integer else float(v)


def _pair(loc, sec, key, v):
    if not (isinstance(v, list) and len(v) == 2):
        raise loc.error(sec, key, f"expected [eps, delta], got {v!r}")
    return (_number(loc, sec, key, v[0], nonneg=True), _number(loc, sec, key, v[1], positive=True))


def _check_keys(loc, sec, table, allowed):
    if not isinstance(table, dict):
        raise loc.error(sec, None, "expected a table")
    for k in table:
        if k not in allowed:
            raise loc.error(sec, k, f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _build(loc, sec, key, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ConfigError as e:
        raise loc.error(sec, key, str(e)) from None
    except (TypeError, ValueError, OSError) as e:
        raise loc.error(sec, key, str(e)) from None


def _resolve(base_dir, p):
    return p if os.path.isabs(p) else os.path.join(base_dir, p)


def _waiting(loc, t, base_dir):
    sec = "waiting"
    kind = t.get("kind", "exponential")
    if kind == "exponential":
        _check_keys(loc, sec, t, {"kind", "rate"})
        return _build(loc, sec, "rate", Exponential, _number(loc, sec, "rate", t.get("rate", 1.0)))
    if kind == "erlang":
        _check_keys(loc, sec, t, {"kind", "rate", "k"})
        k = _number(loc, sec, "k", t.get("k", 2), integer=True)
        return _build(loc, sec, "k", Erlang, k, _number(loc, sec, "rate", t.get("rate", 1.0)))
    if kind == "tabulated":
        _check_keys(loc, sec, t, {"kind", "nodes", "values", "csv"})
        if "csv" in t:
            return _build(loc, sec, "csv", TabulatedIntensity.from_csv,
                          _resolve(base_dir, t["csv"]))
        return _build(loc, sec, "nodes", TabulatedIntensity, tuple(t.get("nodes", ())),
                      tuple(t.get("values", ())))
    raise loc.error(sec, "kind", f"unknown waiting law {kind!r}")


def _claims(loc, t, base_dir):
    sec = "claims"
    kind = t.get("kind", "exponential")
    if kind == "exponential":
        _check_keys(loc, sec, t, {"kind", "mean"})
        return _build(loc, sec, "mean", ExponentialClaims,
                      _number(loc, sec, "mean", t.get("mean", 1.0)))
    if kind == "tabulated":
        _check_keys(loc, sec, t, {"kind", "nodes", "values", "csv"})
        if "csv" in t:
            return _build(loc, sec, "csv", TabulatedCdf.from_csv, _resolve(base_dir, t["csv"]))
        return _build(loc, sec, "nodes", TabulatedCdf, tuple(t.get("nodes", ())),
                      tuple(t.get("values", ())))
    if kind == "point_mass":
        _check_keys(loc, sec, t, {"kind", "at"})
        return _build(loc, sec, "at", PointMass, _number(loc, sec, "at", t.get("at", 0.0)))
    raise loc.error(sec, "kind", f"unknown claim law {kind!r}")


def _heuristic(loc, v):
    sec, key = "verify", "heuristics"
    if not (isinstance(v, list) and len(v) == 2):
        raise loc.error(sec, key, f"each heuristic is [gamma, a], got {v!r}")
    g = _number(loc, sec, key, v[0])
    if not 0 <= g <= 1:
        raise loc.error(sec, key, f"gamma must lie in [0, 1], got {g}")
    a = v[1]
    if isinstance(a, str):
        if a not in ("p", "M"):
            raise loc.error(sec, key, f"dividend must be a number, 'p' or 'M', got {a!r}")
    else:
        a = _number(loc, sec, key, a, nonneg=True)
    return (g, a)


def parse_config(text: str, path: str = "<string>") -> RunConfig:
    loc = _Locator(path, text)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    base_dir = os.path.dirname(os.path.abspath(path)) if os.path.exists(path) else os.getcwd()
    for sec in doc:
        if sec not in _KEYS:
            raise loc.error(sec, None, f"unknown section (allowed: {', '.join(sorted(_KEYS))})")
    for sec, allowed in _KEYS.items():
        if sec in doc and sec not in ("waiting", "claims"):
            _check_keys(loc, sec, doc[sec], allowed)
    if "model" not in doc:
        raise ConfigError(f"{path}: missing required section [model]")

    m = doc["model"]
    for k in sorted(_KEYS["model"]):
        if k not in m:
            raise loc.error("model", None, f"missing key {k!r}")
    vals = {k: _number(loc, "model", k, m[k]) for k in m}
    params = _build(loc, "model", None, ModelParams, **vals)
    waiting = _waiting(loc, doc.get("waiting", {}), base_dir)
    claims = _claims(loc, doc.get("claims", {}), base_dir)

    g = doc.get("grid", {})
    gkw = {}
    for k in ("n_s", "n_x", "n_w"):
        if k in g:
            gkw[k] = _number(loc, "grid", k, g[k], integer=True)
    for k in ("x_max", "x_query"):
        if k in g:
            gkw[k] = _number(loc, "grid", k, g[k], positive=True)
    grid = _build(loc, "grid", None, GridSpec, **gkw)

    sc = doc.get("schedule", {})
    solve_pair = _pair(loc, "schedule", "solve", sc["solve"]) if "solve" in sc else (
        grid.eps_n, grid.delta)
    refine = RunConfig.__dataclass_fields__["refine"].default
    if "refine" in sc:
        if not isinstance(sc["refine"], list) or len(sc["refine"]) < 2:
            raise loc.error("schedule", "refine", "needs a list of at least two [eps, delta]")
        refine = tuple(_pair(loc, "schedule", "refine", v) for v in sc["refine"])
    _build(loc, "schedule", "solve", grid.with_schedule, *solve_pair)

    ps = doc.get("psi", {})
    pkw = {}
    for k, v in ps.items():
        pkw[k] = None if (k == "k2" and v == "default") else _number(loc, "psi", k, v)
    psi = _build(loc, "psi", None, PsiSpec, **pkw)

    sch = doc.get("scheme", {})
    tol_kw = {k: _number(loc, "scheme", k, sch[k], nonneg=True)
              for k in ("x_tol", "curv_tol", "tie_tol") if k in sch}
    scheme = SchemeOptions(
        substeps=_number(loc, "scheme", "substeps", sch["substeps"], integer=True, positive=True)
        if "substeps" in sch else None,
        cfl_safety=_number(loc, "scheme", "cfl_safety", sch.get("cfl_safety", 0.9),
                           positive=True),
        tol=_build(loc, "scheme", None, Tolerances, **tol_kw))
    if scheme.cfl_safety > 1:
        raise loc.error("scheme", "cfl_safety", "must not exceed 1")

    pol = doc.get("policy", {})
    radius = _number(loc, "policy", "mollify_radius", pol.get("mollify_radius", 0),
                     integer=True, nonneg=True)

    sm = doc.get("sim", {})
    skw = {}
    if "dt" in sm:
        skw["dt"] = _number(loc, "sim", "dt", sm["dt"])
    for k in ("n_paths", "seed", "batch_size", "record_limit"):
        if k in sm:
            skw[k] = _number(loc, "sim", k, sm[k], integer=True)
    if "record_paths" in sm:
        if not isinstance(sm["record_paths"], bool):
            raise loc.error("sim", "record_paths", "expected true or false")
        skw["record_paths"] = sm["record_paths"]
    if "start" in sm:
        st = sm["start"]
        if not (isinstance(st, list) and len(st) == 3):
            raise loc.error("sim", "start", "expected [s, x, w]")
        skw["start"] = State(*(_number(loc, "sim", "start", v) for v in st))
    if skw.get("seed", 0) < 0:
        raise loc.error("sim", "seed", "must be nonnegative")
    sim = _build(loc, "sim", "n_paths" if "n_paths" in sm else None, SimConfig, **skw)
    sim_policy = sm.get("policy", "extracted")
    if sim_policy != "extracted":
        sim_policy = _heuristic(loc, sim_policy) if isinstance(sim_policy, list) else None
        if sim_policy is None:
            raise loc.error("sim", "policy", "expected \"extracted\" or [gamma, a]")

    vf = doc.get("verify", {})
    vkw = {}
    if "checks" in vf:
        checks = vf["checks"]
        if not isinstance(checks, list) or not all(isinstance(c, str) for c in checks):
            raise loc.error("verify", "checks", "expected a list of check names")
        for c in checks:
            if c not in ALL_CHECKS:
                raise loc.error("verify", "checks",
                                f"unknown check {c!r} (known: {', '.join(ALL_CHECKS)})")
        if len(set(checks)) != len(checks):
            raise loc.error("verify", "checks", "duplicate check names")
        vkw["checks"] = tuple(checks)
    for k in ("slack", "tol_scheme", "tol_suboptimal"):
        if k in vf:
            vkw[k] = _number(loc, "verify", k, vf[k], nonneg=True)
    if "gamma_prime" in vf:
        vkw["gamma_prime"] = _number(loc, "verify", "gamma_prime", vf["gamma_prime"])
    for k in ("mc_paths", "n_bundles"):
        if k in vf:
            vkw[k] = _number(loc, "verify", k, vf[k], integer=True, positive=True)
    if "bundle_seed" in vf:
        vkw["bundle_seed"] = _number(loc, "verify", "bundle_seed", vf["bundle_seed"],
                                     integer=True, nonneg=True)
    if "heuristics" in vf:
        if not isinstance(vf["heuristics"], list):
            raise loc.error("verify", "heuristics", "expected a list of [gamma, a]")
        vkw["heuristics"] = tuple(_heuristic(loc, h) for h in vf["heuristics"])
    if "baseline" in vf:
        if not isinstance(vf["baseline"], str):
            raise loc.error("verify", "baseline", "expected a path")
        vkw["baseline"] = _resolve(base_dir, vf["baseline"])
    if "deterministic" in vf:
        det = vf["deterministic"]
        _check_keys(loc, "verify.deterministic", det, _DET_KEYS)
        dkw = {}
        for k, v in det.items():
            integer = k in ("n_paths", "n_s", "n_x", "n_w")
            dkw[k] = _number(loc, "verify.deterministic", k, v, integer=integer, positive=True)
        vkw["deterministic"] = _build(loc, "verify.deterministic", None, DeterministicSpec, **dkw)
        _build(loc, "verify.deterministic", None, vkw["deterministic"].params)
    verify = VerifySpec(**vkw)

    out = doc.get("output", {})
    out_dir = out.get("dir", "out")
    if not isinstance(out_dir, str) or not out_dir:
        raise loc.error("output", "dir", "expected a directory path")

    return RunConfig(params, waiting, claims, grid, psi, solve_pair, refine, scheme, radius,
                     sim, sim_policy, verify, out_dir, path)


def load_config(path) -> RunConfig:
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})") from None
    except UnicodeDecodeError:
        raise ConfigError(f"{path}: config is not UTF-8 text") from None
    return parse_config(text, path)
