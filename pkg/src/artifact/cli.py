"""Command-line entry point.

    artifact solve    --config run.toml [--out DIR]
    artifact policy   --config run.toml [--field PATH]
    artifact simulate --config run.toml [--policy PATH] [--seed N] [--threads N]
    artifact verify   --config run.toml [--record] [--seed N] [--threads N]

Exit codes: 0 success, 1 verification failed, 2 invalid configuration,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .config import RunConfig, load_config
from .errors import ConfigError, DomainError, NumericError
from .policy import (ConstantPolicy, FeedbackPolicy, extract_policy, mollify_policy,
                     read_policy_csv, write_policy_csv)
from .sim import estimate_J
from .solver import read_field_csv, write_field_csv
from .verify import Context, resolve_control, run_verification

log = logging.getLogger("artifact")

FIELD_CSV = "value_field.csv"
POLICY_CSV = "policy.csv"
ESTIMATE_JSON = "estimate.json"
REPORT_JSON = "report.json"


def _out_dir(cfg: RunConfig, args) -> str:
    out = args.out or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def cmd_solve(cfg: RunConfig, args) -> int:
    ctx = Context(cfg, args.seed, args.threads)
    field = ctx.field
    path = os.path.join(_out_dir(cfg, args), FIELD_CSV)
    write_field_csv(field, path, {"psi": ctx.psi.describe(), "config": cfg.source})
    st = cfg.sim.start
    log.info("wrote %s (V at start = %.6f)", path, field(st.s, st.x, st.w))
    return 0


def cmd_policy(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    src = args.field or os.path.join(out, FIELD_CSV)
    if not os.path.exists(src):
        raise ConfigError(f"no solved field at {src}; run `solve` first")
    vf = read_field_csv(src)
    pf = extract_policy(vf, cfg.waiting, cfg.claims, cfg.scheme.tol)
    if cfg.mollify_radius:
        pf = mollify_policy(pf, cfg.mollify_radius)
    path = os.path.join(out, POLICY_CSV)
    write_policy_csv(pf, path)
    log.info("wrote %s (%d flagged nodes)", path, pf.n_flagged)
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    sc = cfg.sim if args.seed is None else replace(cfg.sim, seed=args.seed)
    if cfg.sim_policy == "extracted":
        src = args.policy or os.path.join(out, POLICY_CSV)
        if not os.path.exists(src):
            raise ConfigError(f"no policy at {src}; run `policy` first")
        policy = FeedbackPolicy(read_policy_csv(src))
    else:
        policy = ConstantPolicy(*resolve_control(cfg.params, *cfg.sim_policy))
    est = estimate_J(policy, cfg.params, cfg.waiting, cfg.claims, sc, args.threads,
                     out_dir=os.path.join(out, "paths"))
    path = os.path.join(out, ESTIMATE_JSON)
    with open(path, "w") as fh:
        json.dump(est.to_dict(), fh, indent=2, sort_keys=True)
    log.info("wrote %s (mean %.6f, SE %.6f)", path, est.mean, est.std_error)
    if not est.valid:
        raise NumericError(f"{est.n_aborted} of {sc.n_paths} paths aborted",
                           where={"paths": est.aborted_paths})
    return 0


def cmd_verify(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg, args)
    rep = run_verification(cfg, args.seed, args.threads, record=args.record, log=log.info)
    path = os.path.join(out, REPORT_JSON)
    rep.write(path)
    for n in rep.missing:
        log.error("missing check: %s", n)
    log.info("wrote %s: %s", path, "PASS" if rep.passed else "FAIL")
    return 0 if rep.passed else 1


COMMANDS = {"solve": cmd_solve, "policy": cmd_policy, "simulate": cmd_simulate,
            "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    common.add_argument("--seed", type=int, default=None, help="override [sim] seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--record", action="store_true",
                        help="write verification baselines instead of comparing")
    common.add_argument("-v", "--verbose", action="store_true")
    ap = argparse.ArgumentParser(prog="artifact", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve the value field")
    p = sub.add_parser("policy", parents=[common], help="extract a feedback policy")
    p.add_argument("--field", default=None, help="value-field CSV (default: OUT/value_field.csv)")
    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo estimate of a policy")
    p.add_argument("--policy", default=None, help="policy CSV (default: OUT/policy.csv)")
    sub.add_parser("verify", parents=[common], help="run the acceptance checks")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, DomainError) as e:
        log.error("configuration error: %s", e)
        return 2
    except NumericError as e:
        where = ", ".join(f"{k}={v}" for k, v in e.where.items())
        log.error("numerical failure: %s%s", e, f" at {where}" if where else "")
        return 3


if __name__ == "__main__":
    sys.exit(main())
