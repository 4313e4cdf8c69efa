"""Command-line entry point: ``privinc run|bench|sweep|check|serve|schema``.

Exit codes: 0 success, 1 a reported assertion failed, 2 malformed input.
With ``--server URL`` the ``run`` subcommand sends the config to a running
service instead of computing locally.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from . import harness
from .errors import InvalidInput
from .schemas import ExperimentConfig

GATE = "--i-understand-this-is-not-private"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="privinc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def noise_flags(sp):
        sp.add_argument("--noise-disabled", action="store_true",
                        help="zero all privacy noise (testing only; output is NOT private)")
        sp.add_argument(GATE, dest="ack", action="store_true",
                        help="required together with --noise-disabled")

    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, default=None,
                   help=f"overrides ${harness.SEED_ENV} and the config's seed list")
    r.add_argument("--out", default=None, help="directory for CSV and JSON outputs")
    r.add_argument("--server", default=None, help="service URL to run remotely")
    noise_flags(r)

    b = sub.add_parser("bench", help="trend suites behind the acceptance criteria")
    b.add_argument("--suite", choices=sorted(harness.SUITES) + ["all"], default="all")
    b.add_argument("--seeds", type=int, default=None, help="number of seeds (suite default if omitted)")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", default=None)

    s = sub.add_parser("sweep", help="grid over config fields and seeds")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", default="{}", help='JSON object, e.g. \'{"d": [2, 8], "constants.c_m": [0.5, 1]}\'')
    s.add_argument("--seeds", type=int, nargs="+", default=None)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    noise_flags(s)

    c = sub.add_parser("check", help="calibration, embedding and zero-noise oracle self-tests")
    c.add_argument("--full", action="store_true", help="use full sample sizes")
    noise_flags(c)

    v = sub.add_parser("serve", help="start the HTTP service")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)

    sub.add_parser("schema", help="print the config JSON schema")
    return p


def _seeds(args, cfg: ExperimentConfig) -> List[int]:
    if args.seed is not None:
        return [args.seed]
    env = os.environ.get(harness.SEED_ENV)
    if env is not None:
        try:
            return [int(env)]
        except ValueError:
            raise InvalidInput(f"${harness.SEED_ENV} must be an integer, got {env!r}") from None
    return list(cfg.seeds)


def _apply_noise_flag(args, cfg: ExperimentConfig) -> ExperimentConfig:
    if getattr(args, "noise_disabled", False):
        return harness.with_overrides(cfg, noise_disabled=True)
    return cfg


def _emit(text: str, path: Optional[Path]):
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, encoding="utf-8", newline="")


def _run_remote(url: str, cfg: ExperimentConfig, seed: int, ack: bool) -> dict:
    import httpx

    body = {"config": cfg.model_dump(), "seed": seed, "i_understand_this_is_not_private": ack}
    resp = httpx.post(url.rstrip("/") + "/runs", json=body, timeout=None)
    if resp.status_code in (403, 422):
        raise InvalidInput(f"server rejected the run: {resp.text}")
    resp.raise_for_status()
    return resp.json()


def cmd_run(args) -> int:
    cfg = _apply_noise_flag(args, harness.load_config(args.config))
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    ok = True
    for seed in _seeds(args, cfg):
        if args.server:
            res = _run_remote(args.server, cfg, seed, args.ack)
            csv_text, summary = res["csv"], res["summary"]
        else:
            rep = harness.run_experiment(cfg, seed)
            csv_text, summary = rep.to_csv(), rep.summary()
        ok &= _report_ok(summary, cfg)
        if out:
            _emit(csv_text, out / f"run_seed{seed}.csv")
            _emit(json.dumps(summary, indent=2, sort_keys=True) + "\n", out / f"run_seed{seed}.json")
        else:
            _emit(csv_text, None)
            print(json.dumps({k: summary[k] for k in ("seed", "OPT", "excess_at_T", "budget")}),
                  file=sys.stderr)
    return 0 if ok else 1


def _report_ok(summary: dict, cfg: ExperimentConfig) -> bool:
    good = summary["min_raw_excess"] >= -harness.EXCESS_TOL
    if not good:
        print(f"seed {summary['seed']}: oracle risk above private risk", file=sys.stderr)
    eps = summary["budget"]["epsilon"]
    if not cfg.noise_disabled and eps != "inf":
        ledger_mode = summary["budget"]["mode"]
        within = eps <= cfg.epsilon * (1 + 1e-12) and summary["budget"]["delta"] <= cfg.delta * (1 + 1e-12)
        if not within:
            print(f"seed {summary['seed']}: {ledger_mode} total exceeds the budget", file=sys.stderr)
        good &= within
    return good


def cmd_bench(args) -> int:
    names = sorted(harness.SUITES) if args.suite == "all" else [args.suite]
    results = []
    for name in names:
        kw = {"workers": args.workers}
        if args.seeds is not None:
            kw["seeds"] = range(args.seeds)
        res = harness.SUITES[name](**kw)
        results.append(res)
        rows = [{k: v for k, v in r.items() if not isinstance(v, list)} for r in res["rows"]]
        text = harness.rows_to_csv(rows)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            _emit(text, Path(args.out) / f"bench_{name}.csv")
        else:
            print(f"# {name}")
            _emit(text, None)
    if args.out:
        _emit(json.dumps(results, indent=2) + "\n", Path(args.out) / "bench.json")
    return 0


def cmd_sweep(args) -> int:
    cfg = _apply_noise_flag(args, harness.load_config(args.config))
    try:
        grid = json.loads(args.grid)
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"--grid is not JSON: {exc}") from None
    if not isinstance(grid, dict) or not all(isinstance(v, list) for v in grid.values()):
        raise InvalidInput("--grid must map field names to lists")
    seeds = args.seeds if args.seeds is not None else cfg.seeds
    try:
        rows = harness.sweep(cfg, grid, seeds, workers=args.workers)
    except KeyError as exc:
        raise InvalidInput(f"unknown grid field {exc}") from None
    _emit(harness.rows_to_csv(rows), Path(args.out) if args.out else None)
    return 0


def cmd_check(args) -> int:
    checks = harness.self_check(quick=not args.full)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    return 0 if all(c.passed for c in checks) else 1


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("privinc.service:app", host=args.host, port=args.port)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "noise_disabled", False) and not args.ack:
        parser.error(f"--noise-disabled requires {GATE}")
    if args.cmd == "schema":
        print(json.dumps(ExperimentConfig.model_json_schema(), indent=2))
        return 0
    handler = {"run": cmd_run, "bench": cmd_bench, "sweep": cmd_sweep, "check": cmd_check,
               "serve": cmd_serve}[args.cmd]
    try:
        return handler(args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
