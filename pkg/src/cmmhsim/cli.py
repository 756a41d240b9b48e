"""Experiment-runner command line.

    cmmhsim run <config> [--seed N] [--out DIR] [--format csv|json|both]
    cmmhsim compare <a.json> <b.json> --tol <spec>
    cmmhsim list-generators
    cmmhsim validate <config>

Exit codes: 0 success, 1 usage error, 2 config error, 3 comparison failure.
"""

import argparse
import sys

from .config import ConfigError, load_config
from .experiments import compare_reports, load_report, run_experiment
from .workloads import GENERATORS, KV_PATTERNS

USAGE_EXIT = 1
CONFIG_EXIT = 2
COMPARE_EXIT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def parse_tol(spec: str) -> dict:
    """'0.05' or 'metric=0.05,other=0.1[,default=0.05]'."""
    spec = spec.strip()
    try:
        return {"default": float(spec)}
    except ValueError:
        pass
    tol = {}
    for part in spec.split(","):
        name, _, val = part.partition("=")
        if not name.strip() or not val.strip():
            raise ValueError(f"bad tolerance term {part!r}")
        tol[name.strip()] = float(val)
    return tol


def build_parser() -> _Parser:
    p = _Parser(prog="cmmhsim")
    sub = p.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default="out")
    run.add_argument("--format", choices=("csv", "json", "both"),
                     default="both")

    cmp_ = sub.add_parser("compare", help="compare two JSON reports")
    cmp_.add_argument("report_a")
    cmp_.add_argument("report_b")
    cmp_.add_argument("--tol", default="0.05")

    sub.add_parser("list-generators", help="list workload generators")

    val = sub.add_parser("validate", help="check a config file")
    val.add_argument("config")
    return p


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        print(f"config not found: {args.config}", file=sys.stderr)
        return CONFIG_EXIT
    except ConfigError as e:
        print(e, file=sys.stderr)
        return CONFIG_EXIT
    report = run_experiment(cfg, seed=args.seed, out_dir=args.out,
                            fmt=args.format)
    print(f"{cfg.kind}: wrote report to {args.out}/ "
          f"(hash {report['determinism_hash'][:12]})")
    for k, v in sorted(report["metrics"].items()):
        print(f"  {k} = {v}")
    for w in report["warnings"]:
        print(f"  warning: {w}")
    return 0


def cmd_compare(args) -> int:
    try:
        tol = parse_tol(args.tol)
    except ValueError as e:
        print(f"bad --tol: {e}", file=sys.stderr)
        return USAGE_EXIT
    a = load_report(args.report_a)
    b = load_report(args.report_b)
    try:
        ok, table = compare_reports(a, b, tol)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_EXIT
    width = max((len(r["metric"]) for r in table), default=10)
    for r in table:
        status = "pass" if r["pass"] else "FAIL"
        print(f"{r['metric']:<{width}}  {r['a']:>14.4f}  {r['b']:>14.4f}  "
              f"err {r['rel_err']:.4%}  tol {r['tol']:.2%}  {status}")
    print("overall:", "pass" if ok else "FAIL")
    return 0 if ok else COMPARE_EXIT


def cmd_list_generators() -> int:
    for g in GENERATORS:
        if g == "kv":
            print(f"kv ({', '.join(KV_PATTERNS)})")
        else:
            print(g)
    return 0


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        print(f"config not found: {args.config}", file=sys.stderr)
        return CONFIG_EXIT
    except ConfigError as e:
        print(e, file=sys.stderr)
        return CONFIG_EXIT
    print(f"ok: {args.config} ({cfg.kind}, seed {cfg.seed})")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "run":
            return cmd_run(args)
        if args.cmd == "compare":
            return cmd_compare(args)
        if args.cmd == "list-generators":
            return cmd_list_generators()
        if args.cmd == "validate":
            return cmd_validate(args)
    except ConfigError as e:
        print(e, file=sys.stderr)
        return CONFIG_EXIT
    return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
