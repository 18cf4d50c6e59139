"""Command line entry point: ``onlinemssc gen|run|audit|oracle``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

from .analysis import audit_run, make_params
from .core import Instance, InvariantViolation
from .ec import StepTrace, replay_lma
from .harness import ExperimentConfig, generate_instance, run_experiment
from .oracles import CapacityError, opt_ec_dynamic, opt_mssc_dynamic, opt_mssc_static
from .reduction import canonic_partitioning


def _load_config(args) -> ExperimentConfig:
    d = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        d["seed"] = args.seed
    if args.trials is not None:
        d["trials"] = args.trials
    return ExperimentConfig.from_dict(d)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(cfg.trials):
        inst = generate_instance(cfg, t)
        (out / f"instance_{t:04d}.json").write_text(inst.to_json() + "\n")
    print(f"wrote {cfg.trials} instances to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg)
    paths = report.write(args.out, fmt=args.format, traces=not args.no_traces)
    summary = report.summary()
    for alg, s in summary["algorithms"].items():
        if s.get("instances"):
            print(f"{alg:12s} instances={s['instances']:4d} mean_ratio={s['mean_ratio']:.4f} "
                  f"max_ratio={s['max_ratio']:.4f}")
    for name, s in summary["audits"].items():
        print(f"audit {name:14s} trials={s['trials']} failed={s['failed']}")
    print(f"results: {paths['results']}")
    if not report.ok:
        print("one or more invariant audits FAILED", file=sys.stderr)
        return 1
    return 0


def _audit_instance(inst: Instance, runs: dict, r: int | None) -> dict:
    p0 = canonic_partitioning(inst.initial)
    errors = []
    for seed, steps in runs.items():
        try:
            replay_lma(p0, steps)
        except InvariantViolation as exc:
            errors.append(f"seed {seed}: {exc}")
    out = {"engine": {"pass": not errors, "runs": len(runs), "errors": errors}}
    try:
        opt = opt_ec_dynamic(inst)
    except CapacityError as exc:
        out["potential"] = {"skipped": str(exc)}
        return out
    params = make_params(r or max(inst.r, 1))
    rep = audit_run(list(runs.values()), opt, params, seeds=list(runs))
    out["potential"] = rep.to_dict()
    return out


def cmd_audit(args) -> int:
    run_dir = Path(args.run_dir)
    grouped: dict[str, dict] = defaultdict(dict)
    for line in (run_dir / "traces.jsonl").read_text().splitlines():
        rec = json.loads(line)
        if rec["algorithm"] != "lma" and not (rec["algorithm"] == "wrapped-lma" and args.include_wrapped):
            continue
        key = f"{rec['algorithm']}:{rec['seed']}"
        grouped[rec["instance_id"]].setdefault(key, []).append(StepTrace.from_dict(rec))
    results = {}
    ok = True
    for iid in sorted(grouped):
        inst = Instance.from_json((run_dir / "instances" / f"instance_{iid}.json").read_text())
        res = _audit_instance(inst, grouped[iid], args.r)
        results[iid] = res
        passed = res["engine"]["pass"] and res["potential"].get("pass", True)
        ok &= passed
        print(f"instance {iid}: {'PASS' if passed else 'FAIL'}")
    text = json.dumps(results, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0 if ok else 1


def cmd_oracle(args) -> int:
    inst = Instance.from_json(Path(args.instance).read_text())
    lines = []
    try:
        lines.append({"problem": "mssc-dynamic", **opt_mssc_dynamic(inst).to_dict()})
    except CapacityError as exc:
        lines.append({"problem": "mssc-dynamic", "error": str(exc)})
    try:
        lines.append({"problem": "ec-dynamic", **opt_ec_dynamic(inst).to_dict()})
    except CapacityError as exc:
        lines.append({"problem": "ec-dynamic", "error": str(exc)})
    st = opt_mssc_static(inst)
    lines.append({"problem": "mssc-static", "solver": "dp-exact" if st.exact else st.solver,
                  "total": st.total, "permutation": list(st.permutation.order)})
    if args.format == "csv":
        text = "problem,solver,total\n" + "".join(
            f"{d['problem']},{d.get('solver', '')},{d.get('total', '')}\n" for d in lines)
    else:
        text = "".join(_dump(d) + "\n" for d in lines)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onlinemssc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="master seed (u64)")
        p.add_argument("--trials", type=int, help="number of instances")

    p = sub.add_parser("gen", help="emit instance files")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="run an experiment")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--no-traces", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", help="replay stored LMA traces and audit the potential argument")
    p.add_argument("--run-dir", required=True, help="output directory of a previous `run`")
    p.add_argument("--r", type=int, help="r used for the potential parameters")
    p.add_argument("--include-wrapped", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("oracle", help="exact optima for one instance file")
    p.add_argument("--instance", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default="jsonl")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (CapacityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
