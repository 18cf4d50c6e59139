"""Instance generation and experiment orchestration."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from .analysis import audit_run, build_mtf_from_opt, build_off_e_from_mtf, make_params
from .core import Instance, InvariantViolation, Permutation, Request, digest64, padded_size
from .ec import Lma, derive_seed, make_rng, replay_lma
from .oracles import (
    CapacityError,
    count_valid_partitionings,
    mae_step,
    mtf_step,
    opt_ec_dynamic,
    opt_mssc_dynamic,
    opt_mssc_static,
    run_list_algorithm,
)
from .reduction import canonic_partitioning, mimic_step, wrap_ec_algorithm

log = logging.getLogger(__name__)

GENERATORS = ("uniform-random", "zipf-popularity", "drifting-preferences", "adversarial-hot-swap", "from-file")
ALGORITHMS = ("lma", "mae", "mtf", "wrapped-lma")
ORACLES = ("mssc-dp", "ec-dp", "static")
PROBES = ("wrapped-lma", "mtf", "mae")
CSV_COLUMNS = ("instance_id", "algorithm", "seed", "total_access", "total_reorder", "opt_total", "ratio")
REPORT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class Limits:
    mssc_dp_max_states: int = 5040
    ec_dp_max_states: int = 5000
    static_exhaustive_max_n: int = 7


@dataclass
class ExperimentConfig:
    generator: str = "uniform-random"
    n_raw: int = 5
    m: int = 8
    r: int = 2
    seed: int = 0
    trials: int = 10
    seeds_per_instance: int = 20
    algorithms: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    oracles: list[str] = field(default_factory=lambda: ["mssc-dp", "ec-dp", "static"])
    limits: Limits = field(default_factory=Limits)
    drift_period: int = 4
    hot_size: int | None = None
    zipf_exponent: float = 1.0
    probe: str = "wrapped-lma"
    instance_file: str | None = None
    ratio_against: str = "dynamic"
    audit: bool = True
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "limits" in d:
            d["limits"] = Limits(**d["limits"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def file_instance(self) -> Instance:
        return Instance.from_json(Path(self.instance_file).read_text())

    def validate(self) -> None:
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}")
        if bad := set(self.algorithms) - set(ALGORITHMS):
            raise ConfigError(f"unknown algorithms {sorted(bad)}")
        if bad := set(self.oracles) - set(ORACLES):
            raise ConfigError(f"unknown oracles {sorted(bad)}")
        if self.probe not in PROBES:
            raise ConfigError(f"unknown probe {self.probe!r}")
        if self.ratio_against not in ("dynamic", "static"):
            raise ConfigError("ratio_against must be 'dynamic' or 'static'")
        if self.trials < 0 or self.seeds_per_instance < 1 or self.m < 0 or self.drift_period < 1:
            raise ConfigError("trials/m must be >= 0, seeds_per_instance/drift_period >= 1")
        if self.generator == "from-file":
            if not self.instance_file:
                raise ConfigError("from-file generator needs instance_file")
            n = self.file_instance().n
        else:
            if self.n_raw < 1 or self.r < 1:
                raise ConfigError("n_raw and r must be >= 1")
            if self.r > self.n_raw:
                raise ConfigError(f"r = {self.r} exceeds n_raw = {self.n_raw}")
            n = padded_size(self.n_raw)
        if "mssc-dp" in self.oracles and math.factorial(n) > self.limits.mssc_dp_max_states:
            raise CapacityError(f"mssc-dp: {n}! states exceed limit {self.limits.mssc_dp_max_states}")
        if "ec-dp" in self.oracles and count_valid_partitionings(n) > self.limits.ec_dp_max_states:
            raise CapacityError(
                f"ec-dp: {count_valid_partitionings(n)} states exceed limit {self.limits.ec_dp_max_states}"
            )


# --- generators ---


def _sizes(rng, m: int, r: int) -> list[int]:
    return [rng.randint(1, r) for _ in range(m)]


def uniform_requests(rng, n_raw: int, m: int, r: int) -> list[Request]:
    return [tuple(sorted(rng.sample(range(n_raw), q))) for q in _sizes(rng, m, r)]


def zipf_requests(rng, n_raw: int, m: int, r: int, exponent: float) -> list[Request]:
    ranking = rng.sample(range(n_raw), n_raw)
    weight = {x: 1.0 / (k + 1) ** exponent for k, x in enumerate(ranking)}
    out = []
    for q in _sizes(rng, m, r):
        pool = list(range(n_raw))
        chosen = []
        for _ in range(q):
            x = rng.choices(pool, weights=[weight[e] for e in pool])[0]
            pool.remove(x)
            chosen.append(x)
        out.append(tuple(sorted(chosen)))
    return out


def drifting_requests(rng, n_raw: int, m: int, r: int, period: int, hot_size: int | None = None
                      ) -> tuple[list[Request], list[tuple[int, ...]]]:
    """Requests drawn from a popular subset that is re-drawn every ``period`` steps.

    Returns the requests and the hot set in force at each step.
    """
    h = min(n_raw, hot_size or max(r, (n_raw + 1) // 2))
    out, hot_sets = [], []
    hot: tuple[int, ...] = ()
    for t, q in enumerate(_sizes(rng, m, r)):
        if t % period == 0:
            hot = tuple(sorted(rng.sample(range(n_raw), h)))
        out.append(tuple(sorted(rng.sample(hot, min(q, h)))))
        hot_sets.append(hot)
    return out, hot_sets


class ListProbe:
    """Online list algorithm stepped one request at a time (used by adaptive generators)."""

    def __init__(self, kind: str, initial: Permutation, seed: int):
        self.kind = kind
        self.pi = initial
        if kind == "wrapped-lma":
            self.p = canonic_partitioning(initial)
            self.alg = Lma(seed)
            self.alg.reset(self.p)

    def serve(self, R: Request) -> None:
        if self.kind == "wrapped-lma":
            resp = self.alg.serve(R)
            self.pi, _, _ = mimic_step(self.pi, self.p, resp.partitioning)
            self.p = resp.partitioning
        elif self.kind == "mtf":
            self.pi = mtf_step(self.pi, R)[0]
        else:
            self.pi = mae_step(self.pi, R)[0]


def adversarial_requests(rng, initial: Permutation, n_raw: int, m: int, r: int, probe: ListProbe) -> list[Request]:
    """Each request contains the real element the probe currently keeps deepest in its list."""
    out = []
    for q in _sizes(rng, m, r):
        deepest = max(range(n_raw), key=lambda x: probe.pi.position[x])
        others = rng.sample([x for x in range(n_raw) if x != deepest], q - 1)
        R = tuple(sorted([deepest] + others))
        probe.serve(R)
        out.append(R)
    return out


def generate_instance(config: ExperimentConfig, trial: int) -> Instance:
    if config.generator == "from-file":
        return config.file_instance()
    n_raw, m, r = config.n_raw, config.m, config.r
    if r > n_raw:
        raise ConfigError(f"r = {r} exceeds n_raw = {n_raw}")
    rng = make_rng(derive_seed(config.seed, "instance", trial))
    order = rng.sample(range(n_raw), n_raw)
    if config.generator == "uniform-random":
        requests = uniform_requests(rng, n_raw, m, r)
    elif config.generator == "zipf-popularity":
        requests = zipf_requests(rng, n_raw, m, r, config.zipf_exponent)
    elif config.generator == "drifting-preferences":
        requests, _ = drifting_requests(rng, n_raw, m, r, config.drift_period, config.hot_size)
    else:
        initial = Instance.from_raw(n_raw, order, []).initial
        probe = ListProbe(config.probe, initial, derive_seed(config.seed, "probe", trial))
        requests = adversarial_requests(rng, initial, n_raw, m, r, probe)
    return Instance.from_raw(n_raw, order, requests)


def small_corpus(seed: int = 0, count: int = 200, r: int = 2) -> list[Instance]:
    """Desk-scale corpus: every generator, n_raw in 3..7, m in 1..8, max set size r."""
    gens = GENERATORS[:4]
    out = []
    for k in range(count):
        cfg = ExperimentConfig(
            generator=gens[k % len(gens)],
            n_raw=3 + (k // len(gens)) % 5,
            m=8 - (k // 20) % 8,
            r=r,
            seed=seed,
            drift_period=1 + k % 3,
        )
        out.append(generate_instance(cfg, k))
    return out


# --- experiment ---


def _ratio(cost: float, opt: int | None, m: int) -> float | None:
    if m == 0:
        return 1.0
    if opt is None:
        return None
    return cost / opt


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


@dataclass
class TrialResult:
    instance_id: str
    instance: Instance
    rows: list[dict]
    traces: list[dict]
    oracle_lines: list[dict]
    audits: dict[str, dict]
    ok: bool


def run_trial(config: ExperimentConfig, trial: int) -> TrialResult:
    inst = generate_instance(config, trial)
    iid = f"{trial:04d}"
    rows, traces, oracle_lines = [], [], []
    audits: dict[str, dict] = {}
    ok = True
    lim = config.limits

    opt_dyn = opt_ec = static = None
    if "mssc-dp" in config.oracles:
        opt_dyn = opt_mssc_dynamic(inst, lim.mssc_dp_max_states)
        oracle_lines.append({"instance_id": iid, "problem": "mssc-dynamic", **opt_dyn.to_dict()})
    if "ec-dp" in config.oracles:
        opt_ec = opt_ec_dynamic(inst, lim.ec_dp_max_states)
        oracle_lines.append({"instance_id": iid, "problem": "ec-dynamic", **opt_ec.to_dict()})
    if "static" in config.oracles:
        static = opt_mssc_static(inst, lim.static_exhaustive_max_n)
        oracle_lines.append({
            "instance_id": iid, "problem": "mssc-static",
            "solver": "dp-exact" if static.exact else static.solver,
            "total": static.total, "permutation": list(static.permutation.order),
        })
    mssc_opt = (opt_dyn.total if opt_dyn else None) if config.ratio_against == "dynamic" else (
        static.total if static else None)
    ec_opt = opt_ec.total if opt_ec else None

    def add_row(alg, seed, access, reorder, opt):
        rows.append({
            "instance_id": iid, "algorithm": alg, "seed": seed,
            "total_access": access, "total_reorder": reorder,
            "opt_total": opt, "ratio": _ratio(access + reorder, opt, inst.m),
        })

    lma_traces = []
    lma_seeds = []
    if "lma" in config.algorithms or "wrapped-lma" in config.algorithms:
        for s in range(config.seeds_per_instance):
            seed = derive_seed(config.seed, "lma", trial, s)
            try:
                run = wrap_ec_algorithm(Lma(seed), inst)
            except InvariantViolation as exc:
                ok = False
                audits.setdefault("reduction", {"pass": True, "errors": []})
                audits["reduction"]["pass"] = False
                audits["reduction"]["errors"].append(f"seed {seed}: {exc}")
                continue
            lma_traces.append(run.ec_traces)
            lma_seeds.append(seed)
            if "lma" in config.algorithms:
                add_row("lma", seed, sum(t.access for t in run.ec_traces),
                        sum(t.movement for t in run.ec_traces), ec_opt)
                for t in run.ec_traces:
                    traces.append({"instance_id": iid, "algorithm": "lma", "seed": seed, **t.to_dict()})
            if "wrapped-lma" in config.algorithms:
                add_row("wrapped-lma", seed, run.total_access, run.total_reorder, mssc_opt)
                for t, w in zip(run.ec_traces, run.steps):
                    traces.append({"instance_id": iid, "algorithm": "wrapped-lma", "seed": seed,
                                   **t.to_dict(), **w.to_dict()})
    for name, step in (("mae", mae_step), ("mtf", mtf_step)):
        if name in config.algorithms:
            run = run_list_algorithm(step, inst)
            add_row(name, "", run.total_access, run.total_reorder, mssc_opt)
            for t, ((a, b), pi) in enumerate(zip(run.per_step, run.states[1:]), start=1):
                traces.append({"instance_id": iid, "algorithm": name, "seed": "", "step": t,
                               "access": a, "reorder": b, "perm_digest": pi.digest()})

    if config.audit:
        p0 = canonic_partitioning(inst.initial)
        engine_errors = []
        for seed, tr in zip(lma_seeds, lma_traces):
            try:
                replay_lma(p0, tr)
            except InvariantViolation as exc:
                engine_errors.append(f"seed {seed}: {exc}")
        if lma_traces:
            audits["engine"] = {"pass": not engine_errors, "runs": len(lma_traces), "errors": engine_errors}
            audits.setdefault("reduction", {"pass": True, "errors": []})
            ok &= not engine_errors
        if lma_traces and opt_ec is not None:
            params = make_params(max(config.r, inst.r, 1))
            rep = audit_run(lma_traces, opt_ec, params, seeds=lma_seeds)
            d = rep.to_dict()
            d.pop("seeds")
            audits["potential"] = d
            ok &= rep.ok
        if opt_dyn is not None:
            mtf = build_mtf_from_opt(opt_dyn, inst)
            off = build_off_e_from_mtf(mtf, inst)
            audits["constructions"] = {
                "mtf_I": mtf.total_I, "mtf_J": mtf.total_J, "opt_mssc": opt_dyn.total, "off_e": off.total,
                "replay_ok": mtf.replay_holds,
                # reported only: the factor 2 is not guaranteed when the move to front is paid
                "mtf_le_2opt": mtf.factor2_holds,
                "mtf_le_4opt": mtf.factor4_holds,
                "off_e_per_step_ok": off.per_step_holds,
                "opt_e_le_off_e": None if opt_ec is None else opt_ec.total <= off.total,
            }
            ok &= mtf.replay_holds and mtf.factor4_holds and off.per_step_holds
            if opt_ec is not None:
                ok &= opt_ec.total <= off.total
    return TrialResult(iid, inst, rows, traces, oracle_lines, audits, ok)


def _run_trial_args(args):
    return run_trial(*args)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    trials: list[TrialResult]

    @property
    def ok(self) -> bool:
        return all(t.ok for t in self.trials)

    @property
    def rows(self) -> list[dict]:
        return [r for t in self.trials for r in t.rows]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def jsonl_text(self, kind: str = "rows") -> str:
        if kind == "rows":
            items = self.rows
        elif kind == "traces":
            items = [x for t in self.trials for x in t.traces]
        else:
            items = [x for t in self.trials for x in t.oracle_lines]
        return "".join(json.dumps(x, sort_keys=True, separators=(",", ":")) + "\n" for x in items)

    def summary(self) -> dict:
        per_alg: dict[str, dict] = {}
        for alg in self.config.algorithms:
            inst_ratios, run_ratios = [], []
            for t in self.trials:
                rows = [r for r in t.rows if r["algorithm"] == alg]
                if not rows or rows[0]["ratio"] is None:
                    continue
                run_ratios += [r["ratio"] for r in rows]
                mean_cost = Fraction(sum(r["total_access"] + r["total_reorder"] for r in rows), len(rows))
                opt = rows[0]["opt_total"]
                inst_ratios.append(1.0 if t.instance.m == 0 else float(mean_cost / opt))
            if not inst_ratios:
                per_alg[alg] = {"instances": 0}
                continue
            qs = statistics.quantiles(run_ratios, n=10, method="inclusive") if len(run_ratios) > 1 else [run_ratios[0]] * 9
            per_alg[alg] = {
                "instances": len(inst_ratios),
                "runs": len(run_ratios),
                "mean_ratio": round(statistics.fmean(inst_ratios), 6),
                "max_ratio": round(max(inst_ratios), 6),
                "run_ratio_p50": round(qs[4], 6),
                "run_ratio_p90": round(qs[8], 6),
                "run_ratio_max": round(max(run_ratios), 6),
            }
        audit_summary: dict[str, dict] = {}
        for t in self.trials:
            for name, a in t.audits.items():
                s = audit_summary.setdefault(name, {"trials": 0, "failed": 0})
                s["trials"] += 1
                passed = a.get("pass", True)
                if name == "constructions":
                    passed = a["replay_ok"] and a["mtf_le_4opt"] and a["off_e_per_step_ok"] and a["opt_e_le_off_e"] is not False
                    s["mtf_le_2opt_failed"] = s.get("mtf_le_2opt_failed", 0) + (not a["mtf_le_2opt"])
                s["failed"] += not passed
        body = {
            "version": REPORT_VERSION,
            # worker count is an execution detail and never changes results
            "config": {k: v for k, v in self.config.to_dict().items() if k != "workers"},
            "ratio_against": self.config.ratio_against,
            "algorithms": per_alg,
            "audits": audit_summary,
            "ok": self.ok,
        }
        body["digest"] = digest_text(json.dumps(body, sort_keys=True))
        return body

    def write(self, out_dir: str | Path, fmt: str = "csv", traces: bool = True) -> dict[str, Path]:
        out = Path(out_dir)
        (out / "instances").mkdir(parents=True, exist_ok=True)
        paths = {}
        for t in self.trials:
            p = out / "instances" / f"instance_{t.instance_id}.json"
            p.write_text(t.instance.to_json() + "\n")
        if fmt == "csv":
            paths["results"] = out / "results.csv"
            paths["results"].write_text(self.csv_text())
        else:
            paths["results"] = out / "results.jsonl"
            paths["results"].write_text(self.jsonl_text("rows"))
        if traces:
            paths["traces"] = out / "traces.jsonl"
            paths["traces"].write_text(self.jsonl_text("traces"))
        paths["oracles"] = out / "oracles.jsonl"
        paths["oracles"].write_text(self.jsonl_text("oracles"))
        audits = [{"instance_id": t.instance_id, "ok": t.ok, **t.audits} for t in self.trials]
        paths["audit"] = out / "audit.jsonl"
        paths["audit"].write_text(
            "".join(json.dumps(a, sort_keys=True, separators=(",", ":")) + "\n" for a in audits)
        )
        summary = self.summary()
        summary["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        paths["summary"] = out / "summary.json"
        paths["summary"].write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
        return paths


def digest_text(text: str) -> str:
    return digest64(text.encode())


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run every trial; results depend only on the config, never on worker count."""
    config.validate()
    jobs = [(config, t) for t in range(config.trials)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            trials = list(pool.map(_run_trial_args, jobs))
    else:
        trials = [run_trial(*j) for j in jobs]
    log.info("ran %d trials", len(trials))
    return ExperimentReport(config, trials)
