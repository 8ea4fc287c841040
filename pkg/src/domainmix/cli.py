"""Command-line pipeline driver.

Subcommands: ``repartition``, ``impact``, ``schedule``, ``simulate``,
``report``. Configuration is a flat JSON object; command-line flags
override file values. Every command writes the resolved config next to its
outputs, and all files go through write-temp-then-rename.

Exit codes: 0 success, 2 I/O problems, 3 validation problems, 4 internal.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cluster, impact, scheduler, toysim
from .gradtrace import (
    LossHistoryError,
    TraceError,
    read_loss_history,
    read_trace,
)
from .sketch import make_projection

EXIT_OK = 0
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_INTERNAL = 4


@dataclass
class EngineConfig:
    """Resolved knobs for every pipeline stage; flat and JSON-serializable."""

    keep_ratio: float = 0.1
    proj_dim: int = 1024
    proj_seed: int = 0
    k_domains: int = 72
    kmeans_seed: int = 0
    beta: float = 0.1
    tau: int = 4000
    temperature: float = 1.0
    floor: float | None = None
    impact_metric: str = "fim_kl"
    impact_direction: str = "aligned"
    fit_min_points: int = 3
    budget: int = 5000
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    strategies: tuple[str, ...] = ("dids", "uniform")
    trace_path: str = ""
    losses_path: str = ""
    out_dir: str = "out"
    # simulate-only knobs
    sim_samples_per_domain: int = 500
    sim_task_samples: int = 200
    sim_noise_fraction: float | None = None
    sim_include_noise: bool = True
    sim_hidden: int = 8
    sim_beta: float = 0.8
    sim_temperature: float = 0.06
    sim_batch_size: int = 32
    sim_lr: float = 0.1
    sim_corpus_seed: int = 100


PRESETS: dict[str, dict] = {
    # desk-scale profiles for the simulator; mirror the full-scale defaults
    # scaled to the toy model
    "desk-small": {
        "budget": 5000,
        "tau": 200,
        "k_domains": 3,
        "proj_dim": 16,
        "sim_samples_per_domain": 500,
    },
    "desk-medium": {
        "budget": 8000,
        "tau": 250,
        "k_domains": 3,
        "proj_dim": 32,
        "sim_samples_per_domain": 1000,
        "sim_hidden": 12,
    },
}


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_config(args: argparse.Namespace) -> EngineConfig:
    values: dict = {}
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise ValueError(f"unknown preset {args.preset!r}; have {sorted(PRESETS)}")
        values.update(PRESETS[args.preset])
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        loaded = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a flat JSON object")
        values.update(loaded)

    known = {f.name for f in dataclasses.fields(EngineConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    # flag overrides
    if getattr(args, "out", None):
        values["out_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        values["seeds"] = (args.seed,)
    if getattr(args, "strategy", None):
        values["strategies"] = tuple(s.strip() for s in args.strategy.split(","))
    if getattr(args, "trace", None):
        values["trace_path"] = args.trace
    if getattr(args, "losses", None):
        values["losses_path"] = args.losses
    for key in ("seeds", "strategies"):
        if key in values and isinstance(values[key], list):
            values[key] = tuple(values[key])
    return EngineConfig(**values)


def _echo_config(config: EngineConfig, out_dir: Path, command: str) -> None:
    payload = dataclasses.asdict(config)
    payload["command"] = command
    atomic_write_text(out_dir / "config.json", json.dumps(payload, indent=2) + "\n")


def cmd_repartition(config: EngineConfig) -> int:
    if not config.trace_path:
        raise ValueError("repartition needs a trace path (--trace)")
    path = Path(config.trace_path)
    if not path.exists():
        raise FileNotFoundError(f"trace not found: {path}")
    trace = read_trace(path)
    if config.k_domains > len(trace):
        raise ValueError(
            f"k_domains={config.k_domains} exceeds sample count {len(trace)}"
        )
    s = min(config.proj_dim, trace.dim)
    proj = make_projection(trace.dim, s, config.proj_seed)
    part = cluster.repartition(
        trace, config.keep_ratio, proj, k=config.k_domains, seed=config.kmeans_seed
    )
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "partition.csv"
    json_path = out / "partition.json"
    # save_partition writes directly; route through temp files for atomicity
    with tempfile.TemporaryDirectory(dir=out) as tmp:
        tmp_csv = Path(tmp) / "partition.csv"
        tmp_json = Path(tmp) / "partition.json"
        cluster.save_partition(part, tmp_csv, tmp_json)
        os.replace(tmp_csv, csv_path)
        os.replace(tmp_json, json_path)
    _echo_config(config, out, "repartition")
    print(f"wrote {csv_path} and {json_path} (k={part.k}, inertia={part.inertia:.6g})")
    return EXIT_OK


def _read_partition_csv(path: Path) -> dict[int, int]:
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != "sample_id,domain":
        raise ValueError(f"bad partition header in {path}")
    out: dict[int, int] = {}
    for line in lines[1:]:
        sid, dom = line.split(",")
        out[int(sid)] = int(dom)
    return out


def cmd_impact(config: EngineConfig, partition_path: str, task_trace_path: str) -> int:
    for label, p in (("trace", config.trace_path), ("partition", partition_path),
                     ("task trace", task_trace_path)):
        if not p:
            raise ValueError(f"impact needs a {label} path")
        if not Path(p).exists():
            raise FileNotFoundError(f"{label} not found: {p}")
    trace = read_trace(config.trace_path)
    assignments = _read_partition_csv(Path(partition_path))
    task_trace = read_trace(task_trace_path)
    if task_trace.dim != trace.dim:
        raise ValueError(
            f"task trace dim {task_trace.dim} does not match trace dim {trace.dim}"
        )

    k = max(assignments.values()) + 1
    sums = np.zeros((k, trace.dim))
    counts = np.zeros(k, dtype=int)
    for rec in trace.records:
        if rec.sample_id not in assignments:
            raise ValueError(f"sample {rec.sample_id} missing from partition")
        dom = assignments[rec.sample_id]
        sums[dom] += rec.vector
        counts[dom] += 1
    if np.any(counts == 0):
        raise ValueError("partition contains a domain with no trace records")
    dgrads = [
        impact.DomainGradient(domain=i, mean=sums[i] / counts[i], weight=float(counts[i]))
        for i in range(k)
    ]

    # task trace groups per-sample task gradients by their domain_hint
    task_ids = sorted({rec.domain_hint for rec in task_trace.records})
    if task_ids and task_ids[0] < 0:
        raise ValueError("task trace records need domain_hint >= 0 as the task id")
    tgrads, fims = [], []
    for j in task_ids:
        rows = np.stack([r.vector for r in task_trace.records if r.domain_hint == j])
        tgrads.append(impact.TaskGradient(task=j, mean=rows.mean(axis=0).astype(float),
                                          batch_size=len(rows)))
        fims.append(impact.estimate_fim_diagonal(rows.astype(float)))

    metric = {"fim_kl": "fim_kl", "dga": "dga_alignment",
              "dga_alignment": "dga_alignment"}.get(config.impact_metric)
    if metric is None:
        raise ValueError(f"unknown impact metric {config.impact_metric!r}")
    matrix = impact.build_impact_matrix(
        dgrads, tgrads, fims if metric == "fim_kl" else None,
        metric=metric, direction=config.impact_direction,
    )
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dest = out / "impact.csv"
    with tempfile.TemporaryDirectory(dir=out) as tmp:
        tmp_csv = Path(tmp) / "impact.csv"
        impact.save_impact_matrix(matrix, tmp_csv)
        os.replace(tmp_csv, dest)
    _echo_config(config, out, "impact")
    print(f"wrote {dest} ({matrix.raw.shape[0]} domains x {matrix.raw.shape[1]} tasks)")
    return EXIT_OK


def _read_impact_csv(path: Path) -> impact.ImpactMatrix:
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != "domain,task,raw,normalized,metric":
        raise ValueError(f"bad impact header in {path}")
    entries = []
    metric = "fim_kl"
    for line in lines[1:]:
        dom, task, raw, norm, metric = line.split(",")
        entries.append((int(dom), int(task), float(raw), float(norm)))
    k = max(e[0] for e in entries) + 1
    m = max(e[1] for e in entries) + 1
    raw = np.zeros((k, m))
    norm = np.zeros((k, m))
    for dom, task, r, n in entries:
        raw[dom, task] = r
        norm[dom, task] = n
    return impact.ImpactMatrix(raw=raw, normalized=norm, metric=metric)


def cmd_schedule(config: EngineConfig, impact_path: str, state_path: str | None) -> int:
    for label, p in (("impact CSV", impact_path), ("losses CSV", config.losses_path)):
        if not p:
            raise ValueError(f"schedule needs a {label} path")
        if not Path(p).exists():
            raise FileNotFoundError(f"{label} not found: {p}")
    matrix = _read_impact_csv(Path(impact_path))
    histories = read_loss_history(config.losses_path)
    k, m = matrix.normalized.shape
    if len(histories) != m:
        raise ValueError(f"impact matrix has {m} tasks but losses cover {len(histories)}")

    if state_path:
        if not Path(state_path).exists():
            raise FileNotFoundError(f"state not found: {state_path}")
        blob = json.loads(Path(state_path).read_text(encoding="utf-8"))
        state = scheduler.SamplingState(
            k=blob["k"], probs=np.array(blob["probs"]),
            prev_probs=np.array(blob["prev_probs"]), beta=blob["beta"],
            tau=blob["tau"], floor=blob["floor"], update_count=blob["update_count"],
        )
        if state.k != k:
            raise ValueError(f"state has k={state.k}, impact matrix has k={k}")
    else:
        state = scheduler.uniform_state(k, beta=config.beta, tau=config.tau,
                                        floor=config.floor)

    step = max(h.points[-1][0] for h in histories)
    dls, lps = [], []
    for hist in histories:
        dls.append(scheduler.loss_improvement(hist))
        if len(hist.points) >= config.fit_min_points:
            fit = scheduler.fit_decay(hist)
            lps.append(scheduler.potential(fit, step, state.tau, hist.points[-1][1]))
        else:
            lps.append(0.0)
    u = scheduler.utilities(matrix, dls, lps, state.probs)
    state = scheduler.update_probs(state, u, config.temperature)

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state_blob = {
        "k": state.k, "probs": state.probs.tolist(),
        "prev_probs": state.prev_probs.tolist(), "beta": state.beta,
        "tau": state.tau, "floor": state.floor, "update_count": state.update_count,
    }
    atomic_write_text(out / "state.json", json.dumps(state_blob, indent=2) + "\n")
    scheduler.append_schedule_log(out / "schedule_log.csv", state.update_count, step,
                                  state.probs, u.values)
    _echo_config(config, out, "schedule")
    print(f"wrote {out / 'state.json'} (update {state.update_count}, step {step})")
    return EXIT_OK


def _sim_corpus(config: EngineConfig) -> toysim.SyntheticCorpus:
    noise_samples = None
    include_noise = config.sim_include_noise
    if config.sim_noise_fraction is not None:
        f = config.sim_noise_fraction
        if not (0.0 <= f < 1.0):
            raise ValueError("sim_noise_fraction must be in [0, 1)")
        if f == 0.0:
            include_noise = False
        else:
            clean_total = 2 * config.sim_samples_per_domain
            noise_samples = max(1, round(f / (1.0 - f) * clean_total))
            include_noise = True
    spec = toysim.planted_corpus_spec(
        samples_per_domain=config.sim_samples_per_domain,
        task_samples=config.sim_task_samples,
        noise_samples=noise_samples,
        include_noise=include_noise,
    )
    return toysim.make_corpus(spec, config.sim_corpus_seed)


def _run_config(config: EngineConfig) -> toysim.RunConfig:
    return toysim.RunConfig(
        steps=config.budget,
        tau=config.tau,
        batch_size=config.sim_batch_size,
        lr=config.sim_lr,
        beta=config.sim_beta,
        temperature=config.sim_temperature,
        floor=config.floor,
        impact_metric=config.impact_metric,
        impact_direction=config.impact_direction,
        fit_min_points=config.fit_min_points,
        hidden=config.sim_hidden,
    )


def cmd_simulate(config: EngineConfig) -> int:
    for strategy in config.strategies:
        if strategy not in toysim.STRATEGIES:
            raise ValueError(
                f"unknown strategy {strategy!r}; expected one of {toysim.STRATEGIES}"
            )
    corpus = _sim_corpus(config)
    run_config = _run_config(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for strategy in config.strategies:
        for seed in config.seeds:
            report = toysim.run_strategy(corpus, strategy, run_config, seed)
            reports.append(report)
            stem = f"report_{strategy}_seed{seed}"
            with tempfile.TemporaryDirectory(dir=out) as tmp:
                tmp_json = Path(tmp) / "r.json"
                tmp_csv = Path(tmp) / "t.csv"
                toysim.save_report(report, tmp_json, tmp_csv)
                os.replace(tmp_json, out / f"{stem}.json")
                os.replace(tmp_csv, out / f"{stem}_trajectory.csv")
    rows = toysim.compare_strategies(reports)
    lines = ["strategy,n_seeds,mean_final_loss,std_final_loss,paired_wins"]
    for row in rows:
        wins = ";".join(f"{k}:{v}" for k, v in sorted(row.paired_wins.items()))
        lines.append(
            f"{row.strategy},{row.n_seeds},{row.mean_final_loss!r},"
            f"{row.std_final_loss!r},{wins}"
        )
    atomic_write_text(out / "comparison.csv", "\n".join(lines) + "\n")
    _echo_config(config, out, "simulate")
    print(f"wrote {len(reports)} reports and {out / 'comparison.csv'}")
    return EXIT_OK


def cmd_report(config: EngineConfig, report_paths: list[str]) -> int:
    if not report_paths:
        raise ValueError("report needs at least one report JSON path")
    reports = []
    for p in report_paths:
        path = Path(p)
        if not path.exists():
            raise FileNotFoundError(f"report not found: {path}")
        reports.append(toysim.load_report(path))
    ks = {rep.k for rep in reports}
    if len(ks) > 1:
        raise ValueError(f"reports have mismatched domain counts {sorted(ks)}")

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    lines = ["strategy,seed,update_index,step,domain,prob"]
    for rep in reports:
        for u, (step, row) in enumerate(zip(rep.update_steps, rep.trajectory)):
            for dom, p in enumerate(row):
                lines.append(f"{rep.strategy},{rep.seed},{u},{step},{dom},{float(p)!r}")
    atomic_write_text(out / "probability_vs_update.csv", "\n".join(lines) + "\n")

    # one row per (update schedule, strategy): supports update-frequency sweeps
    by_freq: dict[tuple[int, str], list[float]] = {}
    for rep in reports:
        updates = len(rep.update_steps) - 1
        by_freq.setdefault((updates, rep.strategy), []).append(rep.mean_final_loss)
    lines = ["updates,strategy,mean_final_loss,n_runs"]
    for (updates, strategy), vals in sorted(by_freq.items()):
        lines.append(f"{updates},{strategy},{float(np.mean(vals))!r},{len(vals)}")
    atomic_write_text(out / "score_vs_update_count.csv", "\n".join(lines) + "\n")

    # one row per (noise share, strategy) when corpora carried a noise domain
    by_noise: dict[tuple[float, str], list[float]] = {}
    for rep in reports:
        sizes = rep.config.get("corpus_sizes", [])
        names = rep.config.get("corpus_domains", [])
        noise = sum(s for s, n in zip(sizes, names) if n == "noise")
        frac = noise / sum(sizes) if sizes else 0.0
        by_noise.setdefault((round(frac, 4), rep.strategy), []).append(rep.mean_final_loss)
    lines = ["noise_fraction,strategy,mean_final_loss,n_runs"]
    for (frac, strategy), vals in sorted(by_noise.items()):
        lines.append(f"{frac},{strategy},{float(np.mean(vals))!r},{len(vals)}")
    atomic_write_text(out / "score_vs_noise_ratio.csv", "\n".join(lines) + "\n")

    _echo_config(config, out, "report")
    print(f"merged {len(reports)} reports into {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domainmix",
        description="domain-mixture scheduling pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--preset", help=f"named preset: {', '.join(sorted(PRESETS))}")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="single run seed (overrides seeds)")

    p = sub.add_parser("repartition", help="cluster a gradient trace into domains")
    common(p)
    p.add_argument("--trace", help="gradient trace file")

    p = sub.add_parser("impact", help="score domains against tasks")
    common(p)
    p.add_argument("--trace", help="training gradient trace")
    p.add_argument("--partition", help="partition CSV from repartition")
    p.add_argument("--task-trace", help="per-sample task gradients (domain_hint = task id)")

    p = sub.add_parser("schedule", help="run one sampling-probability update")
    common(p)
    p.add_argument("--impact", help="impact CSV")
    p.add_argument("--losses", help="loss-history CSV")
    p.add_argument("--state", help="prior state JSON (defaults to uniform)")

    p = sub.add_parser("simulate", help="run strategy simulations on a synthetic corpus")
    common(p)
    p.add_argument("--strategy", help="comma-separated strategy list")

    p = sub.add_parser("report", help="merge run reports into plot-ready CSVs")
    common(p)
    p.add_argument("reports", nargs="*", help="report JSON files")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        if args.command == "repartition":
            return cmd_repartition(config)
        if args.command == "impact":
            return cmd_impact(config, args.partition or "", args.task_trace or "")
        if args.command == "schedule":
            if getattr(args, "losses", None):
                config = dataclasses.replace(config, losses_path=args.losses)
            return cmd_schedule(config, args.impact or "", args.state)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "report":
            return cmd_report(config, args.reports)
        raise RuntimeError(f"unhandled command {args.command}")
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TraceError, LossHistoryError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
