"""Batch experiments: expand a plan into runs, simulate them, write one CSV.

A plan is a YAML mapping::

    output: results              # overridden by $PBSIM_OUT or --out
    parallel: 4
    baseline: base               # default reference label for normalized columns
    traces:
      mix: traces/mix.txt        # path relative to the plan file
      synth: {generate: {pages: 2048, accesses: 200000, seed: 7}}
    runs:
      - {label: base, scheme: baseline, trace: mix}
      - {label: cloak, scheme: cloak, trace: mix, overrides: {pb.threshold: 8}}
    matrix:
      schemes: [baseline, nvm_only, cloak, osram]
      traces: [mix, synth]
      sweep: {key: llc.size, values: [4MB, 8MB, 16MB, 32MB]}
      baseline_scheme: baseline  # reference within the same trace and sweep point
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .config import SCHEMES, ConfigError, load_config
from .hierarchy import simulate
from .metrics import finalize
from .workload import SynthParams, TraceError, generate, load_trace

OUT_ENV = "PBSIM_OUT"

# Fixed column order of the summary CSV.
COLUMNS = [
    "label", "scheme", "trace", "sweep_key", "sweep_value", "baseline",
    "instructions", "cycles", "ipc", "l2_mpki", "llc_mpki",
    "llc_hits", "llc_misses", "pb_hits", "pb_hit_fraction",
    "l2_miss_response_cycles", "llc_read_service_cycles",
    "ptr_sent", "ptr_gated_out", "ptr_no_victim", "ptr_promoted",
    "ptr_eligible_fraction", "ptr_victim_found_fraction",
    "promoted_lines", "promoted_lines_accessed", "promotion_utilization",
    "refilled_page_hit_fraction",
    "nvm_reads", "nvm_writes", "mem_reads", "mem_writes",
    "energy_j", "ed2", "audit_violations",
    "speedup", "norm_l2_miss_response", "norm_llc_read_service", "norm_ed2",
]


class PlanError(ConfigError):
    pass


@dataclass(frozen=True)
class RunSpec:
    label: str
    scheme: str
    trace: str
    config: Optional[str] = None
    overrides: tuple[tuple[str, Any], ...] = ()
    baseline: Optional[str] = None
    sweep_key: str = ""
    sweep_value: str = ""


@dataclass
class ExperimentPlan:
    runs: list[RunSpec]
    traces: dict[str, Any]
    output: Path
    parallel: int = 1
    root: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        seen = set()
        for r in self.runs:
            if r.label in seen:
                raise PlanError(f"duplicate run label {r.label!r}")
            seen.add(r.label)
        for r in self.runs:
            if r.baseline is not None and r.baseline not in seen:
                raise PlanError(f"run {r.label!r}: unknown baseline label {r.baseline!r}")
            if r.trace not in self.traces:
                raise PlanError(f"run {r.label!r}: unknown trace {r.trace!r}")


def _fmt_value(v: Any) -> str:
    return str(v).strip()


def parse_plan(data: dict, root: Path | str = ".") -> ExperimentPlan:
    if not isinstance(data, dict):
        raise PlanError("plan must be a mapping")
    root = Path(root)
    unknown = set(data) - {"output", "parallel", "baseline", "traces", "runs", "matrix"}
    if unknown:
        raise PlanError(f"unknown plan keys: {sorted(unknown)}")
    traces = data.get("traces") or {}
    if not isinstance(traces, dict):
        raise PlanError("traces must map names to paths or {generate: {...}}")
    default_base = data.get("baseline")
    runs: list[RunSpec] = []
    for item in data.get("runs") or []:
        try:
            runs.append(_run_from(item, default_base))
        except (KeyError, TypeError) as exc:
            raise PlanError(f"bad run entry {item!r}: {exc}") from None
    matrix = data.get("matrix")
    if matrix:
        runs.extend(_expand_matrix(matrix, default_base))
    if not runs:
        raise PlanError("plan has no runs")
    return ExperimentPlan(
        runs=runs,
        traces=traces,
        output=Path(data.get("output", "results")),
        parallel=int(data.get("parallel", 1)),
        root=root,
    )


def _run_from(item: dict, default_base: Optional[str]) -> RunSpec:
    scheme = item["scheme"]
    if scheme not in SCHEMES:
        raise PlanError(f"unknown scheme {scheme!r}")
    ov = item.get("overrides") or {}
    return RunSpec(
        label=str(item.get("label") or f"{scheme}/{item['trace']}"),
        scheme=scheme,
        trace=str(item["trace"]),
        config=item.get("config"),
        overrides=tuple(sorted((k, _fmt_value(v)) for k, v in ov.items())),
        baseline=item.get("baseline", default_base),
    )


def _expand_matrix(mx: dict, default_base: Optional[str]) -> list[RunSpec]:
    schemes = mx.get("schemes") or list(SCHEMES)
    for s in schemes:
        if s not in SCHEMES:
            raise PlanError(f"unknown scheme {s!r}")
    traces = mx.get("traces")
    if not traces:
        raise PlanError("matrix needs a trace list")
    sweep = mx.get("sweep")
    points: list[tuple[str, str]] = [("", "")]
    if sweep:
        points = [(sweep["key"], _fmt_value(v)) for v in sweep["values"]]
    base_scheme = mx.get("baseline_scheme")
    if base_scheme is not None and base_scheme not in schemes:
        raise PlanError(f"baseline_scheme {base_scheme!r} is not in the matrix")
    common = dict(mx.get("overrides") or {})
    runs = []
    for trace in traces:
        for key, value in points:
            suffix = f"/{key}={value}" if key else ""
            ref = f"{base_scheme}/{trace}{suffix}" if base_scheme else default_base
            for s in schemes:
                ov = {k: _fmt_value(v) for k, v in common.items()}
                if key:
                    ov[key] = value
                runs.append(RunSpec(
                    label=f"{s}/{trace}{suffix}",
                    scheme=s,
                    trace=str(trace),
                    config=mx.get("config"),
                    overrides=tuple(sorted(ov.items())),
                    baseline=ref,
                    sweep_key=key,
                    sweep_value=value,
                ))
    return runs


def load_plan(path: str | Path) -> ExperimentPlan:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise PlanError(f"cannot read plan {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise PlanError(f"{path}: {exc}") from None
    return parse_plan(data, path.parent)


# -- execution ---------------------------------------------------------------

_trace_cache: dict[str, list] = {}


def _resolve_trace(spec: Any, root: Path):
    key = repr((spec, str(root)))
    cached = _trace_cache.get(key)
    if cached is not None:
        return cached
    if isinstance(spec, dict):
        try:
            params = SynthParams(**(spec.get("generate") or {}))
        except (TypeError, ValueError) as exc:
            raise PlanError(f"bad generate parameters: {exc}") from None
        trace = generate(params)
    else:
        path = root / str(spec)
        if not path.exists():
            raise TraceError(f"trace file not found: {path}")
        trace = load_trace(path)
    _trace_cache.clear()  # one trace at a time per process keeps memory flat
    _trace_cache[key] = trace
    return trace


def _config_for(run: RunSpec, root: Path):
    ov = dict(run.overrides)
    ov["core.scheme"] = run.scheme
    cfg_path = root / run.config if run.config else None
    return load_config(cfg_path, ov)


def execute_run(run: RunSpec, trace_spec: Any, root: Path) -> dict[str, Any]:
    cfg = _config_for(run, root)
    trace = _resolve_trace(trace_spec, root)
    metrics = simulate(cfg, trace)
    report = finalize(metrics, cfg)
    report.update(
        label=run.label, scheme=run.scheme, trace=run.trace,
        sweep_key=run.sweep_key, sweep_value=run.sweep_value,
        baseline=run.baseline or "",
    )
    return report


def _job(args):
    return execute_run(*args)


def run_reports(plan: ExperimentPlan, parallel: Optional[int] = None) -> list[dict[str, Any]]:
    """Simulate every run; results come back in plan order regardless of parallelism."""
    # Fail on config and trace problems before spending time on simulation.
    for run in plan.runs:
        _config_for(run, plan.root)
        spec = plan.traces[run.trace]
        if not isinstance(spec, dict) and not (plan.root / str(spec)).exists():
            raise TraceError(f"trace file not found: {plan.root / str(spec)}")
    jobs = [(r, plan.traces[r.trace], plan.root) for r in plan.runs]
    # group by trace so each worker reuses a loaded trace
    order = sorted(range(len(jobs)), key=lambda i: jobs[i][0].trace)
    workers = plan.parallel if parallel is None else parallel
    if workers <= 1:
        results = {i: _job(jobs[i]) for i in order}
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = pool.map(_job, [jobs[i] for i in order])
            results = dict(zip(order, out))
    return [results[i] for i in range(len(jobs))]


def add_normalized(reports: list[dict[str, Any]]) -> None:
    """Speedup and normalized sums against each row's baseline label."""
    by_label = {r["label"]: r for r in reports}
    for r in reports:
        ref = by_label.get(r["baseline"]) if r["baseline"] else None
        if ref is None:
            for col in ("speedup", "norm_l2_miss_response", "norm_llc_read_service", "norm_ed2"):
                r[col] = None
            continue
        r["speedup"] = _div(ref["cycles"], r["cycles"])
        r["norm_l2_miss_response"] = _div(r["l2_miss_response_cycles"], ref["l2_miss_response_cycles"])
        r["norm_llc_read_service"] = _div(r["llc_read_service_cycles"], ref["llc_read_service_cycles"])
        r["norm_ed2"] = _div(r["ed2"], ref["ed2"])


def _div(a, b):
    return a / b if b else None


def format_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def to_csv(reports: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in reports:
        w.writerow([format_cell(r.get(c)) for c in COLUMNS])
    return buf.getvalue()


def output_dir(plan: ExperimentPlan, override: Optional[str] = None) -> Path:
    if override:
        return Path(override)
    env = os.environ.get(OUT_ENV)
    if env:
        return Path(env)
    out = plan.output
    return out if out.is_absolute() else plan.root / out


def run_plan(plan: ExperimentPlan, out: Optional[str] = None, parallel: Optional[int] = None) -> Path:
    """Run a plan; write ``summary.csv`` plus plot tables; return the CSV path."""
    reports = run_reports(plan, parallel)
    add_normalized(reports)
    dest = output_dir(plan, out)
    dest.mkdir(parents=True, exist_ok=True)
    csv_path = dest / "summary.csv"
    csv_path.write_text(to_csv(reports))
    emit_plot_data(csv_path, dest / "plots")
    return csv_path


# -- plot tables -------------------------------------------------------------

PLOT_METRICS = ("speedup", "norm_l2_miss_response", "norm_llc_read_service", "norm_ed2", "llc_mpki", "pb_hit_fraction")


def _gmean(values: list[float]) -> Optional[float]:
    """Geometric mean; falls back to the arithmetic mean when a value is not positive."""
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    if min(vals) <= 0:
        return sum(vals) / len(vals)
    return math.exp(sum(math.log(v) for v in vals) / len(vals))


def emit_plot_data(csv_path: str | Path, out_dir: str | Path) -> list[Path]:
    """Write one tab-separated table per (grouping, metric): ``x`` then one column per scheme.

    Sweep rows use the sweep value as ``x`` (geometric mean over traces);
    plain rows use the trace name.
    """
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(row["sweep_key"] or "", []).append(row)
    for key, grp in groups.items():
        schemes = list(dict.fromkeys(r["scheme"] for r in grp))
        xcol = "sweep_value" if key else "trace"
        xs = list(dict.fromkeys(r[xcol] for r in grp))
        stem = f"sweep_{key.replace('.', '_')}" if key else "by_trace"
        for metric in PLOT_METRICS:
            lines = ["\t".join(["x"] + schemes)]
            for x in xs:
                cells = [x]
                for s in schemes:
                    vals = [float(r[metric]) for r in grp if r[xcol] == x and r["scheme"] == s and r[metric] != ""]
                    cells.append(format_cell(_gmean(vals)))
                lines.append("\t".join(cells))
            path = out_dir / f"{stem}__{metric}.tsv"
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
    return written
