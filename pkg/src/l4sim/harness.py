"""Experiment harness: metric computation, preset scenarios reproducing the
four comparison cases, the multi-seed comparison runner, and CSV emission.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Iterable, Sequence

from .aqm import DropTailConfig, DualPi2Config
from .cc import ControllerKind, GccParams, ScalableParams
from .core import EcnCodepoint, SimTime, us_from_s
from .media import SourceConfig
from .netem import (
    Constant,
    JitterProfile,
    SquareWave,
    TracePattern,
    average_capacity_bps,
    jitter_profile_ms,
    load_trace_csv,
    trace_pattern,
)
from .sim import Scenario, TimelineLog, run_scenario

PRESET_CASES = ("case1", "case2", "case3", "case4a", "case4b", "case4c")

_JITTER_PROFILES_MS = {
    "case4a": ((10, 0.85), (12, 0.10), (14, 0.04), (16, 0.01)),
    "case4b": ((10, 0.85), (14, 0.10), (18, 0.04), (22, 0.01)),
    "case4c": ((10, 0.85), (18, 0.10), (26, 0.04), (34, 0.01)),
}


@dataclass(frozen=True)
class MetricsReport:
    """Per-run summary metrics."""

    rtt_max_ms: float
    rtt_min_ms: float
    rtt_avg_ms: float
    stalling_rate: float
    quality_mbps: float
    bandwidth_utilization: float
    mark_count: int
    drop_count: int


METRIC_FIELDS = tuple(f.name for f in fields(MetricsReport))


def compute_metrics(log: TimelineLog, scenario: Scenario) -> MetricsReport:
    """Reduce a run log to the report metrics.

    RTT statistics cover every per-packet sample (send-to-arrival plus the
    feedback echo delay). Quality counts bytes of frames actually played;
    utilization divides by the time-average forward capacity.
    """
    samples = log.rtt_samples_us
    if not samples:
        raise ValueError("empty run: no RTT samples to aggregate")
    duration_s = log.duration_us / 1e6
    quality_bps = log.played_bytes * 8 / duration_s
    avg_capacity = average_capacity_bps(scenario.capacity, log.duration_us)
    return MetricsReport(
        rtt_max_ms=max(samples) / 1_000.0,
        rtt_min_ms=min(samples) / 1_000.0,
        rtt_avg_ms=sum(samples) / len(samples) / 1_000.0,
        stalling_rate=log.stalled_us / log.duration_us,
        quality_mbps=quality_bps / 1e6,
        bandwidth_utilization=quality_bps / avg_capacity,
        mark_count=log.mark_count,
        drop_count=log.drop_count,
    )


def bundled_case3_samples() -> list[tuple[SimTime, float]]:
    """The synthetic cellular-style trace shipped with the package,
    already normalized onto 0..5 Mbps."""
    ref = resources.files("l4sim").joinpath("data/case3_trace.csv")
    with resources.as_file(ref) as path:
        return load_trace_csv(str(path))


def _source_for(kind: ControllerKind) -> SourceConfig:
    ecn = (
        EcnCodepoint.ECT1
        if kind in (ControllerKind.L4S_CC, ControllerKind.L4S_GCC)
        else EcnCodepoint.NOT_ECT
    )
    return SourceConfig(ecn_mode=ecn)


def preset_scenario(
    case: str,
    controller: ControllerKind,
    seed: int = 1,
    duration_s: float = 120.0,
) -> Scenario:
    """Build one of the named comparison scenarios.

    case1: constant 3 Mbps, no jitter. case2: 2.5/4 Mbps square wave.
    case3: bundled normalized trace. case4a/b/c: 5 Mbps with delay jitter
    profiles of growing spread (85/10/4/1% weights).
    """
    if case not in PRESET_CASES:
        raise ValueError(f"unknown preset {case!r}; choose one of {', '.join(PRESET_CASES)}")
    jitter: JitterProfile | None = None
    if case == "case1":
        capacity = Constant(3.0)
    elif case == "case2":
        capacity = SquareWave(2.5, 4.0, 10_000_000)
    elif case == "case3":
        capacity = trace_pattern(bundled_case3_samples())
    else:
        capacity = Constant(5.0)
        jitter = jitter_profile_ms(_JITTER_PROFILES_MS[case])
    return Scenario(
        seed=seed,
        duration_s=duration_s,
        capacity=capacity,
        jitter=jitter,
        controller=controller,
        source=_source_for(controller),
    )


@dataclass(frozen=True)
class ComparisonRow:
    """Aggregated cell for one (case, controller) pair."""

    case: str
    controller: str
    seed_count: int
    means: dict[str, float]
    stdevs: dict[str, float]
    runs: tuple[MetricsReport, ...] = field(default=(), compare=False, repr=False)


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]

    def row(self, case: str, controller: str) -> ComparisonRow:
        for r in self.rows:
            if r.case == case and r.controller == controller:
                return r
        raise KeyError(f"no row for ({case}, {controller})")


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def _pstdev(values: Sequence[float]) -> float:
    # Population stdev: a single seed aggregates to exactly its own report.
    m = _mean(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / len(values))


def _aggregate(case: str, controller: str, runs: Sequence[MetricsReport]) -> ComparisonRow:
    means = {}
    stdevs = {}
    for name in METRIC_FIELDS:
        values = [float(getattr(r, name)) for r in runs]
        means[name] = _mean(values)
        stdevs[name] = _pstdev(values)
    return ComparisonRow(
        case=case,
        controller=controller,
        seed_count=len(runs),
        means=means,
        stdevs=stdevs,
        runs=tuple(runs),
    )


def _run_one(args: tuple[str, str, int, float]) -> MetricsReport:
    case, controller_value, seed, duration_s = args
    scenario = preset_scenario(case, ControllerKind(controller_value), seed, duration_s)
    metrics, _log = run_scenario(scenario)
    return metrics


def run_comparison(
    cases: Sequence[str],
    controllers: Sequence[ControllerKind],
    seeds: Sequence[int],
    duration_s: float = 120.0,
    workers: int = 1,
) -> ComparisonTable:
    """Run every (case, controller, seed) triple and aggregate mean/stdev.

    Runs are independent, so they may execute in parallel; results are
    collected in input order either way, keeping the table deterministic.
    """
    if not cases or not controllers or not seeds:
        raise ValueError("cases, controllers, and seeds must be non-empty")
    jobs = [
        (case, controller.value, seed, duration_s)
        for case in cases
        for controller in controllers
        for seed in seeds
    ]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            try:
                results = list(pool.map(_run_one, jobs))
            except Exception as exc:  # identify the offending triple
                raise RuntimeError(f"comparison run failed: {exc}") from exc
    else:
        results = []
        for job in jobs:
            try:
                results.append(_run_one(job))
            except Exception as exc:
                case, controller_value, seed, _ = job
                raise RuntimeError(
                    f"run failed for case={case} controller={controller_value} seed={seed}: {exc}"
                ) from exc
    rows = []
    per_cell = len(seeds)
    idx = 0
    for case in cases:
        for controller in controllers:
            cell_runs = results[idx : idx + per_cell]
            idx += per_cell
            rows.append(_aggregate(case, controller.value, cell_runs))
    return ComparisonTable(rows=tuple(rows))


# -- emission ----------------------------------------------------------------

TABLE_COLUMNS = (
    "case",
    "controller",
    "seed_count",
    "rtt_max_ms",
    "rtt_min_ms",
    "rtt_avg_ms",
    "stall_rate",
    "quality_mbps",
    "utilization",
    "marks",
    "drops",
)

_COLUMN_TO_METRIC = {
    "rtt_max_ms": "rtt_max_ms",
    "rtt_min_ms": "rtt_min_ms",
    "rtt_avg_ms": "rtt_avg_ms",
    "stall_rate": "stalling_rate",
    "quality_mbps": "quality_mbps",
    "utilization": "bandwidth_utilization",
    "marks": "mark_count",
    "drops": "drop_count",
}


def table_csv_lines(table: ComparisonTable) -> list[str]:
    lines = [",".join(TABLE_COLUMNS)]
    for row in table.rows:
        cells = [row.case, row.controller, str(row.seed_count)]
        for column in TABLE_COLUMNS[3:]:
            cells.append(repr(row.means[_COLUMN_TO_METRIC[column]]))
        lines.append(",".join(cells))
    return lines


def emit_table_csv(table: ComparisonTable, path: str) -> None:
    _write_lines(path, table_csv_lines(table))


def parse_table_csv(path: str) -> ComparisonTable:
    """Read back an emitted comparison CSV (means only)."""
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0] != ",".join(TABLE_COLUMNS):
        raise ValueError(f"{path}: not a comparison table CSV")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        means = {
            _COLUMN_TO_METRIC[col]: float(cell) for col, cell in zip(TABLE_COLUMNS[3:], cells[3:])
        }
        rows.append(
            ComparisonRow(
                case=cells[0],
                controller=cells[1],
                seed_count=int(cells[2]),
                means=means,
                stdevs={name: 0.0 for name in means},
            )
        )
    return ComparisonTable(rows=tuple(rows))


def format_table_text(table: ComparisonTable) -> str:
    """Aligned text table, mean +/- stdev per metric."""
    headers = ["case", "controller", "rtt max/min/avg (ms)", "stall", "quality (Mbps)", "util"]
    body = []
    for row in table.rows:
        m, s = row.means, row.stdevs
        body.append(
            [
                row.case,
                row.controller,
                f"{m['rtt_max_ms']:.1f}/{m['rtt_min_ms']:.1f}/{m['rtt_avg_ms']:.1f}",
                f"{100 * m['stalling_rate']:.2f}%+-{100 * s['stalling_rate']:.2f}",
                f"{m['quality_mbps']:.2f}+-{s['quality_mbps']:.2f}",
                f"{100 * m['bandwidth_utilization']:.1f}%+-{100 * s['bandwidth_utilization']:.1f}",
            ]
        )
    widths = [max(len(r[i]) for r in [headers] + body) for i in range(len(headers))]
    out = []
    for r in [headers] + body:
        out.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(out) + "\n"


def metrics_csv_lines(report: MetricsReport) -> list[str]:
    header = ",".join(METRIC_FIELDS)
    values = ",".join(repr(getattr(report, name)) for name in METRIC_FIELDS)
    return [header, values]


# -- scenario files ------------------------------------------------------------

class ScenarioError(ValueError):
    """Invalid scenario configuration; the message names the field path."""


def _take(mapping: dict, path: str, allowed: set[str]) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        name = sorted(unknown)[0]
        where = f"{path}.{name}" if path else name
        raise ScenarioError(f"{where}: unknown key")


def _get_number(mapping: dict, path: str, key: str, default=None, required=False):
    if key not in mapping:
        if required:
            raise ScenarioError(f"{path}{key}: missing required key")
        return default
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{path}{key}: expected a number, got {value!r}")
    return value


def _capacity_from_dict(spec: dict) -> "Constant | SquareWave | TracePattern":
    if not isinstance(spec, dict):
        raise ScenarioError("link.capacity: expected an object")
    kind = spec.get("kind")
    try:
        if kind == "constant":
            _take(spec, "link.capacity", {"kind", "mbps"})
            return Constant(_get_number(spec, "link.capacity.", "mbps", required=True))
        if kind == "square":
            _take(spec, "link.capacity", {"kind", "low_mbps", "high_mbps", "half_period_s"})
            return SquareWave(
                _get_number(spec, "link.capacity.", "low_mbps", required=True),
                _get_number(spec, "link.capacity.", "high_mbps", required=True),
                us_from_s(_get_number(spec, "link.capacity.", "half_period_s", required=True)),
            )
        if kind == "trace":
            _take(spec, "link.capacity", {"kind", "path"})
            path = spec.get("path")
            if not isinstance(path, str):
                raise ScenarioError("link.capacity.path: expected a file path string")
            return trace_pattern(load_trace_csv(path))
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"link.capacity: {exc}") from exc
    raise ScenarioError(
        f"link.capacity.kind: expected one of constant/square/trace, got {kind!r}"
    )


def _delay_from_dict(spec: dict) -> tuple[int, JitterProfile | None]:
    if not isinstance(spec, dict):
        raise ScenarioError("link.forward_delay: expected an object")
    kind = spec.get("kind")
    if kind == "fixed":
        _take(spec, "link.forward_delay", {"kind", "delay_ms"})
        delay = _get_number(spec, "link.forward_delay.", "delay_ms", required=True)
        return us_from_ms_checked(delay, "link.forward_delay.delay_ms"), None
    if kind == "jitter":
        _take(spec, "link.forward_delay", {"kind", "entries"})
        entries = spec.get("entries")
        if not isinstance(entries, list) or not all(
            isinstance(e, (list, tuple)) and len(e) == 2 for e in entries
        ):
            raise ScenarioError(
                "link.forward_delay.entries: expected [delay_ms, probability] pairs"
            )
        try:
            profile = jitter_profile_ms([(float(d), float(p)) for d, p in entries])
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"link.forward_delay.entries: {exc}") from exc
        # Jitter replaces the fixed delay; keep a nominal base for validation.
        return 0, profile
    raise ScenarioError(
        f"link.forward_delay.kind: expected one of fixed/jitter, got {kind!r}"
    )


def us_from_ms_checked(ms: float, path: str) -> int:
    if ms <= 0:
        raise ScenarioError(f"{path}: must be positive, got {ms}")
    return int(round(ms * 1_000))


_GCC_PARAM_KEYS = {
    "window": "window",
    "threshold_gain": "threshold_gain",
    "gamma_init_ms": "gamma_init_ms",
    "gamma_min_ms": "gamma_min_ms",
    "gamma_max_ms": "gamma_max_ms",
    "k_up": "k_up",
    "k_down": "k_down",
    "overuse_time_ms": "overuse_time_ms",
    "eta_increase": "eta_increase",
    "decrease_factor": "decrease_factor",
    "loss_high": "loss_high",
    "loss_low": "loss_low",
}


def scenario_from_dict(data: dict) -> Scenario:
    """Build a Scenario from a JSON-compatible mapping, rejecting unknown
    keys and invalid values with a field-path message."""
    if not isinstance(data, dict):
        raise ScenarioError("scenario: expected a JSON object")
    _take(
        data,
        "",
        {
            "seed",
            "duration_s",
            "link",
            "aqm",
            "controller",
            "source",
            "feedback_interval_ms",
            "dejitter_ms",
        },
    )
    seed = data.get("seed", 1)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ScenarioError(f"seed: expected an integer, got {seed!r}")
    duration_s = _get_number(data, "", "duration_s", default=120.0)
    if duration_s <= 0:
        raise ScenarioError(f"duration_s: must be positive, got {duration_s}")

    link = data.get("link")
    if not isinstance(link, dict):
        raise ScenarioError("link: missing required object")
    _take(link, "link", {"capacity", "forward_delay", "reverse_delay_ms"})
    if "capacity" not in link:
        raise ScenarioError("link.capacity: missing required key")
    capacity = _capacity_from_dict(link["capacity"])
    if "forward_delay" in link:
        forward_delay_us, jitter = _delay_from_dict(link["forward_delay"])
    else:
        forward_delay_us, jitter = 6_000, None
    if forward_delay_us == 0:
        forward_delay_us = 6_000  # nominal; jitter samples replace it
    reverse_delay_us = us_from_ms_checked(
        _get_number(link, "link.", "reverse_delay_ms", default=6.0), "link.reverse_delay_ms"
    )

    controller_spec = data.get("controller")
    if not isinstance(controller_spec, dict):
        raise ScenarioError("controller: missing required object")
    allowed_controller = {"kind", "ewma_gain", "additive_step_bps"} | set(_GCC_PARAM_KEYS)
    _take(controller_spec, "controller", allowed_controller)
    kind_value = controller_spec.get("kind")
    try:
        kind = ControllerKind(kind_value)
    except ValueError:
        valid = ", ".join(k.value for k in ControllerKind)
        raise ScenarioError(
            f"controller.kind: expected one of {valid}, got {kind_value!r}"
        ) from None
    gcc_params = None
    gcc_overrides = {
        field_name: controller_spec[key]
        for key, field_name in _GCC_PARAM_KEYS.items()
        if key in controller_spec
    }
    if gcc_overrides:
        base = GccParams.sensitive() if kind is ControllerKind.SENSITIVE_GCC else GccParams()
        for name, value in gcc_overrides.items():
            setattr(base, name, value)
        gcc_params = base
    scalable_params = None
    if "ewma_gain" in controller_spec or "additive_step_bps" in controller_spec:
        scalable_params = ScalableParams(
            ewma_gain=controller_spec.get("ewma_gain", 1.0 / 16.0),
            additive_step_bps=controller_spec.get("additive_step_bps", 50_000),
        )

    aqm_spec = data.get("aqm", {"kind": "dualpi2"})
    if not isinstance(aqm_spec, dict):
        raise ScenarioError("aqm: expected an object")
    aqm_kind = aqm_spec.get("kind", "dualpi2")
    if aqm_kind == "dualpi2":
        _take(
            aqm_spec,
            "aqm",
            {
                "kind",
                "target_delay_ms",
                "t_update_ms",
                "alpha",
                "beta",
                "coupling_k",
                "l4s_step_threshold_ms",
                "queue_limit_bytes",
                "time_shift_ms",
            },
        )
        aqm_config: DualPi2Config | DropTailConfig = DualPi2Config(
            target_delay_us=us_from_ms_checked(
                _get_number(aqm_spec, "aqm.", "target_delay_ms", default=15.0),
                "aqm.target_delay_ms",
            ),
            t_update_us=us_from_ms_checked(
                _get_number(aqm_spec, "aqm.", "t_update_ms", default=16.0), "aqm.t_update_ms"
            ),
            alpha=_get_number(aqm_spec, "aqm.", "alpha", default=0.16),
            beta=_get_number(aqm_spec, "aqm.", "beta", default=3.2),
            coupling_k=_get_number(aqm_spec, "aqm.", "coupling_k", default=2.0),
            l4s_step_threshold_us=us_from_ms_checked(
                _get_number(aqm_spec, "aqm.", "l4s_step_threshold_ms", default=1.0),
                "aqm.l4s_step_threshold_ms",
            ),
            queue_limit_bytes=int(
                _get_number(aqm_spec, "aqm.", "queue_limit_bytes", default=375_000)
            ),
            time_shift_us=us_from_ms_checked(
                _get_number(aqm_spec, "aqm.", "time_shift_ms", default=50.0), "aqm.time_shift_ms"
            ),
        )
    elif aqm_kind == "droptail":
        _take(aqm_spec, "aqm", {"kind", "queue_limit_bytes"})
        aqm_config = DropTailConfig(
            queue_limit_bytes=int(
                _get_number(aqm_spec, "aqm.", "queue_limit_bytes", default=375_000)
            )
        )
    else:
        raise ScenarioError(f"aqm.kind: expected dualpi2 or droptail, got {aqm_kind!r}")

    source_spec = data.get("source", {})
    if not isinstance(source_spec, dict):
        raise ScenarioError("source: expected an object")
    _take(
        source_spec,
        "source",
        {"fps", "mtu_bytes", "min_bitrate_bps", "max_bitrate_bps", "start_bitrate_bps", "ecn_mode"},
    )
    ecn_mode = source_spec.get("ecn_mode")
    if ecn_mode is None:
        ecn = _source_for(kind).ecn_mode
    elif ecn_mode == "ect1":
        ecn = EcnCodepoint.ECT1
    elif ecn_mode == "not-ect":
        ecn = EcnCodepoint.NOT_ECT
    else:
        raise ScenarioError(f"source.ecn_mode: expected ect1 or not-ect, got {ecn_mode!r}")
    source = SourceConfig(
        fps=int(_get_number(source_spec, "source.", "fps", default=30)),
        mtu_bytes=int(_get_number(source_spec, "source.", "mtu_bytes", default=1_200)),
        min_bitrate_bps=int(
            _get_number(source_spec, "source.", "min_bitrate_bps", default=150_000)
        ),
        max_bitrate_bps=int(
            _get_number(source_spec, "source.", "max_bitrate_bps", default=5_000_000)
        ),
        start_bitrate_bps=int(
            _get_number(source_spec, "source.", "start_bitrate_bps", default=1_000_000)
        ),
        ecn_mode=ecn,
    )

    scenario = Scenario(
        seed=seed,
        duration_s=duration_s,
        capacity=capacity,
        forward_delay_us=forward_delay_us,
        jitter=jitter,
        reverse_delay_us=reverse_delay_us,
        aqm=aqm_config,
        controller=kind,
        gcc_params=gcc_params,
        scalable_params=scalable_params,
        source=source,
        feedback_interval_us=us_from_ms_checked(
            _get_number(data, "", "feedback_interval_ms", default=100.0), "feedback_interval_ms"
        ),
        dejitter_us=us_from_ms_checked(
            _get_number(data, "", "dejitter_ms", default=15.0), "dejitter_ms"
        ),
    )
    try:
        scenario.validate()
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    return scenario


def emit_metrics_csv(report: MetricsReport, path: str) -> None:
    _write_lines(path, metrics_csv_lines(report))


def _write_lines(path: str, lines: Iterable[str]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line)
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write output file {path!r}: {exc}") from exc
