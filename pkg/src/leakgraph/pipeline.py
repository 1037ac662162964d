"""End-to-end runs: windowing, propagation, caching, and plot export.

The offline phase (enumerating detectable structures, inverting their
systems) happens once per distinct topology seen in a run; the online
phase is a cheap solve per window.  Both are timed separately for the
run manifest.
"""

from __future__ import annotations

import csv
import io
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .enumeration import (
    DetectableCatalog,
    enumerate_detectable,
    load_catalog,
    save_catalog,
)
from .errors import NoEstimationPossibleError
from .estimation import (
    CatalogSolver,
    EstimationReport,
    ResidualVector,
    SensorSample,
    StructureSolution,
    compute_residuals,
    iter_windows,
    propagate_uninformative,
    qp_lasso,
)
from .graph_model import (
    REFERENCE,
    ANOMALY_PREFIX,
    FAULT_PREFIX,
    LEAK_PREFIX,
    Topology,
    topology_fingerprint,
)

PLOT_HEADER = ["window", "leak_min", "leak_max", "fault_min", "fault_max", "propagated"]


class CatalogStore:
    """Fingerprint-keyed catalog cache: in-memory, optionally disk-backed."""

    def __init__(self, cache_dir: str | Path | None = None, *, cap: int | None = None):
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.cap = cap
        self._memory: dict[str, DetectableCatalog] = {}
        self._lock = threading.Lock()

    def get(self, topology: Topology) -> tuple[DetectableCatalog, float]:
        """Catalog for a topology plus the offline seconds spent building it."""
        fingerprint = topology_fingerprint(topology)
        with self._lock:
            cached = self._memory.get(fingerprint)
            if cached is not None:
                return cached, 0.0
            started = time.perf_counter()
            catalog = None
            if self.cache_dir is not None:
                catalog = load_catalog(self.cache_dir, topology)
            if catalog is None:
                kwargs = {"cap": self.cap} if self.cap is not None else {}
                catalog = enumerate_detectable(topology, **kwargs)
                if self.cache_dir is not None:
                    save_catalog(catalog, self.cache_dir)
            elapsed = time.perf_counter() - started
            self._memory[fingerprint] = catalog
            return catalog, elapsed


@dataclass(frozen=True)
class ZoneReadout:
    """Per-zone view of one window's envelope, ready for plotting."""

    leak: tuple[float, float] | None
    fault: tuple[float, float] | None
    propagated: bool


@dataclass(frozen=True)
class WindowReport:
    report: EstimationReport
    zones: Mapping[str, ZoneReadout]


@dataclass(frozen=True)
class RunResult:
    windows: tuple[WindowReport, ...]
    fingerprint: str
    offline_seconds: float
    online_seconds: float


def run_estimation(
    topology: Topology,
    samples: Sequence[SensorSample],
    window_spec: str = "daily",
    *,
    store: CatalogStore | None = None,
    eps_pos: float | None = None,
    eps_tie: float | None = None,
) -> RunResult:
    """Estimate fault values for every window of a sample series.

    Windows with uninformative sensors are re-run on the merged topology
    with the dead sensors' own faults recorded as a-priori detected and
    their zones marked as propagated.
    """
    store = store or CatalogStore()
    solver_kwargs = {}
    if eps_tie is not None:
        solver_kwargs["eps_tie"] = eps_tie
    offline = 0.0
    online = 0.0
    solvers: dict[str, CatalogSolver] = {}
    sensor_ids = [s.id for s in topology.sensors]
    reports: list[WindowReport] = []
    for label, group in iter_windows(samples, window_spec):
        residuals = compute_residuals(group, sensor_ids, label)
        try:
            plan = propagate_uninformative(topology, residuals.uninformative)
        except NoEstimationPossibleError:
            report = EstimationReport(
                label,
                (),
                {},
                propagated=tuple(sorted(topology.zone_labels())),
                no_valid_solution=True,
            )
            reports.append(WindowReport(report, _zones_unavailable(topology)))
            continue
        merged = plan.topology
        fingerprint = topology_fingerprint(merged)
        solver = solvers.get(fingerprint)
        if solver is None:
            started = time.perf_counter()
            catalog, _ = store.get(merged)
            solver = CatalogSolver(merged, catalog, eps_pos=eps_pos, **solver_kwargs)
            offline += time.perf_counter() - started
            solvers[fingerprint] = solver
        usable = ResidualVector(
            label,
            {s.id: residuals.values[s.id] for s in merged.sensors},
        )
        propagated = _propagated_zones(topology, merged)
        started = time.perf_counter()
        report = solver.estimate(
            usable, propagated=propagated, forced_faults=plan.forced_labels
        )
        online += time.perf_counter() - started
        reports.append(WindowReport(report, _zone_readouts(topology, merged, report)))
    return RunResult(
        tuple(reports), topology_fingerprint(topology), offline, online
    )


def _propagated_zones(original: Topology, merged: Topology) -> tuple[str, ...]:
    """Zones whose own sensor was merged away this window."""
    zones = []
    zones.extend(merged.members[REFERENCE][len(original.members[REFERENCE]) :])
    for node in range(1, merged.n_nodes):
        zones.extend(merged.members[node][1:])
    return tuple(sorted(zones))


def _zones_unavailable(topology: Topology) -> dict[str, ZoneReadout]:
    return {z: ZoneReadout(None, None, True) for z in topology.zone_labels()}


def _zone_readouts(
    original: Topology, merged: Topology, report: EstimationReport
) -> dict[str, ZoneReadout]:
    envelope = report.envelope
    readouts: dict[str, ZoneReadout] = {}
    for zone in merged.members[REFERENCE][len(original.members[REFERENCE]) :]:
        readouts[zone] = ZoneReadout(None, None, True)
    for node in range(1, merged.n_nodes):
        primary = merged.label(node)
        supplied_by_reference = merged.incoming_sensor(node).tail == REFERENCE
        leak_label = (
            f"{ANOMALY_PREFIX}{primary}" if supplied_by_reference else f"{LEAK_PREFIX}{primary}"
        )
        fault_label = (
            None
            if supplied_by_reference
            else f"{FAULT_PREFIX}{merged.incoming_sensor(node).id}"
        )
        leak = envelope.get(leak_label)
        fault = envelope.get(fault_label) if fault_label else None
        for position, zone in enumerate(merged.members[node]):
            readouts[zone] = ZoneReadout(
                leak=leak,
                fault=fault if position == 0 else None,
                propagated=position > 0,
            )
    return readouts


def plot_rows(zone: str, windows: Sequence[WindowReport]) -> list[list[str]]:
    rows = [PLOT_HEADER]
    for wr in windows:
        readout = wr.zones.get(zone)
        if readout is None:
            continue
        leak = readout.leak or (None, None)
        fault = readout.fault or (None, None)
        rows.append(
            [
                wr.report.window,
                _cell(leak[0]),
                _cell(leak[1]),
                _cell(fault[0]),
                _cell(fault[1]),
                "true" if readout.propagated else "false",
            ]
        )
    return rows


def _cell(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_plot_csvs(out_dir: str | Path, topology: Topology, windows: Sequence[WindowReport]) -> list[Path]:
    """One CSV per zone with the leak/fault envelope series."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for zone in topology.zone_labels():
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerows(plot_rows(zone, windows))
        path = out_dir / f"zone_{zone}.csv"
        path.write_text(buffer.getvalue())
        paths.append(path)
    return paths


@dataclass(frozen=True)
class BaselineWindow:
    window: str
    solution: StructureSolution
    propagated: tuple[str, ...] = ()
    forced_faults: tuple[str, ...] = ()


@dataclass(frozen=True)
class BaselineResult:
    windows: tuple[BaselineWindow, ...]
    fingerprint: str
    seconds: float


def run_baseline(
    topology: Topology,
    samples: Sequence[SensorSample],
    window_spec: str = "daily",
    *,
    lam: float = 0.05,
) -> BaselineResult:
    """Run the regularised quadratic baseline on every window."""
    sensor_ids = [s.id for s in topology.sensors]
    out: list[BaselineWindow] = []
    total = 0.0
    for label, group in iter_windows(samples, window_spec):
        residuals = compute_residuals(group, sensor_ids, label)
        plan = propagate_uninformative(topology, residuals.uninformative)
        merged = plan.topology
        usable = ResidualVector(
            label, {s.id: residuals.values[s.id] for s in merged.sensors}
        )
        started = time.perf_counter()
        solution = qp_lasso(merged, usable, lam)
        total += time.perf_counter() - started
        out.append(
            BaselineWindow(
                label,
                solution,
                propagated=_propagated_zones(topology, merged),
                forced_faults=plan.forced_labels,
            )
        )
    return BaselineResult(tuple(out), topology_fingerprint(topology), total)


def build_manifest(
    command: str,
    *,
    inputs: Mapping[str, str],
    fingerprint: str,
    offline_seconds: float | None = None,
    online_seconds: float | None = None,
    extra: Mapping | None = None,
) -> dict:
    manifest: dict = {
        "tool": {"name": "leakgraph", "version": __version__},
        "command": command,
        "inputs": dict(inputs),
        "topology_fingerprint": fingerprint,
        "timings": {},
    }
    if offline_seconds is not None:
        manifest["timings"]["offline_seconds"] = offline_seconds
    if online_seconds is not None:
        manifest["timings"]["online_seconds"] = online_seconds
    if extra:
        manifest.update(extra)
    return manifest
