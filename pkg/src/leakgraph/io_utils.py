"""File formats: topology/fault/scenario JSON, sample CSV, reports.

All loaders raise ``InputError`` with the offending file, line, or field
named, so CLI diagnostics stay actionable.
"""

from __future__ import annotations

import csv
import io
import json
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import InputError
from .estimation import (
    EstimationReport,
    SensorSample,
    StructureSolution,
)
from .graph_model import (
    REFERENCE,
    FaultEdge,
    FaultKind,
    FaultStructure,
    Topology,
    candidate_fault_edges,
)
from .simulator import FaultInjection, Scenario

SAMPLE_HEADER = ["timestamp", "sensor_id", "measured", "predicted", "quality"]


def _require(doc: Mapping, key: str, context: str) -> Any:
    if key not in doc:
        raise InputError(f"{context}: missing field {key!r}")
    return doc[key]


def parse_topology(doc: Mapping) -> Topology:
    if not isinstance(doc, Mapping):
        raise InputError("topology document must be a JSON object")
    reference = _require(doc, "reference", "topology")
    nodes = _require(doc, "nodes", "topology")
    sensors_doc = _require(doc, "sensors", "topology")
    if not isinstance(nodes, list) or not all(isinstance(n, str) for n in nodes):
        raise InputError("topology: 'nodes' must be a list of labels")
    sensors = []
    for i, entry in enumerate(sensors_doc):
        if not isinstance(entry, Mapping):
            raise InputError(f"topology: sensors[{i}] must be an object")
        sensors.append(
            (
                str(_require(entry, "id", f"sensors[{i}]")),
                str(_require(entry, "from", f"sensors[{i}]")),
                str(_require(entry, "to", f"sensors[{i}]")),
            )
        )
    return Topology.from_labels(str(reference), [str(n) for n in nodes], sensors)


def load_topology(path: str | Path) -> Topology:
    doc = load_json(path)
    return parse_topology(doc)


def topology_to_doc(topology: Topology) -> dict:
    """Serialise a topology; merged nodes emit their joined label."""
    labels = ["+".join(m) for m in topology.members]
    return {
        "reference": labels[REFERENCE],
        "nodes": labels,
        "sensors": [
            {"id": s.id, "from": labels[s.tail], "to": labels[s.head]}
            for s in topology.sensors
        ],
    }


def parse_fault_specs(
    entries: Sequence[Mapping], topology: Topology
) -> FaultStructure:
    """Resolve ``{"kind", "node"}`` fault entries against the candidate set."""
    candidates = candidate_fault_edges(topology)
    by_kind_node: dict[tuple[FaultKind, int], FaultEdge] = {
        (e.kind, e.tail): e for e in candidates.edges
    }
    edges = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, Mapping):
            raise InputError(f"faults[{i}] must be an object")
        kind_raw = str(_require(entry, "kind", f"faults[{i}]"))
        try:
            kind = FaultKind(kind_raw)
        except ValueError:
            raise InputError(
                f"faults[{i}]: unknown kind {kind_raw!r}; expected one of "
                f"{sorted(k.value for k in FaultKind)}"
            ) from None
        node_label = str(_require(entry, "node", f"faults[{i}]"))
        try:
            node = topology.node_of(node_label)
        except KeyError:
            raise InputError(f"faults[{i}]: unknown node {node_label!r}") from None
        edge = by_kind_node.get((kind, node))
        if edge is None:
            hint = ""
            if (FaultKind.ANOMALY, node) in by_kind_node:
                hint = " (this zone is supplied by the reference node; use kind 'anomaly')"
            raise InputError(
                f"faults[{i}]: no {kind.value} candidate at node {node_label!r}{hint}"
            )
        edges.append(edge)
    return FaultStructure(tuple(edges))


def load_fault_structure(path: str | Path, topology: Topology) -> FaultStructure:
    doc = load_json(path)
    if isinstance(doc, Mapping) and "faults" in doc:
        doc = doc["faults"]
    if not isinstance(doc, list):
        raise InputError(f"{path}: faults file must be a list (or an object with 'faults')")
    return parse_fault_specs(doc, topology)


def parse_fault_token(token: str, topology: Topology) -> FaultEdge:
    """Resolve a ``kind:node`` CLI token, e.g. ``leak:3`` or ``anomaly:1``."""
    kind, sep, node = token.partition(":")
    if not sep:
        raise InputError(f"fault token {token!r} must look like 'kind:node'")
    structure = parse_fault_specs([{"kind": kind, "node": node}], topology)
    return structure.edges[0]


def parse_scenario(doc: Mapping, base_dir: Path | None = None) -> Scenario:
    if not isinstance(doc, Mapping):
        raise InputError("scenario document must be a JSON object")
    topo_ref = _require(doc, "topology", "scenario")
    if isinstance(topo_ref, str):
        path = Path(topo_ref)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        topology = load_topology(path)
    elif isinstance(topo_ref, Mapping):
        topology = parse_topology(topo_ref)
    else:
        raise InputError("scenario: 'topology' must be a path or an inline object")
    consumption = doc.get("consumption", {})
    if not isinstance(consumption, Mapping):
        raise InputError("scenario: 'consumption' must map zones to flows")
    injections = []
    for i, entry in enumerate(doc.get("faults", [])):
        if not isinstance(entry, Mapping):
            raise InputError(f"scenario: faults[{i}] must be an object")
        injections.append(
            FaultInjection(
                kind=str(_require(entry, "kind", f"faults[{i}]")),
                zone=str(_require(entry, "node", f"faults[{i}]")),
                value=float(entry.get("value", 0.0)),
                start=float(entry.get("start", 0.0)),
                end=None if entry.get("end") is None else float(entry["end"]),
            )
        )
    return Scenario(
        topology=topology,
        consumption={str(k): float(v) for k, v in consumption.items()},
        injections=tuple(injections),
        noise_std=float(doc.get("noise_std", 0.0)),
        cadence_minutes=int(doc.get("cadence_minutes", 15)),
        days=int(doc.get("days", 1)),
    )


def load_scenario(path: str | Path) -> Scenario:
    doc = load_json(path)
    return parse_scenario(doc, base_dir=Path(path).parent)


def samples_to_csv(samples: Sequence[SensorSample]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(SAMPLE_HEADER)
    for s in samples:
        writer.writerow(
            [
                s.timestamp.isoformat(),
                s.sensor_id,
                _format_float(s.measured),
                _format_float(s.predicted),
                s.quality,
            ]
        )
    return buffer.getvalue()


def _format_float(value: float) -> str:
    return "nan" if math.isnan(value) else repr(value)


def parse_samples_csv(text: str, source: str = "<data>") -> list[SensorSample]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InputError(f"{source}: empty data file") from None
    if [h.strip() for h in header] != SAMPLE_HEADER:
        raise InputError(
            f"{source}: header must be {','.join(SAMPLE_HEADER)!r}, got {','.join(header)!r}"
        )
    samples = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(SAMPLE_HEADER):
            raise InputError(f"{source}:{line_no}: expected {len(SAMPLE_HEADER)} fields")
        ts_raw, sensor_id, measured_raw, predicted_raw, quality = [c.strip() for c in row]
        try:
            timestamp = datetime.fromisoformat(ts_raw)
        except ValueError:
            raise InputError(f"{source}:{line_no}: bad timestamp {ts_raw!r}") from None
        try:
            measured = float(measured_raw) if measured_raw else float("nan")
            predicted = float(predicted_raw) if predicted_raw else float("nan")
        except ValueError:
            raise InputError(f"{source}:{line_no}: bad numeric field") from None
        try:
            samples.append(SensorSample(sensor_id, timestamp, measured, predicted, quality))
        except InputError as exc:
            raise InputError(f"{source}:{line_no}: {exc}") from None
    if not samples:
        raise InputError(f"{source}: no sample rows")
    return samples


def load_samples_csv(path: str | Path) -> list[SensorSample]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    return parse_samples_csv(text, source=str(path))


def solution_to_doc(solution: StructureSolution) -> dict:
    return {
        "structure": list(solution.structure.labels),
        "values": {k: solution.values[k] for k in sorted(solution.values)},
        "l1_norm": solution.l1_norm,
        "valid": solution.valid,
    }


def report_to_doc(report: EstimationReport) -> dict:
    return {
        "window": report.window,
        "minimal_solutions": [solution_to_doc(s) for s in report.minimal_solutions],
        "envelope": {
            label: {"min": lo, "max": hi}
            for label, (lo, hi) in sorted(report.envelope.items())
        },
        "flags": {
            "propagated": sorted(report.propagated),
            "forced_faults": sorted(report.forced_faults),
            "no_valid_solution": report.no_valid_solution,
        },
    }


def write_json(path: str | Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def load_json(path: str | Path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
