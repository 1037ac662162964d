"""Online fault-value estimation from residual data.

Residuals (measured minus model-predicted flow) are aggregated per
window, then every catalogued detectable structure is solved exactly
against the window's residual vector.  Solutions whose leak estimates
are negative are discarded; of the valid ones, everything tied with the
smallest l1 norm is reported, together with a per-unknown min/max
envelope in which the true fault values lie whenever the true structure
is detectable and l1-minimal.  A regularised quadratic-programming
baseline over the full candidate set is provided for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Collection, Iterable, Mapping, Sequence

import numpy as np

from .enumeration import DetectableCatalog
from .errors import (
    ContractViolation,
    EmptyWindowError,
    InputError,
    NoEstimationPossibleError,
    SolverError,
    StaleCacheError,
    StructuralError,
)
from .graph_model import (
    REFERENCE,
    ANOMALY_PREFIX,
    FAULT_PREFIX,
    FaultEdge,
    FaultKind,
    FaultStructure,
    Topology,
    candidate_fault_edges,
    merge_nodes,
    nodal_system,
    topology_fingerprint,
)

QUALITY_OK = "ok"
QUALITY_MISSING = "missing"
QUALITY_STUCK = "stuck"
QUALITIES = frozenset({QUALITY_OK, QUALITY_MISSING, QUALITY_STUCK})

WINDOW_SPECS = ("daily", "hourly", "all")

DEFAULT_EPS_TIE = 1e-6
_EPS_POS_FACTOR = 1e-9


@dataclass(frozen=True)
class SensorSample:
    """One reading: measured flow plus the model-predicted flow."""

    sensor_id: str
    timestamp: datetime
    measured: float
    predicted: float
    quality: str = QUALITY_OK

    def __post_init__(self) -> None:
        if self.quality not in QUALITIES:
            raise InputError(f"unknown quality flag {self.quality!r}")
        if self.quality == QUALITY_OK and not (
            math.isfinite(self.measured) and math.isfinite(self.predicted)
        ):
            raise InputError("measured and predicted must be finite when quality is 'ok'")


@dataclass(frozen=True)
class ResidualVector:
    """Aggregated residuals for one window, one entry per sensor.

    Sensors in ``uninformative`` carry NaN and must be merged out of the
    topology before estimation.
    """

    window: str
    values: Mapping[str, float]
    uninformative: frozenset[str] = frozenset()


@dataclass(frozen=True)
class StructureSolution:
    """Exact solve of one hypothesised structure against residuals."""

    structure: FaultStructure
    values: Mapping[str, float]
    l1_norm: float
    valid: bool


@dataclass(frozen=True)
class EstimationReport:
    """All l1-minimal valid solutions for one window.

    The envelope maps every candidate unknown to its min/max over the
    minimal solutions; unknowns absent from a minimal structure count
    as zero (omitting an edge asserts that fault is absent).
    """

    window: str
    minimal_solutions: tuple[StructureSolution, ...]
    envelope: Mapping[str, tuple[float, float]]
    propagated: tuple[str, ...] = ()
    forced_faults: tuple[str, ...] = ()
    no_valid_solution: bool = False


def window_label(timestamp: datetime, spec: str) -> str:
    if spec == "daily":
        return timestamp.date().isoformat()
    if spec == "hourly":
        return timestamp.strftime("%Y-%m-%dT%H")
    if spec == "all":
        return "all"
    raise InputError(f"unknown window spec {spec!r}; expected one of {WINDOW_SPECS}")


def iter_windows(
    samples: Sequence[SensorSample], spec: str = "daily"
) -> list[tuple[str, list[SensorSample]]]:
    """Group samples into aggregation windows, sorted by window label."""
    window_label(datetime(2000, 1, 1), spec)
    if not samples:
        raise EmptyWindowError("no samples to aggregate")
    groups: dict[str, list[SensorSample]] = {}
    for sample in samples:
        groups.setdefault(window_label(sample.timestamp, spec), []).append(sample)
    return sorted(groups.items())


def compute_residuals(
    samples: Sequence[SensorSample],
    sensor_ids: Sequence[str],
    window: str = "window",
) -> ResidualVector:
    """Average measured-minus-predicted per sensor over one window.

    A sensor is flagged uninformative when it has no usable samples in
    the window or when every usable reading is stuck at zero (a dead
    meter reports a constant zero flow regardless of the true flow).
    """
    if not samples:
        raise EmptyWindowError(f"window {window!r} contains no samples")
    by_sensor: dict[str, list[SensorSample]] = {sid: [] for sid in sensor_ids}
    for sample in samples:
        if sample.sensor_id not in by_sensor:
            raise InputError(f"sample references unknown sensor {sample.sensor_id!r}")
        by_sensor[sample.sensor_id].append(sample)
    values: dict[str, float] = {}
    uninformative: set[str] = set()
    for sid in sensor_ids:
        usable = [s for s in by_sensor[sid] if s.quality == QUALITY_OK]
        if not usable or all(s.measured == 0.0 for s in usable):
            values[sid] = float("nan")
            uninformative.add(sid)
            continue
        values[sid] = float(
            sum(s.measured - s.predicted for s in usable) / len(usable)
        )
    return ResidualVector(window, values, frozenset(uninformative))


def _residual_array(topology: Topology, residuals: ResidualVector) -> np.ndarray:
    out = np.empty(len(topology.sensors))
    for i, sensor in enumerate(topology.sensors):
        if sensor.id not in residuals.values:
            raise StructuralError(f"residual vector misses sensor {sensor.id!r}")
        out[i] = residuals.values[sensor.id]
    if not np.all(np.isfinite(out)):
        raise StructuralError(
            "residual vector has non-finite entries; merge uninformative "
            "sensors before estimating"
        )
    return out


def _eps_pos(x_r: np.ndarray, override: float | None) -> float:
    if override is not None:
        return override
    scale = float(np.abs(x_r).max()) if x_r.size else 0.0
    return _EPS_POS_FACTOR * max(1.0, scale)


def solve_structure(
    topology: Topology,
    structure: FaultStructure,
    residuals: ResidualVector | Sequence[ResidualVector],
    *,
    eps_pos: float | None = None,
) -> StructureSolution:
    """Solve one square detectable structure exactly.

    With a sequence of residual vectors the least-squares fit over the
    stack is returned, which for a square nonsingular system equals the
    exact solve against the averaged residuals.
    """
    if isinstance(residuals, ResidualVector):
        x_r = _residual_array(topology, residuals)
    else:
        stack = [_residual_array(topology, rv) for rv in residuals]
        if not stack:
            raise EmptyWindowError("no residual vectors supplied")
        x_r = np.mean(stack, axis=0)
    system = nodal_system(topology, structure)
    a_red, b_red = system.reduced()
    k = topology.n_nodes - 1
    if len(structure) != k:
        raise ContractViolation(
            f"structure has {len(structure)} edges; catalog hypotheses have {k}"
        )
    try:
        solution = np.linalg.solve(a_red, b_red @ x_r)
    except np.linalg.LinAlgError as exc:
        raise ContractViolation(
            "internal invariant broken: singular system for a catalog structure"
        ) from exc
    eps = _eps_pos(x_r, eps_pos)
    leak = np.array([e.kind is FaultKind.LEAK for e in structure.edges])
    valid = bool(np.all(solution[leak] >= -eps)) if leak.any() else True
    values = {e.label: float(v) for e, v in zip(structure.edges, solution)}
    return StructureSolution(structure, values, float(np.abs(solution).sum()), valid)


class CatalogSolver:
    """Reusable per-topology solver: the online half of the estimator.

    Construction does the one-off work (nodal matrices for the candidate
    set, one inverse per catalogued structure); ``estimate`` then costs
    a handful of small matrix products per window.
    """

    def __init__(
        self,
        topology: Topology,
        catalog: DetectableCatalog,
        *,
        eps_tie: float = DEFAULT_EPS_TIE,
        eps_pos: float | None = None,
    ):
        if catalog.fingerprint != topology_fingerprint(topology):
            raise StaleCacheError("catalog does not match the topology fingerprint")
        self.topology = topology
        self.catalog = catalog
        self.eps_tie = eps_tie
        self.eps_pos = eps_pos
        system = nodal_system(topology, catalog.candidates)
        a_red, b_red = system.reduced()
        self._b_red = b_red
        self._labels = catalog.candidates.labels
        k = catalog.structure_size
        n_structures = len(catalog.structures)
        self._cols = np.asarray(catalog.structures, dtype=int).reshape(n_structures, k)
        stacked = np.empty((n_structures, k, k))
        for i, cols in enumerate(catalog.structures):
            stacked[i] = a_red[:, cols]
        self._inverses = np.linalg.inv(stacked) if n_structures else stacked
        is_leak = np.array(
            [e.kind is FaultKind.LEAK for e in catalog.candidates.edges], dtype=bool
        )
        self._leak_mask = (
            is_leak[self._cols] if n_structures else np.zeros((0, k), dtype=bool)
        )

    def estimate(
        self,
        residuals: ResidualVector,
        *,
        propagated: Iterable[str] = (),
        forced_faults: Iterable[str] = (),
    ) -> EstimationReport:
        """Solve every catalogued structure and keep the l1-minimal valid set."""
        x_r = _residual_array(self.topology, residuals)
        rhs = self._b_red @ x_r
        solutions = self._inverses @ rhs
        eps = _eps_pos(x_r, self.eps_pos)
        valid = np.all((solutions >= -eps) | ~self._leak_mask, axis=1)
        l1 = np.abs(solutions).sum(axis=1)
        flags = dict(
            propagated=tuple(propagated),
            forced_faults=tuple(forced_faults),
        )
        if not bool(valid.any()):
            return EstimationReport(
                residuals.window, (), {}, no_valid_solution=True, **flags
            )
        best = float(l1[valid].min())
        minimal_idx = np.flatnonzero(valid & (l1 <= best * (1.0 + self.eps_tie)))
        minimal = tuple(self._solution(i, solutions[i], l1[i]) for i in minimal_idx)
        envelope = self._envelope(minimal_idx, solutions)
        return EstimationReport(residuals.window, minimal, envelope, **flags)

    def _solution(self, index: int, values: np.ndarray, l1: float) -> StructureSolution:
        structure = self.catalog.structure(index)
        mapped = {e.label: float(v) for e, v in zip(structure.edges, values)}
        return StructureSolution(structure, mapped, float(l1), True)

    def _envelope(
        self, minimal_idx: np.ndarray, solutions: np.ndarray
    ) -> dict[str, tuple[float, float]]:
        full = np.zeros((len(minimal_idx), len(self._labels)))
        for row, i in enumerate(minimal_idx):
            full[row, self._cols[i]] = solutions[i]
        lows = full.min(axis=0)
        highs = full.max(axis=0)
        return {
            label: (float(lo), float(hi))
            for label, lo, hi in zip(self._labels, lows, highs)
        }


def estimate_faults(
    topology: Topology,
    catalog: DetectableCatalog,
    residuals: ResidualVector,
    *,
    eps_pos: float | None = None,
    eps_tie: float = DEFAULT_EPS_TIE,
) -> EstimationReport:
    """One-shot estimation; build a CatalogSolver directly to amortise setup."""
    solver = CatalogSolver(topology, catalog, eps_tie=eps_tie, eps_pos=eps_pos)
    return solver.estimate(residuals)


@dataclass(frozen=True)
class PropagationPlan:
    """Topology rewrite for a window with uninformative sensors.

    Leaks estimated at a merged node are upper bounds for each of its
    constituent zones; the merged-away sensors' own faults are recorded
    as a-priori detected.
    """

    topology: Topology
    forced: tuple[FaultEdge, ...]
    provenance: Mapping[str, str]

    @property
    def forced_labels(self) -> tuple[str, ...]:
        return tuple(e.label for e in self.forced)


def propagate_uninformative(
    topology: Topology, uninformative: Collection[str]
) -> PropagationPlan:
    """Merge every uninformative sensor's edge and record the fallout."""
    if not uninformative:
        return PropagationPlan(
            topology, (), {z: z for z in topology.zone_labels()}
        )
    ids = {s.id for s in topology.sensors}
    unknown = set(uninformative) - ids
    if unknown:
        raise StructuralError(f"unknown sensor ids: {sorted(unknown)}")
    if set(uninformative) >= ids:
        raise NoEstimationPossibleError(
            "every sensor is uninformative; no estimation possible"
        )
    candidates = candidate_fault_edges(topology)
    forced: list[FaultEdge] = []
    for sensor in topology.sensors:
        if sensor.id not in uninformative:
            continue
        incoming_tail = sensor.tail
        zone = topology.label(sensor.head)
        if incoming_tail == REFERENCE:
            forced.append(candidates.by_label(f"{ANOMALY_PREFIX}{zone}"))
        else:
            forced.append(candidates.by_label(f"{FAULT_PREFIX}{sensor.id}"))
    merged = topology
    for sensor in topology.sensors:
        if sensor.id in uninformative:
            merged = merge_nodes(merged, sensor.id)
    provenance = {}
    for node in range(merged.n_nodes):
        primary = merged.label(node)
        for zone in merged.members[node]:
            provenance[zone] = primary
    for zone in topology.members[REFERENCE][1:]:
        provenance.setdefault(zone, merged.label(REFERENCE))
    return PropagationPlan(merged, tuple(forced), provenance)


def qp_lasso(
    topology: Topology,
    residuals: ResidualVector,
    lam: float,
    *,
    tol: float = 1e-6,
    max_iter: int = 200_000,
) -> StructureSolution:
    """Baseline estimator: l1-regularised least squares over all candidates.

    Minimises ``||A x - B x_r||^2 + lam * ||x||_1`` subject to leak
    components being nonnegative (merged anomalies and sensor faults are
    sign-free).  Solved as a proximal-gradient iteration with momentum
    and adaptive restart, run until the KKT residual drops below
    ``tol`` (relative to the data scale); failing that, raises with
    iterate diagnostics.  Deterministic for fixed inputs.
    """
    if lam < 0:
        raise InputError("the regularisation weight must be nonnegative")
    candidates = candidate_fault_edges(topology)
    system = nodal_system(topology, candidates)
    x_r = _residual_array(topology, residuals)
    a = system.a
    b_vec = system.b @ x_r
    leak = np.array([e.kind is FaultKind.LEAK for e in candidates.edges], dtype=bool)
    lipschitz = 2.0 * np.linalg.norm(a, 2) ** 2
    step = 1.0 / lipschitz if lipschitz > 0 else 1.0
    scale = max(1.0, float(np.abs(2.0 * a.T @ b_vec).max()) if b_vec.size else 1.0)

    def prox(v: np.ndarray) -> np.ndarray:
        shrunk = np.sign(v) * np.maximum(np.abs(v) - step * lam, 0.0)
        shrunk[leak] = np.maximum(v[leak] - step * lam, 0.0)
        return shrunk

    def objective(v: np.ndarray) -> float:
        fit = a @ v - b_vec
        return float(fit @ fit + lam * np.abs(v).sum())

    x = np.zeros(len(candidates))
    y = x.copy()
    momentum = 1.0
    last_objective = objective(x)
    kkt = _kkt_residual(a, b_vec, x, lam, leak)
    iteration = 0
    while kkt > tol * scale and iteration < max_iter:
        gradient = 2.0 * (a.T @ (a @ y - b_vec))
        x_next = prox(y - step * gradient)
        momentum_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum**2))
        y = x_next + ((momentum - 1.0) / momentum_next) * (x_next - x)
        x, momentum = x_next, momentum_next
        iteration += 1
        if iteration % 20 == 0 or iteration == max_iter:
            current = objective(x)
            if current > last_objective:
                y = x.copy()
                momentum = 1.0
            last_objective = current
            kkt = _kkt_residual(a, b_vec, x, lam, leak)
    if kkt > tol * scale:
        raise SolverError(
            "baseline estimator did not converge",
            diagnostics={
                "iterations": iteration,
                "kkt_residual": float(kkt),
                "tolerance": tol * scale,
                "objective": objective(x),
            },
        )
    eps = _eps_pos(x_r, None)
    values = {e.label: float(v) for e, v in zip(candidates.edges, x)}
    valid = bool(np.all(x[leak] >= -eps)) if leak.any() else True
    return StructureSolution(candidates, values, float(np.abs(x).sum()), valid)


def _kkt_residual(
    a: np.ndarray, b_vec: np.ndarray, x: np.ndarray, lam: float, leak: np.ndarray
) -> float:
    """Max violation of the first-order optimality conditions."""
    if x.size == 0:
        return 0.0
    g = 2.0 * (a.T @ (a @ x - b_vec))
    residual = np.zeros_like(x)
    free = ~leak
    gf, xf = g[free], x[free]
    residual[free] = np.where(
        xf != 0.0,
        np.abs(gf + lam * np.sign(xf)),
        np.maximum(0.0, np.abs(gf) - lam),
    )
    gl, xl = g[leak], x[leak]
    stationarity = np.where(
        xl > 0.0,
        np.abs(gl + lam),
        np.maximum(0.0, -(gl + lam)),
    )
    feasibility = np.maximum(0.0, -xl)
    residual[leak] = np.maximum(stationarity, feasibility)
    return float(residual.max())
