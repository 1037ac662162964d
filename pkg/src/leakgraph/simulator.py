"""Synthetic sensor data with injected leaks, faults, and outages.

True flows are computed bottom-up on the sensor tree (a sensor carries
everything consumed or leaked in the subtree it supplies), predictions
are the consumption-only flows (a perfect model, so residuals isolate
the injected faults), and measurement errors are added on top of the
readings only.  Everything is deterministic given the scenario and a
seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError
from .estimation import QUALITY_MISSING, QUALITY_OK, SensorSample
from .graph_model import (
    REFERENCE,
    FaultKind,
    Topology,
    candidate_fault_edges,
)

INJECT_LEAK = "leak"
INJECT_SENSOR_FAULT = "sensor_fault"
INJECT_ANOMALY = "anomaly"
INJECT_STUCK = "stuck"
INJECT_MISSING = "missing"
INJECTION_KINDS = frozenset(
    {INJECT_LEAK, INJECT_SENSOR_FAULT, INJECT_ANOMALY, INJECT_STUCK, INJECT_MISSING}
)

_CONSUMPTION_SIDE = {INJECT_LEAK, INJECT_ANOMALY}

DEFAULT_START = datetime(2024, 1, 1)


@dataclass(frozen=True)
class FaultInjection:
    """One injected anomaly: a value active on ``[start, end)`` in days."""

    kind: str
    zone: str
    value: float = 0.0
    start: float = 0.0
    end: float | None = None


@dataclass(frozen=True)
class Scenario:
    topology: Topology
    consumption: Mapping[str, float]
    injections: tuple[FaultInjection, ...] = ()
    noise_std: float = 0.0
    cadence_minutes: int = 15
    days: int = 1
    start: datetime = DEFAULT_START

    def __post_init__(self) -> None:
        zones = set(self.topology.zone_labels())
        for zone, value in self.consumption.items():
            if zone not in zones:
                raise InputError(f"consumption references unknown zone {zone!r}")
            if value < 0:
                raise InputError(f"zone {zone!r} has negative consumption")
        for inj in self.injections:
            if inj.kind not in INJECTION_KINDS:
                raise InputError(f"unknown injection kind {inj.kind!r}")
            if inj.zone not in zones:
                raise InputError(f"injection references unknown zone {inj.zone!r}")
            if inj.kind == INJECT_LEAK and inj.value < 0:
                raise InputError(f"leak at zone {inj.zone!r} has a negative value")
            if inj.kind == INJECT_ANOMALY:
                node = self.topology.node_of(inj.zone)
                if self.topology.incoming_sensor(node).tail != REFERENCE:
                    raise InputError(
                        f"anomaly injections only apply to zones supplied directly "
                        f"by the reference node, not {inj.zone!r}"
                    )
            end = self.days if inj.end is None else inj.end
            if not (0 <= inj.start < end):
                raise InputError(f"injection at zone {inj.zone!r} has an empty interval")
        if self.noise_std < 0:
            raise InputError("noise standard deviation must be nonnegative")
        if self.cadence_minutes <= 0 or 1440 % self.cadence_minutes != 0:
            raise InputError("cadence must be a positive divisor of a day (1440 minutes)")
        if self.days < 1:
            raise InputError("scenarios must cover at least one day")


@dataclass(frozen=True)
class SimulationResult:
    samples: tuple[SensorSample, ...]
    truth: dict = field(compare=False)


def simulate_scenario(scenario: Scenario, seed: int = 0) -> SimulationResult:
    """Generate samples and a ground-truth log for a scenario."""
    topology = scenario.topology
    n = topology.n_nodes
    node_consumption = np.zeros(n)
    for node in range(n):
        for zone in topology.members[node]:
            node_consumption[node] += scenario.consumption.get(zone, 0.0)

    subtree = _subtree_masks(topology)
    predicted = {
        s.id: float(node_consumption[subtree[s.id]].sum()) for s in topology.sensors
    }
    sensor_of_zone = {
        topology.label(node): topology.incoming_sensor(node).id
        for node in range(1, n)
    }

    steps_per_day = 1440 // scenario.cadence_minutes
    total_steps = steps_per_day * scenario.days
    cadence = timedelta(minutes=scenario.cadence_minutes)
    rng = np.random.default_rng(seed)
    noise = (
        rng.normal(0.0, scenario.noise_std, size=(total_steps, len(topology.sensors)))
        if scenario.noise_std > 0
        else np.zeros((total_steps, len(topology.sensors)))
    )

    consumption_injections = [
        inj for inj in scenario.injections if inj.kind in _CONSUMPTION_SIDE
    ]
    reading_offsets = [
        inj for inj in scenario.injections if inj.kind == INJECT_SENSOR_FAULT
    ]
    stuck = [inj for inj in scenario.injections if inj.kind == INJECT_STUCK]
    missing = [inj for inj in scenario.injections if inj.kind == INJECT_MISSING]

    samples: list[SensorSample] = []
    for step in range(total_steps):
        day_time = step / steps_per_day
        timestamp = scenario.start + step * cadence
        leak_rate = np.zeros(n)
        for inj in consumption_injections:
            if _active(inj, day_time, scenario.days):
                leak_rate[topology.node_of(inj.zone)] += inj.value
        for j, sensor in enumerate(topology.sensors):
            mask = subtree[sensor.id]
            flow = float((node_consumption + leak_rate)[mask].sum())
            reading = flow
            for inj in reading_offsets:
                if sensor_of_zone[inj.zone] == sensor.id and _active(
                    inj, day_time, scenario.days
                ):
                    reading += inj.value
            reading += float(noise[step, j])
            quality = QUALITY_OK
            measured = reading
            for inj in stuck:
                if sensor_of_zone[inj.zone] == sensor.id and _active(
                    inj, day_time, scenario.days
                ):
                    measured = inj.value
            for inj in missing:
                if sensor_of_zone[inj.zone] == sensor.id and _active(
                    inj, day_time, scenario.days
                ):
                    quality = QUALITY_MISSING
                    measured = float("nan")
            samples.append(
                SensorSample(sensor.id, timestamp, measured, predicted[sensor.id], quality)
            )
    truth = _ground_truth(scenario, sensor_of_zone, steps_per_day)
    return SimulationResult(tuple(samples), truth)


def _active(inj: FaultInjection, day_time: float, days: int) -> bool:
    end = days if inj.end is None else inj.end
    return inj.start <= day_time < end


def _subtree_masks(topology: Topology) -> dict[str, np.ndarray]:
    """Per sensor, the boolean mask of nodes in the subtree it supplies."""
    children: dict[int, list[int]] = {node: [] for node in range(topology.n_nodes)}
    for s in topology.sensors:
        children[s.tail].append(s.head)
    masks: dict[str, np.ndarray] = {}
    for s in topology.sensors:
        mask = np.zeros(topology.n_nodes, dtype=bool)
        stack = [s.head]
        while stack:
            node = stack.pop()
            mask[node] = True
            stack.extend(children[node])
        masks[s.id] = mask
    return masks


def injection_label(scenario: Scenario, inj: FaultInjection) -> str | None:
    """Candidate-unknown label an injection shows up under, if any."""
    topology = scenario.topology
    candidates = candidate_fault_edges(topology)
    node = topology.node_of(inj.zone)
    if inj.kind in _CONSUMPTION_SIDE:
        for edge in candidates.edges:
            if edge.tail == node and edge.kind in (FaultKind.LEAK, FaultKind.ANOMALY):
                return edge.label
        return None
    if inj.kind == INJECT_SENSOR_FAULT:
        # At reference-fed zones the sensor fault folds into the anomaly unknown.
        for edge in candidates.edges:
            if edge.kind is FaultKind.SENSOR_FAULT and edge.tail == node:
                return edge.label
        for edge in candidates.edges:
            if edge.kind is FaultKind.ANOMALY and edge.tail == node:
                return edge.label
        return None
    return None


def _ground_truth(
    scenario: Scenario, sensor_of_zone: Mapping[str, str], steps_per_day: int
) -> dict:
    windows = [
        (scenario.start + timedelta(days=d)).date().isoformat()
        for d in range(scenario.days)
    ]
    faults = []
    daily: dict[str, list[float]] = {}
    for inj in scenario.injections:
        if inj.kind in (INJECT_STUCK, INJECT_MISSING):
            continue
        label = injection_label(scenario, inj)
        end = scenario.days if inj.end is None else inj.end
        faults.append(
            {
                "label": label,
                "kind": inj.kind,
                "zone": inj.zone,
                "value": inj.value,
                "start_day": inj.start,
                "end_day": end,
            }
        )
        means = daily.setdefault(label, [0.0] * scenario.days)
        for day in range(scenario.days):
            active = sum(
                1
                for step in range(steps_per_day)
                if _active(inj, day + step / steps_per_day, scenario.days)
            )
            means[day] += inj.value * active / steps_per_day
    outages = {
        "stuck": [
            {
                "sensor": sensor_of_zone[i.zone],
                "value": i.value,
                "start_day": i.start,
                "end_day": scenario.days if i.end is None else i.end,
            }
            for i in scenario.injections
            if i.kind == INJECT_STUCK
        ],
        "missing": [
            {
                "sensor": sensor_of_zone[i.zone],
                "start_day": i.start,
                "end_day": scenario.days if i.end is None else i.end,
            }
            for i in scenario.injections
            if i.kind == INJECT_MISSING
        ],
    }
    return {
        "cadence_minutes": scenario.cadence_minutes,
        "days": scenario.days,
        "windows": windows,
        "faults": faults,
        "daily_means": daily,
        "outages": outages,
    }


def demo_network() -> Topology:
    """The bundled four-sensor network: a supply line feeding a chain of
    three zones with one branch, the smallest network on which leaks and
    sensor faults genuinely compete."""
    return Topology.from_labels(
        reference="0",
        nodes=["0", "1", "2", "3", "4"],
        sensors=[("1", "0", "1"), ("2", "1", "2"), ("3", "2", "3"), ("4", "1", "4")],
    )


RECOVERABLE = "recoverable"
MASKED = "masked"
UNDETECTABLE = "undetectable"


@dataclass(frozen=True)
class ReferenceCase:
    """A canned scenario with its expected estimation behaviour.

    ``expected`` classifies what the estimator can do with the case:
    ``recoverable`` cases have a detectable, l1-minimal true structure
    that the minimal solution set must contain; ``masked`` cases are
    detectable but a sparser explanation fits the data with a strictly
    smaller l1 norm; ``undetectable`` cases have a true structure whose
    fault graph is not a forest of directed trees.
    """

    name: str
    scenario: Scenario
    expected: str
    truth: Mapping[str, float]


def reference_suite(noise_std: float = 0.0) -> tuple[ReferenceCase, ...]:
    """Canned scenarios covering the three estimation regimes."""
    topology = demo_network()
    consumption = {"1": 1.0, "2": 1.5, "3": 1.2, "4": 0.8}

    def case(name: str, expected: str, injections: list[FaultInjection]) -> ReferenceCase:
        scenario = Scenario(
            topology=topology,
            consumption=consumption,
            injections=tuple(injections),
            noise_std=noise_std,
            days=2,
        )
        truth = {}
        for inj in injections:
            label = injection_label(scenario, inj)
            if label is not None:
                truth[label] = truth.get(label, 0.0) + inj.value
        return ReferenceCase(name, scenario, expected, truth)

    leak = lambda zone, value, **kw: FaultInjection(INJECT_LEAK, zone, value, **kw)
    fault = lambda zone, value, **kw: FaultInjection(INJECT_SENSOR_FAULT, zone, value, **kw)
    anomaly = lambda zone, value, **kw: FaultInjection(INJECT_ANOMALY, zone, value, **kw)

    return (
        case("case-01-leak-mid-chain", RECOVERABLE, [leak("3", 2.0, start=1.0)]),
        case("case-02-leak-upper-chain", RECOVERABLE, [leak("2", 1.5)]),
        case("case-03-anomaly-head-zone", RECOVERABLE, [anomaly("1", 1.0)]),
        case("case-04-sensor-over-report", RECOVERABLE, [fault("3", 1.0)]),
        case("case-05-leak-plus-far-fault", RECOVERABLE, [leak("4", 1.2), fault("3", 0.8)]),
        case("case-06-two-leaks", RECOVERABLE, [leak("2", 1.0), leak("4", 2.0)]),
        case(
            "case-07-all-zones-leaking",
            RECOVERABLE,
            [anomaly("1", 2.0), leak("2", 3.0), leak("3", 2.0), leak("4", 3.0)],
        ),
        case(
            "case-08-under-report-masks-leak",
            MASKED,
            [leak("2", 1.0), fault("2", -1.0)],
        ),
        case(
            "case-09-leak-with-own-sensor-fault",
            RECOVERABLE,
            [leak("3", 1.0), fault("3", 1.0)],
        ),
        case(
            "case-10-dead-band-sensor-shifts-leak",
            MASKED,
            [leak("3", 2.0), fault("3", -2.0)],
        ),
        case(
            "case-11-branch-leak-cancelled",
            MASKED,
            [leak("4", 1.0), fault("4", -1.0)],
        ),
        case(
            "case-12-entangled-pair",
            UNDETECTABLE,
            [leak("2", 1.0), fault("2", 0.5), leak("3", 1.0), fault("3", 0.5)],
        ),
        case(
            "case-13-five-simultaneous",
            UNDETECTABLE,
            [
                leak("2", 1.0),
                fault("2", 1.0),
                leak("3", 1.0),
                fault("3", 1.0),
                leak("4", 1.0),
            ],
        ),
    )
