"""Structural detectability of fault hypotheses.

A fault structure is detectable when every unknown in it can be solved
from the nodal balance equations.  Structurally this holds exactly when
every weakly connected component of the fault graph is a directed tree;
components made of sensor-fault edges alone are directed trees by
construction, so only the component containing the reference node needs
checking.  That check is linear in the size of the graph, against a
cubic rank computation on the nodal system.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .errors import ContractViolation
from .graph_model import (
    REFERENCE,
    Component,
    FaultKind,
    FaultStructure,
    Topology,
    is_directed_tree,
    validate_fault_structure,
    weakly_connected_components,
)


@dataclass(frozen=True)
class ComponentPartition:
    """Fault-graph components split by what they contain.

    ``isolated`` holds single nodes touched by no fault edge,
    ``sensor_only`` the components made purely of sensor-fault edges,
    and ``reference_component`` the one containing the reference node
    (and with it every leak and anomaly edge), possibly a singleton.
    """

    isolated: tuple[Component, ...]
    sensor_only: tuple[Component, ...]
    reference_component: Component

    def all_components(self) -> tuple[Component, ...]:
        return self.isolated + self.sensor_only + (self.reference_component,)


@dataclass(frozen=True)
class DetectabilityVerdict:
    detectable: bool
    failing_component: Component | None = None
    culprit_nodes: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.detectable and self.failing_component is not None:
            raise ContractViolation("a detectable verdict cannot carry a failing component")
        if not self.detectable and self.failing_component is None:
            raise ContractViolation("an undetectable verdict must name the failing component")


@dataclass(frozen=True)
class UndetectabilityDiagnosis:
    """Salvageable parts of an undetectable structure.

    ``sensor_only`` components stay solvable as-is; removing the fault
    edges of ``culprit_nodes`` turns the reference component into a
    directed tree.
    """

    sensor_only: tuple[Component, ...]
    culprit_nodes: tuple[int, ...]


def classify_components(topology: Topology, faults: FaultStructure) -> ComponentPartition:
    """Partition the fault graph's components per their edge content."""
    validate_fault_structure(topology, faults)
    components = weakly_connected_components(range(topology.n_nodes), faults.edges)
    isolated: list[Component] = []
    sensor_only: list[Component] = []
    reference_component: Component | None = None
    for component in components:
        if REFERENCE in component.nodes:
            reference_component = component
        elif not component.edges:
            isolated.append(component)
        else:
            assert all(e.kind is FaultKind.SENSOR_FAULT for e in component.edges)
            sensor_only.append(component)
    assert reference_component is not None
    return ComponentPartition(tuple(isolated), tuple(sensor_only), reference_component)


def is_detectable(topology: Topology, faults: FaultStructure) -> DetectabilityVerdict:
    """Decide detectability by checking the reference component alone.

    Sensor-only components are directed trees by construction (their
    edges are reversed tree edges), which is asserted rather than
    re-derived.
    """
    partition = classify_components(topology, faults)
    for component in partition.sensor_only:
        assert is_directed_tree(component)
    if is_directed_tree(partition.reference_component):
        return DetectabilityVerdict(True)
    return DetectabilityVerdict(False, failing_component=partition.reference_component)


def diagnose_undetectability(
    topology: Topology, faults: FaultStructure
) -> UndetectabilityDiagnosis:
    """Find a smallest set of nodes whose fault edges cause undetectability.

    Searches subsets of the reference component's zones in increasing
    size (ties broken towards smaller node indices); removing all fault
    edges incident to the returned nodes makes the structure detectable.
    Only meaningful for structures already found undetectable.
    """
    partition = classify_components(topology, faults)
    if is_directed_tree(partition.reference_component):
        raise ContractViolation("diagnose_undetectability requires an undetectable structure")
    zone_pool = sorted(partition.reference_component.nodes - {REFERENCE})
    for size in range(1, len(zone_pool) + 1):
        for removed in combinations(zone_pool, size):
            removed_set = set(removed)
            kept = tuple(
                e
                for e in faults.edges
                if e.tail not in removed_set and e.head not in removed_set
            )
            if is_detectable(topology, FaultStructure(kept)).detectable:
                return UndetectabilityDiagnosis(partition.sensor_only, removed)
    raise ContractViolation("no culprit set found; structure invariants are broken")
