"""Tree-structured flow-sensor networks and their fault graphs.

A monitored network is a directed tree of flow sensors: nodes are
consumption zones plus one *reference* node (the merged source/sink of
the network), and each sensor is a directed edge pointing with the flow.
Unknown anomalies are modelled as extra *fault edges* over the same node
set: a leak at a zone is an edge from the zone to the reference node, a
faulty sensor is an edge opposing that sensor, and a zone supplied
directly by the reference gets a single merged ``anomaly`` unknown
because its leak and sensor fault occupy the same edge slot.

Nodes are normalised to ``0..n-1`` with the reference node at index 0.
Original zone labels are retained on every node; a node produced by
merging records all of its constituent labels.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation, NoEstimationPossibleError, StructuralError

REFERENCE = 0

LEAK_PREFIX = "L"
FAULT_PREFIX = "D"
ANOMALY_PREFIX = "LF"


class FaultKind(str, Enum):
    """Kind of unknown carried by a fault edge."""

    LEAK = "leak"
    SENSOR_FAULT = "sensor_fault"
    ANOMALY = "anomaly"


# Leaks and anomalies share a rank: they occupy the same zone-to-reference slot.
_KIND_RANK = {FaultKind.LEAK: 0, FaultKind.ANOMALY: 0, FaultKind.SENSOR_FAULT: 1}


@dataclass(frozen=True)
class Sensor:
    """A flow sensor, directed with the water flow."""

    id: str
    tail: int
    head: int


@dataclass(frozen=True)
class FaultEdge:
    """A candidate unknown: one directed edge of the fault graph."""

    kind: FaultKind
    tail: int
    head: int
    label: str

    def sort_key(self) -> tuple[int, int, int, str]:
        return (self.tail, _KIND_RANK[self.kind], self.head, self.label)


@dataclass(frozen=True)
class FaultStructure:
    """A set of simultaneously hypothesised fault edges.

    Edges are kept in a canonical order so that equal structures compare
    and serialise identically.  Construction rejects duplicate labels,
    two same-kind edges leaving one node, and parallel edges between the
    same node pair (a leak and an anomaly at one zone would be parallel
    columns of the nodal system, hence never jointly solvable).
    """

    edges: tuple[FaultEdge, ...]

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.edges, key=FaultEdge.sort_key))
        object.__setattr__(self, "edges", ordered)
        labels = set()
        kind_tails = set()
        pairs = set()
        for edge in ordered:
            if edge.label in labels:
                raise StructuralError(f"duplicate fault label {edge.label!r}")
            labels.add(edge.label)
            if (edge.kind, edge.tail) in kind_tails:
                raise StructuralError(
                    f"two {edge.kind.value} edges leave node {edge.tail}"
                )
            kind_tails.add((edge.kind, edge.tail))
            if (edge.tail, edge.head) in pairs:
                raise StructuralError(
                    f"parallel fault edges between nodes {edge.tail} and {edge.head}"
                )
            pairs.add((edge.tail, edge.head))
            if edge.tail == edge.head:
                raise StructuralError(f"fault edge {edge.label!r} is a self-loop")

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(edge.label for edge in self.edges)

    def by_label(self, label: str) -> FaultEdge:
        for edge in self.edges:
            if edge.label == label:
                return edge
        raise KeyError(label)


@dataclass(frozen=True)
class Topology:
    """The known residual graph: zones, the reference node, and sensors.

    ``members[i]`` lists the original zone labels represented by node
    ``i``; index 0 is the reference node.  The sensor list is ordered
    and defines the column order of residual vectors.
    """

    members: tuple[tuple[str, ...], ...]
    sensors: tuple[Sensor, ...]

    def __post_init__(self) -> None:
        n = len(self.members)
        if n < 1:
            raise StructuralError("topology needs at least the reference node")
        seen: set[str] = set()
        for labels in self.members:
            if not labels:
                raise StructuralError("every node needs at least one label")
            for label in labels:
                if label in seen:
                    raise StructuralError(f"duplicate node label {label!r}")
                seen.add(label)
        ids = set()
        indegree = [0] * n
        uf = UnionFind(n)
        for s in self.sensors:
            if not (0 <= s.tail < n and 0 <= s.head < n):
                raise StructuralError(f"sensor {s.id!r} endpoint outside topology")
            if s.tail == s.head:
                raise StructuralError(f"sensor {s.id!r} is a self-loop")
            if s.id in ids:
                raise StructuralError(f"duplicate sensor id {s.id!r}")
            ids.add(s.id)
            indegree[s.head] += 1
            uf.union(s.tail, s.head)
        if indegree[REFERENCE] != 0:
            raise StructuralError("the reference node must not have a supplying sensor")
        for node in range(1, n):
            if indegree[node] != 1:
                raise StructuralError(
                    f"zone {self.label(node)!r} must have exactly one supplying "
                    f"sensor, found {indegree[node]}"
                )
        if uf.component_count() != 1:
            raise StructuralError("the sensor network is not weakly connected")

    @classmethod
    def from_labels(
        cls,
        reference: str,
        nodes: Sequence[str],
        sensors: Sequence[tuple[str, str, str]],
    ) -> Topology:
        """Build a normalised topology from labelled nodes and sensors.

        ``sensors`` holds ``(sensor_id, from_label, to_label)`` triples.
        Rejects unknown labels, disconnected networks, and cycles; a
        cycle diagnostic lists one offending cycle.
        """
        labels = list(nodes)
        if reference not in labels:
            raise StructuralError(f"reference node {reference!r} not in node list")
        if len(set(labels)) != len(labels):
            raise StructuralError("node labels must be unique")
        ordered = [reference] + [lab for lab in labels if lab != reference]
        index = {lab: i for i, lab in enumerate(ordered)}
        edges: list[Sensor] = []
        for sid, tail_label, head_label in sensors:
            for lab in (tail_label, head_label):
                if lab not in index:
                    raise StructuralError(f"sensor {sid!r} references unknown node {lab!r}")
            edges.append(Sensor(str(sid), index[tail_label], index[head_label]))
        _reject_cycles(len(ordered), edges, ordered)
        return cls(tuple((lab,) for lab in ordered), tuple(edges))

    @property
    def n_nodes(self) -> int:
        return len(self.members)

    @property
    def labels(self) -> tuple[str, ...]:
        """Primary label of every node (first constituent)."""
        return tuple(m[0] for m in self.members)

    def label(self, node: int) -> str:
        return self.members[node][0]

    def node_of(self, label: str) -> int:
        """Node index carrying ``label`` as one of its constituents."""
        for i, constituents in enumerate(self.members):
            if label in constituents:
                return i
        raise KeyError(label)

    def sensor(self, sensor_id: str) -> Sensor:
        for s in self.sensors:
            if s.id == sensor_id:
                return s
        raise KeyError(sensor_id)

    def incoming_sensor(self, node: int) -> Sensor:
        """The unique sensor supplying a non-reference node."""
        for s in self.sensors:
            if s.head == node:
                return s
        raise KeyError(node)

    def zone_labels(self) -> tuple[str, ...]:
        """All original zone labels (everything except the reference's own)."""
        out = list(self.members[REFERENCE][1:])
        for m in self.members[1:]:
            out.extend(m)
        return tuple(out)


def _reject_cycles(n: int, sensors: Sequence[Sensor], labels: Sequence[str]) -> None:
    """Raise with a diagnostic listing one cycle of the underlying graph.

    Edges are added one by one; an edge whose endpoints are already
    connected closes a cycle, reconstructed as the existing path between
    its endpoints.
    """
    adjacency: list[list[int]] = [[] for _ in range(n)]
    uf = UnionFind(n)
    for s in sensors:
        if s.tail != s.head and uf.find(s.tail) != uf.find(s.head):
            uf.union(s.tail, s.head)
            adjacency[s.tail].append(s.head)
            adjacency[s.head].append(s.tail)
            continue
        path = _bfs_path(adjacency, s.head, s.tail)
        names = " -> ".join(labels[v] for v in [s.tail] + path)
        raise StructuralError(f"cycle detected: {names}")


def _bfs_path(adjacency: Sequence[Sequence[int]], start: int, goal: int) -> list[int]:
    parent = {start: -1}
    queue = [start]
    while queue:
        node = queue.pop(0)
        if node == goal:
            break
        for neigh in adjacency[node]:
            if neigh not in parent:
                parent[neigh] = node
                queue.append(neigh)
    path = [goal]
    while parent.get(path[-1], -1) != -1:
        path.append(parent[path[-1]])
    return list(reversed(path))


class UnionFind:
    """Disjoint-set forest with path compression over ``0..n-1``."""

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra

    def component_count(self) -> int:
        return sum(1 for i, p in enumerate(self.parent) if self.find(i) == i)


@dataclass(frozen=True)
class Component:
    """A weakly connected component of a fault graph."""

    nodes: frozenset[int]
    edges: tuple[FaultEdge, ...]


def weakly_connected_components(
    nodes: Iterable[int], edges: Iterable[FaultEdge]
) -> list[Component]:
    """Partition ``nodes`` into weakly connected components of the fault graph.

    Every node lands in exactly one component; components are returned
    sorted by their smallest node index.
    """
    node_list = sorted(set(nodes))
    index = {node: i for i, node in enumerate(node_list)}
    edge_list = list(edges)
    uf = UnionFind(len(node_list))
    for edge in edge_list:
        if edge.tail not in index or edge.head not in index:
            raise StructuralError(f"edge {edge.label!r} endpoint outside node set")
        uf.union(index[edge.tail], index[edge.head])
    groups: dict[int, list[int]] = {}
    for node in node_list:
        groups.setdefault(uf.find(index[node]), []).append(node)
    members: dict[int, Component] = {}
    induced: dict[int, list[FaultEdge]] = {root: [] for root in groups}
    for edge in edge_list:
        induced[uf.find(index[edge.tail])].append(edge)
    for root, group in groups.items():
        members[root] = Component(frozenset(group), tuple(induced[root]))
    return sorted(members.values(), key=lambda c: min(c.nodes))


def is_directed_tree(component: Component) -> bool:
    """True iff the component's underlying undirected graph is a tree.

    For a weakly connected graph this reduces to the edge count test
    ``|E| == |V| - 1``.  Raises if the input is not weakly connected.
    """
    node_list = sorted(component.nodes)
    index = {node: i for i, node in enumerate(node_list)}
    uf = UnionFind(len(node_list))
    for edge in component.edges:
        uf.union(index[edge.tail], index[edge.head])
    if uf.component_count() != 1:
        raise ContractViolation("is_directed_tree requires a weakly connected input")
    return len(component.edges) == len(component.nodes) - 1


@dataclass(frozen=True)
class CombinedGraph:
    """Union of the residual tree and a fault structure over one node set."""

    n_nodes: int
    fault_edges: tuple[FaultEdge, ...]
    residual_edges: tuple[Sensor, ...]

    def edge_pairs(self) -> list[tuple[int, int]]:
        """All edges as (tail, head) pairs, fault edges first."""
        pairs = [(e.tail, e.head) for e in self.fault_edges]
        pairs.extend((s.tail, s.head) for s in self.residual_edges)
        return pairs

    def incidence(self) -> np.ndarray:
        return incidence_matrix(self.n_nodes, self.edge_pairs())


def build_combined_graph(topology: Topology, faults: FaultStructure) -> CombinedGraph:
    """Overlay a fault structure on the residual tree.

    The residual and fault edge sets stay individually recoverable from
    the result.
    """
    validate_fault_structure(topology, faults)
    return CombinedGraph(topology.n_nodes, faults.edges, topology.sensors)


def incidence_matrix(n_nodes: int, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    """Node-edge incidence matrix: +1 where an edge leaves a node, -1 where
    it enters, 0 elsewhere.  Shape is ``n_nodes x len(edges)``."""
    matrix = np.zeros((n_nodes, len(edges)))
    for j, (tail, head) in enumerate(edges):
        matrix[tail, j] = 1.0
        matrix[head, j] = -1.0
    return matrix


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Per-node balance equations ``a @ x_faults = b @ x_residuals``.

    ``a`` is the incidence matrix of the fault edges; ``b`` is the
    negated incidence matrix of the sensors, so each row reads
    "fault outflow = residual inflow - residual outflow" and leak
    unknowns come out positive for physical water loss.
    """

    a: np.ndarray
    b: np.ndarray
    fault_labels: tuple[str, ...]
    sensor_ids: tuple[str, ...]

    def reduced(self) -> tuple[np.ndarray, np.ndarray]:
        """The square-solvable system with the reference row dropped."""
        return self.a[1:], self.b[1:]


def nodal_system(topology: Topology, faults: FaultStructure) -> LinearSystem:
    """Assemble the nodal balance system for a fault structure."""
    validate_fault_structure(topology, faults)
    n = topology.n_nodes
    a = incidence_matrix(n, [(e.tail, e.head) for e in faults.edges])
    b = -incidence_matrix(n, [(s.tail, s.head) for s in topology.sensors])
    return LinearSystem(
        a, b, tuple(e.label for e in faults.edges), tuple(s.id for s in topology.sensors)
    )


def merge_nodes(topology: Topology, sensor_id: str) -> Topology:
    """Contract a sensor's edge, fusing its head zone into its tail node.

    Used when a sensor is uninformative: the edge disappears and the
    fused node records the constituent zone labels of both endpoints.
    Merging the only remaining sensor would leave a single node, which
    is reported as "no estimation possible".
    """
    try:
        sensor = topology.sensor(sensor_id)
    except KeyError:
        raise StructuralError(f"unknown sensor id {sensor_id!r}") from None
    if len(topology.sensors) == 1:
        raise NoEstimationPossibleError(
            "merging the last sensor leaves a single node; no estimation possible"
        )
    keep, gone = sensor.tail, sensor.head
    remap = {}
    new_members = []
    for old in range(topology.n_nodes):
        if old == gone:
            continue
        remap[old] = len(new_members)
        new_members.append(topology.members[old])
    remap[gone] = remap[keep]
    new_members[remap[keep]] = topology.members[keep] + topology.members[gone]
    new_sensors = tuple(
        Sensor(s.id, remap[s.tail], remap[s.head])
        for s in topology.sensors
        if s.id != sensor_id
    )
    return Topology(tuple(new_members), new_sensors)


def candidate_fault_edges(topology: Topology) -> FaultStructure:
    """The full hypothesis set: every zone leaks and every sensor is faulty.

    Zones supplied directly by the reference node get one merged
    ``anomaly`` unknown instead of a leak/sensor-fault pair, since those
    two edges would be parallel and never jointly solvable.
    """
    edges = []
    for node in range(1, topology.n_nodes):
        supplying = topology.incoming_sensor(node)
        zone = topology.label(node)
        if supplying.tail == REFERENCE:
            edges.append(
                FaultEdge(FaultKind.ANOMALY, node, REFERENCE, f"{ANOMALY_PREFIX}{zone}")
            )
        else:
            edges.append(
                FaultEdge(FaultKind.LEAK, node, REFERENCE, f"{LEAK_PREFIX}{zone}")
            )
            edges.append(
                FaultEdge(
                    FaultKind.SENSOR_FAULT,
                    node,
                    supplying.tail,
                    f"{FAULT_PREFIX}{supplying.id}",
                )
            )
    return FaultStructure(tuple(edges))


def validate_fault_structure(topology: Topology, faults: FaultStructure) -> None:
    """Check a fault structure against a topology's node and sensor layout."""
    n = topology.n_nodes
    reversed_sensors = {(s.head, s.tail) for s in topology.sensors}
    for edge in faults.edges:
        if not (0 <= edge.tail < n and 0 <= edge.head < n):
            raise StructuralError(f"fault edge {edge.label!r} endpoint outside topology")
        if edge.kind is FaultKind.LEAK:
            if edge.head != REFERENCE or edge.tail == REFERENCE:
                raise StructuralError(
                    f"leak {edge.label!r} must run from a zone to the reference node"
                )
        elif edge.kind is FaultKind.SENSOR_FAULT:
            if (edge.tail, edge.head) not in reversed_sensors:
                raise StructuralError(
                    f"sensor fault {edge.label!r} must oppose an existing sensor"
                )
        else:
            if edge.head != REFERENCE or edge.tail == REFERENCE:
                raise StructuralError(
                    f"anomaly {edge.label!r} must run from a zone to the reference node"
                )
            if topology.incoming_sensor(edge.tail).tail != REFERENCE:
                raise StructuralError(
                    f"anomaly {edge.label!r} is only defined at zones supplied "
                    "directly by the reference node"
                )


def topology_fingerprint(topology: Topology) -> str:
    """Stable hash of the normalised topology, used to key catalog caches."""
    payload = {
        "members": [list(m) for m in topology.members],
        "sensors": [[s.id, s.tail, s.head] for s in topology.sensors],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
