"""Offline enumeration of all detectable fault structures.

For an ``n``-node topology, only structures with exactly ``n - 1`` fault
edges are enumerated: those are the square, uniquely solvable hypotheses
(detectable ones are spanning directed trees of the node set), and any
sparser fault pattern shows up inside them as zero-valued unknowns.  The
result is cached per topology fingerprint so the combinatorial work runs
once per network.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Iterator

from .detectability import is_detectable
from .errors import InfeasibleEnumerationError, StaleCacheError, StructuralError
from .graph_model import (
    FaultEdge,
    FaultKind,
    FaultStructure,
    Topology,
    candidate_fault_edges,
    topology_fingerprint,
)

DEFAULT_CAP = 10_000_000

CATALOG_FORMAT = "leakgraph-catalog/1"


@dataclass(frozen=True)
class DetectableCatalog:
    """Every detectable structure of a topology, as candidate-edge indices.

    ``structures`` holds sorted index tuples into ``candidates``; that
    index form doubles as the solve handle used to slice precomputed
    nodal matrices.  ``n_detectable + n_undetectable`` equals the number
    of enumerated subsets (all of ``C(|candidates|, n-1)`` when no
    constraints were applied).
    """

    fingerprint: str
    candidates: FaultStructure
    structure_size: int
    structures: tuple[tuple[int, ...], ...]
    n_detectable: int
    n_undetectable: int

    def __len__(self) -> int:
        return len(self.structures)

    def structure(self, index: int) -> FaultStructure:
        return FaultStructure(tuple(self.candidates.edges[i] for i in self.structures[index]))

    def iter_structures(self) -> Iterator[FaultStructure]:
        for i in range(len(self.structures)):
            yield self.structure(i)


def enumerate_detectable(
    topology: Topology,
    forced: Iterable[FaultEdge] = (),
    excluded: Iterable[FaultEdge] = (),
    *,
    cap: int = DEFAULT_CAP,
) -> DetectableCatalog:
    """Enumerate detectable structures of size ``n - 1``.

    ``forced`` edges must appear in every structure (a-priori detected
    faults); ``excluded`` edges may appear in none.  Both must be drawn
    from the candidate set and be disjoint.
    """
    candidates = candidate_fault_edges(topology)
    index_of = {edge: i for i, edge in enumerate(candidates.edges)}
    k = topology.n_nodes - 1
    forced_idx = _to_indices(forced, index_of, "forced")
    excluded_idx = _to_indices(excluded, index_of, "excluded")
    if forced_idx & excluded_idx:
        raise InfeasibleEnumerationError("forced and excluded fault sets overlap")
    if len(forced_idx) > k:
        raise InfeasibleEnumerationError(
            f"{len(forced_idx)} forced faults cannot fit in structures of size {k}"
        )
    total = math.comb(len(candidates), k)
    if total > cap:
        raise InfeasibleEnumerationError(
            f"enumeration of C({len(candidates)}, {k}) = {total} subsets exceeds "
            f"the cap of {cap}; raise the cap only for deliberately large runs"
        )
    pool = [
        i for i in range(len(candidates)) if i not in forced_idx and i not in excluded_idx
    ]
    base = tuple(sorted(forced_idx))
    detectable: list[tuple[int, ...]] = []
    n_undetectable = 0
    for extra in combinations(pool, k - len(base)):
        subset = tuple(sorted(base + extra))
        structure = FaultStructure(tuple(candidates.edges[i] for i in subset))
        if is_detectable(topology, structure).detectable:
            detectable.append(subset)
        else:
            n_undetectable += 1
    detectable.sort()
    return DetectableCatalog(
        fingerprint=topology_fingerprint(topology),
        candidates=candidates,
        structure_size=k,
        structures=tuple(detectable),
        n_detectable=len(detectable),
        n_undetectable=n_undetectable,
    )


def filter_catalog(
    catalog: DetectableCatalog,
    forced: Iterable[FaultEdge] = (),
    excluded: Iterable[FaultEdge] = (),
) -> DetectableCatalog:
    """Restrict an unconstrained catalog; commutes with enumeration."""
    index_of = {edge: i for i, edge in enumerate(catalog.candidates.edges)}
    forced_idx = _to_indices(forced, index_of, "forced")
    excluded_idx = _to_indices(excluded, index_of, "excluded")
    if forced_idx & excluded_idx:
        raise InfeasibleEnumerationError("forced and excluded fault sets overlap")
    kept = tuple(
        s
        for s in catalog.structures
        if forced_idx.issubset(s) and not excluded_idx.intersection(s)
    )
    k = catalog.structure_size
    if k < len(forced_idx):
        family = 0
    else:
        family = math.comb(
            len(catalog.candidates) - len(forced_idx) - len(excluded_idx),
            k - len(forced_idx),
        )
    return DetectableCatalog(
        fingerprint=catalog.fingerprint,
        candidates=catalog.candidates,
        structure_size=k,
        structures=kept,
        n_detectable=len(kept),
        n_undetectable=family - len(kept),
    )


def _to_indices(edges: Iterable[FaultEdge], index_of: dict, role: str) -> set[int]:
    out = set()
    for edge in edges:
        if edge not in index_of:
            raise StructuralError(f"{role} fault {edge.label!r} is not a candidate edge")
        out.add(index_of[edge])
    return out


def serialize_catalog(catalog: DetectableCatalog) -> str:
    """Deterministic JSON form: identical catalogs serialise byte-identically."""
    payload = {
        "format": CATALOG_FORMAT,
        "fingerprint": catalog.fingerprint,
        "candidates": [
            {"kind": e.kind.value, "tail": e.tail, "head": e.head, "label": e.label}
            for e in catalog.candidates.edges
        ],
        "structure_size": catalog.structure_size,
        "structures": [list(s) for s in catalog.structures],
        "counts": {
            "detectable": catalog.n_detectable,
            "undetectable": catalog.n_undetectable,
        },
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


def catalog_cache_path(cache_dir: str | Path, fingerprint: str) -> Path:
    return Path(cache_dir) / f"catalog-{fingerprint[:16]}.json"


def save_catalog(catalog: DetectableCatalog, cache_dir: str | Path) -> Path:
    path = catalog_cache_path(cache_dir, catalog.fingerprint)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_catalog(catalog))
    return path


def load_catalog(cache_dir: str | Path, topology: Topology) -> DetectableCatalog | None:
    """Load the cached catalog for a topology, or None when absent.

    A cache file that does not match the topology fingerprint (or whose
    candidate set disagrees) raises a stale-cache error instead of being
    silently reused.
    """
    fingerprint = topology_fingerprint(topology)
    path = catalog_cache_path(cache_dir, fingerprint)
    if not path.exists():
        return None
    return read_catalog(path, topology)


def read_catalog(path: str | Path, topology: Topology) -> DetectableCatalog:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CATALOG_FORMAT:
        raise StaleCacheError(f"{path}: not a catalog cache file")
    fingerprint = topology_fingerprint(topology)
    if payload.get("fingerprint") != fingerprint:
        raise StaleCacheError(
            f"{path}: catalog was built for a different topology "
            f"(fingerprint {payload.get('fingerprint', '?')[:16]}... vs {fingerprint[:16]}...)"
        )
    candidates = candidate_fault_edges(topology)
    stored = [
        FaultEdge(FaultKind(e["kind"]), e["tail"], e["head"], e["label"])
        for e in payload["candidates"]
    ]
    if tuple(stored) != candidates.edges:
        raise StaleCacheError(f"{path}: cached candidate set disagrees with the topology")
    return DetectableCatalog(
        fingerprint=fingerprint,
        candidates=candidates,
        structure_size=payload["structure_size"],
        structures=tuple(tuple(s) for s in payload["structures"]),
        n_detectable=payload["counts"]["detectable"],
        n_undetectable=payload["counts"]["undetectable"],
    )
