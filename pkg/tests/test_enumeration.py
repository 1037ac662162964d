"""Catalog enumeration, caching, and constraint filtering."""

from __future__ import annotations

import math

import numpy as np
import pytest

from leakgraph import (
    InfeasibleEnumerationError,
    StaleCacheError,
    StructuralError,
    candidate_fault_edges,
    enumerate_detectable,
    filter_catalog,
    is_detectable,
    load_catalog,
    save_catalog,
)
from leakgraph.enumeration import read_catalog, serialize_catalog

from nets import four_sensor, random_tree, six_sensor
from oracles import brute_force_detectable_subsets


def picked(topology, *labels):
    candidates = candidate_fault_edges(topology)
    return tuple(candidates.by_label(lab) for lab in labels)


def test_four_sensor_catalog_counts():
    catalog = enumerate_detectable(four_sensor())
    assert catalog.n_detectable == 21
    assert catalog.n_undetectable == 14
    assert len(catalog) == 21


def test_forcing_all_leaks_leaves_one_structure():
    topo = four_sensor()
    catalog = enumerate_detectable(topo, forced=picked(topo, "LF1", "L2", "L3", "L4"))
    assert len(catalog) == 1
    assert catalog.structure(0).labels == ("LF1", "L2", "L3", "L4")


def test_excluding_all_sensor_faults_leaves_the_all_leak_structure():
    topo = four_sensor()
    catalog = enumerate_detectable(topo, excluded=picked(topo, "D2", "D3", "D4"))
    assert len(catalog) == 1
    assert catalog.structure(0).labels == ("LF1", "L2", "L3", "L4")


def test_count_identity_and_exhaustive_agreement():
    rng = np.random.default_rng(53)
    for _ in range(12):
        topo = random_tree(rng, int(rng.integers(2, 8)))
        catalog = enumerate_detectable(topo)
        total = math.comb(len(catalog.candidates), topo.n_nodes - 1)
        assert catalog.n_detectable + catalog.n_undetectable == total
        assert list(catalog.structures) == brute_force_detectable_subsets(topo)
        for structure in catalog.iter_structures():
            assert is_detectable(topo, structure).detectable


def test_serialisation_is_deterministic():
    first = serialize_catalog(enumerate_detectable(six_sensor()))
    second = serialize_catalog(enumerate_detectable(six_sensor()))
    assert first == second


def test_forced_excluded_filter_commutes_with_enumeration():
    rng = np.random.default_rng(59)
    for _ in range(10):
        topo = random_tree(rng, int(rng.integers(3, 7)))
        candidates = candidate_fault_edges(topo)
        shuffled = list(rng.permutation(len(candidates)))
        forced = tuple(candidates.edges[i] for i in shuffled[:1])
        excluded = tuple(candidates.edges[i] for i in shuffled[1:3])
        direct = enumerate_detectable(topo, forced=forced, excluded=excluded)
        filtered = filter_catalog(enumerate_detectable(topo), forced, excluded)
        assert direct.structures == filtered.structures
        assert direct.n_detectable == filtered.n_detectable
        assert direct.n_undetectable == filtered.n_undetectable


def test_too_many_forced_faults_is_infeasible():
    topo = four_sensor()
    with pytest.raises(InfeasibleEnumerationError, match="forced"):
        enumerate_detectable(topo, forced=picked(topo, "LF1", "L2", "D2", "L3", "D3"))


def test_overlapping_constraints_rejected():
    topo = four_sensor()
    with pytest.raises(InfeasibleEnumerationError, match="overlap"):
        enumerate_detectable(topo, forced=picked(topo, "L2"), excluded=picked(topo, "L2"))


def test_non_candidate_constraint_rejected():
    topo = four_sensor()
    stray = candidate_fault_edges(six_sensor()).by_label("L5")
    with pytest.raises(StructuralError, match="not a candidate"):
        enumerate_detectable(topo, forced=(stray,))


def test_combinatorial_cap_guard():
    with pytest.raises(InfeasibleEnumerationError, match="cap"):
        enumerate_detectable(six_sensor(), cap=10)


def test_cache_round_trip(tmp_path):
    topo = six_sensor()
    catalog = enumerate_detectable(topo)
    save_catalog(catalog, tmp_path)
    loaded = load_catalog(tmp_path, topo)
    assert loaded is not None
    assert loaded.structures == catalog.structures
    assert serialize_catalog(loaded) == serialize_catalog(catalog)


def test_cache_miss_returns_none(tmp_path):
    assert load_catalog(tmp_path, four_sensor()) is None


def test_stale_cache_is_an_explicit_error(tmp_path):
    catalog = enumerate_detectable(four_sensor())
    path = save_catalog(catalog, tmp_path)
    with pytest.raises(StaleCacheError, match="different topology"):
        read_catalog(path, six_sensor())
