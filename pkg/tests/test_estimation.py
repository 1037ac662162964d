"""Residual aggregation, per-structure solves, selection, and the baseline."""

from __future__ import annotations

from datetime import datetime, timedelta

import numpy as np
import pytest

from leakgraph import (
    EmptyWindowError,
    FaultStructure,
    InputError,
    NoEstimationPossibleError,
    ResidualVector,
    SensorSample,
    StaleCacheError,
    StructuralError,
    candidate_fault_edges,
    compute_residuals,
    enumerate_detectable,
    estimate_faults,
    filter_catalog,
    nodal_system,
    propagate_uninformative,
    qp_lasso,
    solve_structure,
)
from leakgraph.errors import ContractViolation
from leakgraph.estimation import CatalogSolver, iter_windows

from nets import four_sensor, random_tree, single_sensor, six_sensor
from oracles import brute_force_minimal, envelope_of

T0 = datetime(2024, 1, 1)


def structure_of(topology, *labels):
    candidates = candidate_fault_edges(topology)
    return FaultStructure(tuple(candidates.by_label(lab) for lab in labels))


def residuals(mapping, window="w"):
    return ResidualVector(window, {k: float(v) for k, v in mapping.items()})


def sample(sensor, minutes, measured, predicted, quality="ok"):
    return SensorSample(sensor, T0 + timedelta(minutes=minutes), measured, predicted, quality)


# ----------------------------------------------------------------- residuals

def test_residuals_zero_when_prediction_matches():
    samples = [sample("1", 15 * i, 4.0, 4.0) for i in range(4)]
    out = compute_residuals(samples, ["1"], "d")
    assert out.values["1"] == 0.0
    assert not out.uninformative


def test_residuals_single_sample_mean():
    out = compute_residuals([sample("1", 0, 6.0, 4.0)], ["1"])
    assert out.values["1"] == 2.0


def test_residuals_daily_mean_cancels_alternating_noise():
    samples = [
        sample("1", 15 * i, 5.0 + (1.0 if i % 2 == 0 else -1.0), 3.0)
        for i in range(96)
    ]
    out = compute_residuals(samples, ["1"], "d")
    assert out.values["1"] == pytest.approx(2.0, abs=1e-12)


def test_residuals_empty_window_is_an_error():
    with pytest.raises(EmptyWindowError):
        compute_residuals([], ["1"])


def test_sensor_without_usable_samples_is_uninformative():
    samples = [
        sample("1", 0, 5.0, 3.0),
        sample("2", 0, float("nan"), float("nan"), "missing"),
    ]
    out = compute_residuals(samples, ["1", "2"])
    assert out.uninformative == {"2"}
    assert np.isnan(out.values["2"])


def test_sensor_absent_from_window_is_uninformative():
    out = compute_residuals([sample("1", 0, 5.0, 3.0)], ["1", "2"])
    assert out.uninformative == {"2"}


def test_stuck_at_zero_sensor_is_uninformative():
    samples = [sample("1", 15 * i, 0.0, 3.0) for i in range(8)]
    out = compute_residuals(samples, ["1"])
    assert out.uninformative == {"1"}


def test_constant_nonzero_readings_are_kept():
    # noise-free meters legitimately repeat the same value all day
    samples = [sample("1", 15 * i, 5.0, 3.0) for i in range(8)]
    out = compute_residuals(samples, ["1"])
    assert out.uninformative == frozenset()
    assert out.values["1"] == 2.0


def test_unknown_sensor_in_samples_rejected():
    with pytest.raises(InputError, match="unknown sensor"):
        compute_residuals([sample("9", 0, 1.0, 1.0)], ["1"])


def test_ok_sample_with_nan_rejected():
    with pytest.raises(InputError, match="finite"):
        SensorSample("1", T0, float("nan"), 1.0, "ok")


def test_window_grouping():
    samples = [sample("1", 0, 1, 1), sample("1", 1440, 2, 1), sample("1", 1500, 2, 1)]
    windows = iter_windows(samples, "daily")
    assert [w for w, _ in windows] == ["2024-01-01", "2024-01-02"]
    assert len(windows[1][1]) == 2
    assert [w for w, _ in iter_windows(samples, "all")] == ["all"]
    with pytest.raises(InputError, match="window spec"):
        iter_windows(samples, "weekly")


# -------------------------------------------------------------------- solves

def test_solve_all_leak_structure():
    topo = four_sensor()
    sol = solve_structure(
        topo, structure_of(topo, "LF1", "L2", "L3", "L4"),
        residuals({"1": 10, "2": 5, "3": 2, "4": 3}),
    )
    assert sol.values == {"LF1": 2.0, "L2": 3.0, "L3": 2.0, "L4": 3.0}
    assert sol.l1_norm == pytest.approx(10.0)
    assert sol.valid


def test_solve_with_sensor_fault_unknown():
    topo = four_sensor()
    sol = solve_structure(
        topo, structure_of(topo, "LF1", "D2", "L3", "L4"),
        residuals({"1": 10, "2": 5, "3": 2, "4": 3}),
    )
    assert sol.values == {"LF1": 5.0, "D2": 3.0, "L3": 2.0, "L4": 3.0}
    assert sol.l1_norm == pytest.approx(13.0)
    assert sol.valid


def test_solve_zero_residuals_gives_zero_solution():
    topo = four_sensor()
    sol = solve_structure(
        topo, structure_of(topo, "LF1", "D2", "L3", "D4"),
        residuals({"1": 0, "2": 0, "3": 0, "4": 0}),
    )
    assert sol.l1_norm == 0.0
    assert sol.valid


def test_solve_stack_equals_solve_of_mean():
    topo = four_sensor()
    structure = structure_of(topo, "LF1", "L2", "L3", "L4")
    stack = [
        residuals({"1": 10, "2": 5, "3": 2, "4": 3}),
        residuals({"1": 12, "2": 7, "3": 4, "4": 1}),
    ]
    merged = residuals({"1": 11, "2": 6, "3": 3, "4": 2})
    assert solve_structure(topo, structure, stack).values == pytest.approx(
        solve_structure(topo, structure, merged).values
    )


def test_solve_rejects_non_square_structure():
    topo = four_sensor()
    with pytest.raises(ContractViolation, match="edges"):
        solve_structure(topo, structure_of(topo, "L2"), residuals({"1": 1, "2": 1, "3": 0, "4": 0}))


def test_solve_rejects_nan_residuals():
    topo = four_sensor()
    with pytest.raises(StructuralError, match="non-finite"):
        solve_structure(
            topo,
            structure_of(topo, "LF1", "L2", "L3", "L4"),
            residuals({"1": float("nan"), "2": 0, "3": 0, "4": 0}),
        )


# ----------------------------------------------------------------- selection

def test_minimal_set_for_pure_leak_pattern():
    topo = four_sensor()
    catalog = enumerate_detectable(topo)
    report = estimate_faults(topo, catalog, residuals({"1": 10, "2": 5, "3": 2, "4": 3}))
    assert len(report.minimal_solutions) == 1
    best = report.minimal_solutions[0]
    assert best.structure.labels == ("LF1", "L2", "L3", "L4")
    assert best.l1_norm == pytest.approx(10.0)
    assert report.envelope["L2"] == (3.0, 3.0)
    assert not report.no_valid_solution


def test_zero_residuals_all_structures_tie_at_zero():
    topo = four_sensor()
    catalog = enumerate_detectable(topo)
    report = estimate_faults(topo, catalog, residuals({"1": 0, "2": 0, "3": 0, "4": 0}))
    assert report.minimal_solutions[0].l1_norm == 0.0
    assert all(s.l1_norm == 0.0 for s in report.minimal_solutions)
    assert set(report.envelope.values()) == {(0.0, 0.0)}


def test_tied_explanations_widen_the_envelope():
    # two structurally different fits share the minimal l1 norm: an
    # upstream anomaly compensating a mid-chain leak, or two over-reporting
    # sensors; frozen from the brute-force oracle
    topo = four_sensor()
    catalog = enumerate_detectable(topo)
    vector = {"1": 0.0, "2": 1.0, "3": 1.0, "4": 0.0}
    best, minimal = brute_force_minimal(topo, vector)
    assert best == pytest.approx(2.0)
    oracle_env = envelope_of(minimal, catalog.candidates.labels)
    report = estimate_faults(topo, catalog, residuals(vector))
    for label in catalog.candidates.labels:
        assert report.envelope[label] == pytest.approx(oracle_env[label], abs=1e-9)
    assert report.envelope["LF1"] == pytest.approx((-1.0, 0.0))
    assert report.envelope["L3"] == pytest.approx((0.0, 1.0))
    assert report.envelope["D2"] == pytest.approx((0.0, 1.0))
    assert report.envelope["D3"] == pytest.approx((0.0, 1.0))


def test_envelope_matches_oracle_on_random_inputs():
    rng = np.random.default_rng(61)
    topo = four_sensor()
    catalog = enumerate_detectable(topo)
    sensor_ids = [s.id for s in topo.sensors]
    for _ in range(25):
        vector = {sid: float(v) for sid, v in zip(sensor_ids, rng.normal(0, 2, 4))}
        best, minimal = brute_force_minimal(topo, vector)
        report = estimate_faults(topo, catalog, residuals(vector))
        assert report.minimal_solutions[0].l1_norm == pytest.approx(best, rel=1e-9)
        oracle_env = envelope_of(minimal, catalog.candidates.labels)
        for label in catalog.candidates.labels:
            assert report.envelope[label] == pytest.approx(oracle_env[label], abs=1e-8)


def test_conservation_for_every_catalog_solve():
    rng = np.random.default_rng(67)
    for _ in range(10):
        topo = random_tree(rng, int(rng.integers(2, 8)))
        catalog = enumerate_detectable(topo)
        sensor_ids = [s.id for s in topo.sensors]
        vector = {sid: float(v) for sid, v in zip(sensor_ids, rng.normal(0, 5, len(sensor_ids)))}
        x_r = np.array([vector[sid] for sid in sensor_ids])
        bound = 1e-9 * max(1.0, np.abs(x_r).max())
        for structure in catalog.iter_structures():
            sol = solve_structure(topo, structure, residuals(vector))
            system = nodal_system(topo, structure)
            x = np.array([sol.values[lab] for lab in system.fault_labels])
            assert np.abs(system.a @ x - system.b @ x_r).max() <= bound


def test_minimal_solutions_are_never_invalid():
    rng = np.random.default_rng(71)
    topo = six_sensor()
    catalog = enumerate_detectable(topo)
    sensor_ids = [s.id for s in topo.sensors]
    for _ in range(20):
        vector = {sid: float(v) for sid, v in zip(sensor_ids, rng.normal(0, 3, len(sensor_ids)))}
        report = estimate_faults(topo, catalog, residuals(vector))
        assert all(s.valid for s in report.minimal_solutions)


def test_scaling_residuals_scales_solutions_and_keeps_the_minimal_set():
    rng = np.random.default_rng(73)
    topo = four_sensor()
    catalog = enumerate_detectable(topo)
    sensor_ids = [s.id for s in topo.sensors]
    for _ in range(10):
        vector = {sid: float(v) for sid, v in zip(sensor_ids, rng.normal(1, 2, 4))}
        factor = float(rng.uniform(0.2, 5.0))
        base = estimate_faults(topo, catalog, residuals(vector))
        scaled = estimate_faults(
            topo, catalog, residuals({k: v * factor for k, v in vector.items()})
        )
        base_sets = [s.structure.labels for s in base.minimal_solutions]
        scaled_sets = [s.structure.labels for s in scaled.minimal_solutions]
        assert base_sets == scaled_sets
        for lhs, rhs in zip(base.minimal_solutions, scaled.minimal_solutions):
            for label, value in lhs.values.items():
                assert rhs.values[label] == pytest.approx(value * factor, abs=1e-9 * factor)


def test_no_valid_solution_is_flagged():
    topo = four_sensor()
    catalog = enumerate_detectable(topo)
    constrained = filter_catalog(
        catalog,
        excluded=tuple(e for e in catalog.candidates.edges if e.label.startswith("D")),
    )
    report = estimate_faults(
        topo, constrained, residuals({"1": 0, "2": 0, "3": -1, "4": 0})
    )
    assert report.no_valid_solution
    assert report.minimal_solutions == ()
    assert report.envelope == {}


def test_catalog_topology_mismatch_is_stale():
    catalog = enumerate_detectable(four_sensor())
    with pytest.raises(StaleCacheError):
        estimate_faults(six_sensor(), catalog, residuals({}))


def test_solver_reuse_matches_one_shot():
    topo = four_sensor()
    catalog = enumerate_detectable(topo)
    solver = CatalogSolver(topo, catalog)
    vector = residuals({"1": 3, "2": 1, "3": 0.5, "4": 1})
    assert solver.estimate(vector).envelope == estimate_faults(topo, catalog, vector).envelope


# ------------------------------------------------------------------ baseline

def test_baseline_unregularised_on_single_sensor_matches_exact_solve():
    topo = single_sensor()
    vector = residuals({"1": 2.5})
    exact = solve_structure(topo, candidate_fault_edges(topo), vector)
    approx = qp_lasso(topo, vector, 0.0)
    assert approx.values["LF1"] == pytest.approx(exact.values["LF1"], abs=1e-6)


def test_baseline_zero_residuals_stay_at_zero():
    topo = four_sensor()
    for lam in (0.0, 0.05, 1.0):
        out = qp_lasso(topo, residuals({"1": 0, "2": 0, "3": 0, "4": 0}), lam)
        assert out.l1_norm == 0.0


def test_baseline_is_deterministic():
    topo = four_sensor()
    vector = residuals({"1": 2, "2": 2, "3": 2, "4": 0})
    first = qp_lasso(topo, vector, 0.05)
    second = qp_lasso(topo, vector, 0.05)
    assert first.values == second.values


def test_baseline_small_lambda_bias_is_bounded():
    topo = four_sensor()
    out = qp_lasso(topo, residuals({"1": 2, "2": 2, "3": 2, "4": 0}), 0.05)
    assert out.values["L3"] == pytest.approx(2.0, abs=0.1)
    others = {k: v for k, v in out.values.items() if k != "L3"}
    assert all(abs(v) <= 0.1 for v in others.values())


def test_baseline_leaks_respect_positivity():
    topo = four_sensor()
    out = qp_lasso(topo, residuals({"1": 1, "2": -2, "3": -1, "4": 0.5}), 0.05)
    for edge in candidate_fault_edges(topo).edges:
        if edge.label.startswith("L") and not edge.label.startswith("LF"):
            assert out.values[edge.label] >= 0.0
    assert out.valid


def test_baseline_rejects_negative_lambda():
    with pytest.raises(InputError):
        qp_lasso(four_sensor(), residuals({"1": 0, "2": 0, "3": 0, "4": 0}), -0.1)


# --------------------------------------------------------------- propagation

def test_propagation_identity_without_uninformative_sensors():
    topo = four_sensor()
    plan = propagate_uninformative(topo, set())
    assert plan.topology is topo
    assert plan.forced == ()


def test_propagation_merges_dead_sensor_zone():
    topo = four_sensor()
    plan = propagate_uninformative(topo, {"2"})
    assert ("1", "2") in plan.topology.members
    assert plan.forced_labels == ("D2",)
    assert plan.provenance["2"] == "1"


def test_propagation_two_dead_sensors():
    topo = four_sensor()
    plan = propagate_uninformative(topo, {"2", "3"})
    assert ("1", "2", "3") in plan.topology.members
    assert set(plan.forced_labels) == {"D2", "D3"}


def test_propagation_of_reference_adjacent_sensor_forces_the_anomaly():
    topo = four_sensor()
    plan = propagate_uninformative(topo, {"1"})
    assert plan.forced_labels == ("LF1",)
    assert plan.provenance["1"] == "0"


def test_propagation_with_everything_dead_is_an_error():
    with pytest.raises(NoEstimationPossibleError):
        propagate_uninformative(four_sensor(), {"1", "2", "3", "4"})


def test_propagation_unknown_sensor_rejected():
    with pytest.raises(StructuralError, match="unknown sensor"):
        propagate_uninformative(four_sensor(), {"99"})
