"""Leak and sensor-fault detectability and estimation for tree-structured
flow-sensor networks."""

__version__ = "0.1.0"

from .detectability import (
    ComponentPartition,
    DetectabilityVerdict,
    UndetectabilityDiagnosis,
    classify_components,
    diagnose_undetectability,
    is_detectable,
)
from .enumeration import (
    DetectableCatalog,
    enumerate_detectable,
    filter_catalog,
    load_catalog,
    save_catalog,
)
from .errors import (
    ContractViolation,
    EmptyWindowError,
    InfeasibleEnumerationError,
    InputError,
    LeakGraphError,
    NoEstimationPossibleError,
    SolverError,
    StaleCacheError,
    StructuralError,
)
from .estimation import (
    CatalogSolver,
    EstimationReport,
    ResidualVector,
    SensorSample,
    StructureSolution,
    compute_residuals,
    estimate_faults,
    propagate_uninformative,
    qp_lasso,
    solve_structure,
)
from .graph_model import (
    CombinedGraph,
    Component,
    FaultEdge,
    FaultKind,
    FaultStructure,
    Sensor,
    Topology,
    build_combined_graph,
    candidate_fault_edges,
    incidence_matrix,
    is_directed_tree,
    merge_nodes,
    nodal_system,
    topology_fingerprint,
    weakly_connected_components,
)
from .pipeline import CatalogStore, RunResult, WindowReport, run_baseline, run_estimation
from .simulator import (
    FaultInjection,
    ReferenceCase,
    Scenario,
    demo_network,
    reference_suite,
    simulate_scenario,
)

__all__ = [name for name in dir() if not name.startswith("_")]
