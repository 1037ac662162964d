"""FastAPI service wrapping the estimation library.

The service holds the per-topology catalog cache, so the expensive
offline enumeration runs once per network across requests; every
endpoint is otherwise stateless and takes its inputs inline.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..detectability import classify_components, diagnose_undetectability, is_detectable
from ..enumeration import filter_catalog
from ..errors import LeakGraphError
from ..estimation import qp_lasso  # noqa: F401  (re-exported for service users)
from ..graph_model import Topology
from ..io_utils import (
    parse_fault_specs,
    parse_samples_csv,
    parse_scenario,
    parse_topology,
    report_to_doc,
    samples_to_csv,
    solution_to_doc,
)
from ..pipeline import CatalogStore, run_baseline, run_estimation
from ..simulator import simulate_scenario
from . import schemas

MAX_DIAGNOSED_COMPONENT = 16


def create_app(cache_dir: str | Path | None = None, *, cap: int | None = None) -> FastAPI:
    app = FastAPI(title="leakgraph", version=__version__)
    app.state.store = CatalogStore(cache_dir, cap=cap)

    @app.exception_handler(LeakGraphError)
    async def on_domain_error(request: Request, exc: LeakGraphError):
        status = 500 if exc.category in ("internal", "contract", "solver") else 400
        return JSONResponse(
            status_code=status,
            content={"error": exc.category, "message": str(exc)},
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/detect", response_model=schemas.DetectResponse)
    def detect(request: schemas.DetectRequest):
        topology = _topology(request.topology)
        faults = parse_fault_specs(
            [f.model_dump() for f in request.faults], topology
        )
        partition = classify_components(topology, faults)
        verdict = is_detectable(topology, faults)
        labels = lambda nodes: sorted(topology.label(i) for i in nodes)
        culprits = None
        if (
            not verdict.detectable
            and request.diagnose
            and len(partition.reference_component.nodes) <= MAX_DIAGNOSED_COMPONENT
        ):
            diagnosis = diagnose_undetectability(topology, faults)
            culprits = labels(diagnosis.culprit_nodes)
        return schemas.DetectResponse(
            detectable=verdict.detectable,
            partition=schemas.PartitionDoc(
                isolated=[labels(c.nodes) for c in partition.isolated],
                sensor_only=[labels(c.nodes) for c in partition.sensor_only],
                reference_component=labels(partition.reference_component.nodes),
            ),
            failing_component=(
                None if verdict.detectable else labels(verdict.failing_component.nodes)
            ),
            culprit_nodes=culprits,
        )

    @app.post("/enumerate", response_model=schemas.EnumerateResponse)
    def enumerate_structures(request: schemas.EnumerateRequest):
        topology = _topology(request.topology)
        catalog, offline_seconds = app.state.store.get(topology)
        force = parse_fault_specs([f.model_dump() for f in request.force], topology)
        exclude = parse_fault_specs([f.model_dump() for f in request.exclude], topology)
        if force.edges or exclude.edges:
            catalog = filter_catalog(catalog, force.edges, exclude.edges)
        structures = None
        if request.include_structures:
            structures = [list(s.labels) for s in catalog.iter_structures()]
        return schemas.EnumerateResponse(
            fingerprint=catalog.fingerprint,
            n_candidates=len(catalog.candidates),
            structure_size=catalog.structure_size,
            detectable=catalog.n_detectable,
            undetectable=catalog.n_undetectable,
            offline_seconds=offline_seconds,
            structures=structures,
        )

    @app.post("/estimate", response_model=schemas.EstimateResponse)
    def estimate(request: schemas.EstimateRequest):
        topology = _topology(request.topology)
        samples = parse_samples_csv(request.csv_text)
        result = run_estimation(
            topology,
            samples,
            request.window,
            store=app.state.store,
            eps_pos=request.eps_pos,
            eps_tie=request.eps_tie,
        )
        return schemas.EstimateResponse(
            fingerprint=result.fingerprint,
            windows=[_window_doc(wr) for wr in result.windows],
            timings=schemas.TimingsDoc(
                offline_seconds=result.offline_seconds,
                online_seconds=result.online_seconds,
            ),
        )

    @app.post("/baseline", response_model=schemas.BaselineResponse)
    def baseline(request: schemas.BaselineRequest):
        topology = _topology(request.topology)
        samples = parse_samples_csv(request.csv_text)
        result = run_baseline(topology, samples, request.window, lam=request.lam)
        return schemas.BaselineResponse(
            fingerprint=result.fingerprint,
            windows=[
                schemas.BaselineWindowDoc(
                    window=w.window,
                    solution=schemas.SolutionDoc(**solution_to_doc(w.solution)),
                    propagated=list(w.propagated),
                    forced_faults=list(w.forced_faults),
                )
                for w in result.windows
            ],
            seconds=result.seconds,
        )

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(request: schemas.SimulateRequest):
        doc = request.scenario.model_dump(by_alias=True)
        doc["topology"] = request.scenario.topology.model_dump(by_alias=True)
        scenario = parse_scenario(doc)
        result = simulate_scenario(scenario, request.seed)
        return schemas.SimulateResponse(
            samples_csv=samples_to_csv(result.samples),
            ground_truth=result.truth,
        )

    return app


def _topology(doc: schemas.TopologyDoc) -> Topology:
    return parse_topology(doc.model_dump(by_alias=True))


def _window_doc(window_report) -> schemas.WindowReportDoc:
    doc = report_to_doc(window_report.report)
    zones = {
        zone: schemas.ZoneReadoutDoc(
            leak_min=None if r.leak is None else r.leak[0],
            leak_max=None if r.leak is None else r.leak[1],
            fault_min=None if r.fault is None else r.fault[0],
            fault_max=None if r.fault is None else r.fault[1],
            propagated=r.propagated,
        )
        for zone, r in window_report.zones.items()
    }
    return schemas.WindowReportDoc(
        window=doc["window"],
        minimal_solutions=[schemas.SolutionDoc(**s) for s in doc["minimal_solutions"]],
        envelope={
            label: schemas.EnvelopeEntry(**entry)
            for label, entry in doc["envelope"].items()
        },
        flags=schemas.ReportFlags(**doc["flags"]),
        zones=zones,
    )


app = create_app()
