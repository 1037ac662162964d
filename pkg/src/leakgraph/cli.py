"""Command-line client for the estimation service.

Every subcommand speaks HTTP to the service: against a remote server
when ``--server`` is given, otherwise against an in-process instance of
the app, so no daemon is needed for one-off runs.  File handling stays
on the client side; the service only ever sees inline payloads.
"""

from __future__ import annotations

import hashlib
import json
import sys
import warnings
from pathlib import Path

import click
import httpx

from . import __version__
from .errors import InputError, LeakGraphError
from .io_utils import load_json, load_topology, topology_to_doc
from .pipeline import PLOT_HEADER, build_manifest

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNDETECTABLE = 2


def _open_client(server: str | None, cache_dir: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=300.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

        from .service.app import create_app

    return TestClient(create_app(cache_dir), raise_server_exceptions=False)


def _call(client: httpx.Client, endpoint: str, payload: dict) -> dict:
    response = client.post(endpoint, json=payload)
    if response.status_code >= 400:
        try:
            body = response.json()
            raise _ServiceError(body.get("error", "internal"), body.get("message", ""))
        except (ValueError, KeyError):
            raise _ServiceError("internal", response.text.strip()) from None
    return response.json()


class _ServiceError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _fail(category: str, message: str) -> None:
    click.echo(f"error[{category}]: {message}", err=True)
    sys.exit(EXIT_ERROR)


def _guarded(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except _ServiceError as exc:
        _fail(exc.category, str(exc))
    except LeakGraphError as exc:
        _fail(exc.category, str(exc))
    except OSError as exc:
        _fail("io", str(exc))


def _file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _topology_payload(path: str) -> dict:
    return topology_to_doc(load_topology(path))


def _fault_entries(path: str) -> list[dict]:
    doc = load_json(path)
    if isinstance(doc, dict) and "faults" in doc:
        doc = doc["faults"]
    if not isinstance(doc, list):
        raise InputError(f"{path}: faults file must be a list (or an object with 'faults')")
    return doc


def _fault_token_entry(token: str) -> dict:
    kind, sep, node = token.partition(":")
    if not sep or not kind or not node:
        raise InputError(f"fault token {token!r} must look like 'kind:node', e.g. leak:3")
    return {"kind": kind, "node": node}


def _write_plot_csvs(out_dir: Path, windows: list[dict]) -> None:
    zones = sorted({zone for w in windows for zone in w["zones"]})
    plots = out_dir / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    for zone in zones:
        lines = [",".join(PLOT_HEADER)]
        for w in windows:
            readout = w["zones"].get(zone)
            if readout is None:
                continue
            lines.append(
                ",".join(
                    [
                        w["window"],
                        _plot_cell(readout.get("leak_min")),
                        _plot_cell(readout.get("leak_max")),
                        _plot_cell(readout.get("fault_min")),
                        _plot_cell(readout.get("fault_max")),
                        "true" if readout["propagated"] else "false",
                    ]
                )
            )
        (plots / f"zone_{zone}.csv").write_text("\n".join(lines) + "\n")


def _plot_cell(value) -> str:
    return "" if value is None else repr(float(value))


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@click.group()
@click.version_option(__version__)
@click.option("--server", default=None, help="Base URL of a running service; defaults to in-process.")
@click.option("--cache-dir", default=None, type=click.Path(), help="Catalog cache directory (in-process mode).")
@click.pass_context
def main(ctx: click.Context, server: str | None, cache_dir: str | None) -> None:
    """Leak and sensor-fault estimation for tree-structured sensor networks."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    ctx.obj["cache_dir"] = cache_dir


@main.command()
@click.option("--topology", "topology_path", required=True, type=click.Path(exists=True))
@click.option("--faults", "faults_path", required=True, type=click.Path(exists=True))
@click.option("--no-diagnose", is_flag=True, help="Skip the culprit search on undetectable structures.")
@click.pass_context
def detect(ctx, topology_path: str, faults_path: str, no_diagnose: bool) -> None:
    """Decide whether a fault structure is detectable (exit 2 when not)."""

    def run():
        payload = {
            "topology": _topology_payload(topology_path),
            "faults": _fault_entries(faults_path),
            "diagnose": not no_diagnose,
        }
        with _open_client(ctx.obj["server"], ctx.obj["cache_dir"]) as client:
            return _call(client, "/detect", payload)

    verdict = _guarded(run)
    click.echo(json.dumps(verdict, indent=2, sort_keys=True))
    sys.exit(EXIT_OK if verdict["detectable"] else EXIT_UNDETECTABLE)


@main.command()
@click.option("--topology", "topology_path", required=True, type=click.Path(exists=True))
@click.option("--force", "force_tokens", multiple=True, help="Require a fault, as kind:node (repeatable).")
@click.option("--exclude", "exclude_tokens", multiple=True, help="Ban a fault, as kind:node (repeatable).")
@click.option("--structures", "include_structures", is_flag=True, help="List the structures in the output.")
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.pass_context
def enumerate(ctx, topology_path, force_tokens, exclude_tokens, include_structures, out_dir) -> None:
    """Enumerate all detectable fault structures of a topology."""

    def run():
        payload = {
            "topology": _topology_payload(topology_path),
            "force": [_fault_token_entry(t) for t in force_tokens],
            "exclude": [_fault_token_entry(t) for t in exclude_tokens],
            "include_structures": include_structures,
        }
        with _open_client(ctx.obj["server"], ctx.obj["cache_dir"]) as client:
            return _call(client, "/enumerate", payload)

    result = _guarded(run)
    click.echo(
        f"candidates={result['n_candidates']} structure_size={result['structure_size']} "
        f"detectable={result['detectable']} undetectable={result['undetectable']}"
    )
    if include_structures:
        for labels in result["structures"]:
            click.echo(" ".join(labels))
    if out_dir:
        manifest = build_manifest(
            "enumerate",
            inputs={"topology": topology_path, "topology_sha256": _file_digest(topology_path)},
            fingerprint=result["fingerprint"],
            offline_seconds=result["offline_seconds"],
            extra={"counts": {"detectable": result["detectable"], "undetectable": result["undetectable"]}},
        )
        _write_json(Path(out_dir) / "manifest.json", manifest)


@main.command()
@click.option("--topology", "topology_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--window", default="daily", show_default=True)
@click.option("--eps-pos", default=None, type=float, help="Leak positivity slack override.")
@click.option("--eps-tie", default=None, type=float, help="Relative l1 tie tolerance override.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def estimate(ctx, topology_path, data_path, window, eps_pos, eps_tie, out_dir) -> None:
    """Estimate fault values per window; writes report, plots, manifest."""

    def run():
        payload = {
            "topology": _topology_payload(topology_path),
            "csv_text": Path(data_path).read_text(),
            "window": window,
            "eps_pos": eps_pos,
            "eps_tie": eps_tie,
        }
        with _open_client(ctx.obj["server"], ctx.obj["cache_dir"]) as client:
            return _call(client, "/estimate", payload)

    result = _guarded(run)
    out = Path(out_dir)
    report = [
        {k: w[k] for k in ("window", "minimal_solutions", "envelope", "flags", "zones")}
        for w in result["windows"]
    ]
    _write_json(out / "report.json", report)
    _write_plot_csvs(out, result["windows"])
    manifest = build_manifest(
        "estimate",
        inputs={
            "topology": topology_path,
            "topology_sha256": _file_digest(topology_path),
            "data": data_path,
            "data_sha256": _file_digest(data_path),
            "window": window,
        },
        fingerprint=result["fingerprint"],
        offline_seconds=result["timings"]["offline_seconds"],
        online_seconds=result["timings"]["online_seconds"],
        extra={"windows": len(result["windows"])},
    )
    _write_json(out / "manifest.json", manifest)
    click.echo(f"estimated {len(result['windows'])} windows -> {out}")


@main.command()
@click.option("--topology", "topology_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--window", default="daily", show_default=True)
@click.option("--lambda", "lam", default=0.05, show_default=True, type=float)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def baseline(ctx, topology_path, data_path, window, lam, out_dir) -> None:
    """Run the regularised quadratic baseline estimator per window."""

    def run():
        payload = {
            "topology": _topology_payload(topology_path),
            "csv_text": Path(data_path).read_text(),
            "window": window,
            "lambda": lam,
        }
        with _open_client(ctx.obj["server"], ctx.obj["cache_dir"]) as client:
            return _call(client, "/baseline", payload)

    result = _guarded(run)
    out = Path(out_dir)
    _write_json(out / "baseline.json", result["windows"])
    manifest = build_manifest(
        "baseline",
        inputs={
            "topology": topology_path,
            "topology_sha256": _file_digest(topology_path),
            "data": data_path,
            "data_sha256": _file_digest(data_path),
            "window": window,
            "lambda": lam,
        },
        fingerprint=result["fingerprint"],
        online_seconds=result["seconds"],
        extra={"windows": len(result["windows"])},
    )
    _write_json(out / "manifest.json", manifest)
    click.echo(f"baseline on {len(result['windows'])} windows -> {out}")


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def simulate(ctx, scenario_path, seed, out_dir) -> None:
    """Generate synthetic sensor data with ground truth labels."""

    def run():
        doc = load_json(scenario_path)
        if not isinstance(doc, dict):
            raise InputError(f"{scenario_path}: scenario must be a JSON object")
        topo_ref = doc.get("topology")
        if isinstance(topo_ref, str):
            path = Path(topo_ref)
            if not path.is_absolute():
                path = Path(scenario_path).parent / path
            doc = dict(doc, topology=topology_to_doc(load_topology(path)))
        payload = {"scenario": doc, "seed": seed}
        with _open_client(ctx.obj["server"], ctx.obj["cache_dir"]) as client:
            return _call(client, "/simulate", payload)

    result = _guarded(run)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "samples.csv").write_text(result["samples_csv"])
    _write_json(out / "ground_truth.json", result["ground_truth"])
    manifest = build_manifest(
        "simulate",
        inputs={
            "scenario": scenario_path,
            "scenario_sha256": _file_digest(scenario_path),
            "seed": seed,
        },
        fingerprint="",
        extra={"samples": result["samples_csv"].count("\n") - 1},
    )
    _write_json(out / "manifest.json", manifest)
    click.echo(f"simulated -> {out}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.pass_context
def serve(ctx, host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(ctx.obj["cache_dir"]), host=host, port=port)


if __name__ == "__main__":
    main()
