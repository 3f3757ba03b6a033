"""
spectrum_experiment.py - eigenvalues of the Dirac operator and the mass-gap check.

Artifacts:
    eigenvalues.csv   index, eigenvalue           (one graph)
                      graph, index, eigenvalue    (n_graphs > 1)
    report.json       per-graph spectral report and operator identity residuals
    manifest.json

Exit code 1 when any gated graph violates min |lambda| >= |beta|.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import pathlib
from typing import Any, Mapping

# Import external packages
import numpy as np
import pandas as pd

# Import functions from local modules
from core.core_dirac import assemble, eigendecompose, operator_identity_residuals, verify_spectral_claims
from core.core_graph import Graph, build_graph
from utils.utils_config import get_eigen_cap
from utils.utils_logger import logger
from utils.utils_output import write_csv, write_json, write_manifest
from utils.utils_parallel import parallel_map

COMMAND = "spectrum"

#####################################
# Run
#####################################


def analyze_graph(g: Graph, b: float, beta: float, cap: int) -> dict[str, Any]:
    op = assemble(g, b, beta)
    spectrum = eigendecompose(op, max_size=cap)
    report = verify_spectral_claims(spectrum, beta, g.num_nodes, g.num_edges)
    return {
        "nodes": g.num_nodes,
        "edges": g.num_edges,
        "eigenvalues": spectrum.eigenvalues,
        "sweeps": spectrum.sweeps,
        "report": report,
        "identities": operator_identity_residuals(g, b),
    }


def run(config: Mapping[str, Any]) -> int:
    out = pathlib.Path(config["out"])
    rng = np.random.default_rng(config["seed"])
    b, beta = float(config["b"]), float(config["beta"])
    graphs = [build_graph(config["graph"], rng) for _ in range(config["n_graphs"])]
    cap = get_eigen_cap()

    results = parallel_map(lambda g: analyze_graph(g, b, beta, cap), graphs)

    frames = []
    for k, res in enumerate(results):
        values = res["eigenvalues"]
        frame = pd.DataFrame({"index": np.arange(len(values)), "eigenvalue": values})
        if len(results) > 1:
            frame.insert(0, "graph", k)
        frames.append(frame)
        r = res["report"]
        logger.info(
            f"graph {k}: {res['nodes']} nodes, {res['edges']} edges, "
            f"pos {r.pos_count} neg {r.neg_count} zero {r.zero_count}, "
            f"min |lambda| {r.min_abs_nonkernel:.6f}, gap holds {r.gap_holds}"
        )

    artifacts = [write_csv(pd.concat(frames, ignore_index=True), out.joinpath("eigenvalues.csv"))]
    failed = [k for k, res in enumerate(results) if not res["report"].gap_holds]
    doc = {
        "b": b,
        "beta": beta,
        "gap_gated": beta != 0,
        "failed_graphs": failed,
        "graphs": [
            {
                "nodes": res["nodes"],
                "edges": res["edges"],
                "sweeps": res["sweeps"],
                **res["report"].as_dict(),
                "identities": res["identities"],
            }
            for res in results
        ],
    }
    artifacts.append(write_json(doc, out.joinpath("report.json")))

    code = 0
    if failed:
        logger.error(f"Mass gap violated on graphs {failed}")
        code = 1
    write_manifest(out, COMMAND, config, artifacts, code)
    return code
