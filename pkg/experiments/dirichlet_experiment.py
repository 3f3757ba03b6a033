"""
dirichlet_experiment.py - Dirichlet energy of an untrained DBGNN block against a
deep GCN, over several seeds.

Per seed s (base seed + s): random +-1 node inputs, unit edge inputs, a fresh
single-block model iterated for db.steps DB 1-steps, and a fresh GCN of
gcn.depth layers on the same inputs.

Artifacts:
    dirichlet.csv          step, dirichlet_energy, seed, model
    dirichlet_dbgnn.svg, dirichlet_gcn.svg
    report.json            per seed: minimum DBGNN energy, GCN last/first ratio
    manifest.json
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
from core.core_dynamics import StepperSpec, evolve
from core.core_graph import Graph, build_graph
from core.core_metrics import dirichlet_series
from model.model_dbgnn import ModelConfig, encode_inputs, init_model, layer_weights
from model.model_gcn import gcn_forward, init_gcn
from utils.utils_logger import logger
from utils.utils_output import write_csv, write_json, write_manifest, write_series_svg
from utils.utils_parallel import parallel_map

COMMAND = "dirichlet"

#####################################
# Per-seed Rollouts
#####################################


def db_energy(g: Graph, node_in: np.ndarray, db: Mapping[str, Any], rng: np.random.Generator) -> np.ndarray:
    """Dirichlet energy after each of db['steps'] DB 1-steps of an untrained block."""
    config = ModelConfig(
        K=1,
        T=db["steps"],
        hidden_n=db["hidden"],
        hidden_e=db["hidden"],
        dropout_n=0.0,
        dropout_e=0.0,
        nonlinearity=db.get("nonlinearity", "tanh"),
        spread=db["spread"],
        oscillatory=db["oscillatory"],
    )
    model = init_model(config, rng)
    state = encode_inputs(model, node_in, np.ones((g.num_directed_edges, 1)))
    traj = evolve(
        g,
        StepperSpec("db1s", nonlinearity=config.nonlinearity),
        layer_weights(model, 0),
        state,
        config.T,
        record_states=False,
    )
    return traj.dirichlet[1:]


def gcn_energy(g: Graph, node_in: np.ndarray, gcn: Mapping[str, Any], rng: np.random.Generator) -> np.ndarray:
    model = init_gcn(node_in.shape[1], gcn["hidden"], gcn["depth"], gcn["spread"], rng)
    return dirichlet_series(g, gcn_forward(model, g, node_in, gcn["depth"])).values


def run_seed(g: Graph, config: Mapping[str, Any], seed: int) -> dict[str, Any]:
    rng = np.random.default_rng(seed)
    node_in = rng.choice([-1.0, 1.0], size=(g.num_nodes, 1))
    db = db_energy(g, node_in, config["db"], rng)
    gcn = gcn_energy(g, node_in, config["gcn"], rng)
    ratio = float(gcn[-1] / gcn[0]) if gcn[0] > 0 else 0.0
    logger.info(f"seed {seed}: DBGNN min DE {db.min():.4f}, GCN last/first {ratio:.3e}")
    return {"seed": seed, "db": db, "gcn": gcn, "db_min": float(db.min()), "gcn_ratio": ratio}


#####################################
# Run
#####################################


def run(config: Mapping[str, Any]) -> int:
    out = pathlib.Path(config["out"])
    base = config["seed"]
    g = build_graph(config["graph"], np.random.default_rng(base))
    seeds = [base + s for s in range(config["seeds"])]

    results = parallel_map(lambda s: run_seed(g, config, s), seeds)

    frames = []
    for res in results:
        for name in ("db", "gcn"):
            series = res[name]
            frames.append(
                pd.DataFrame(
                    {
                        "step": np.arange(1, len(series) + 1),
                        "dirichlet_energy": series,
                        "seed": res["seed"],
                        "model": "dbgnn" if name == "db" else "gcn",
                    }
                )
            )
    frame = pd.concat(frames, ignore_index=True)
    artifacts = [write_csv(frame, out.joinpath("dirichlet.csv"))]
    artifacts.append(
        write_series_svg(
            frame[frame["model"] == "dbgnn"], "step", "dirichlet_energy",
            out.joinpath("dirichlet_dbgnn.svg"), "DBGNN Dirichlet energy (untrained)", hue="seed",
        )
    )
    artifacts.append(
        write_series_svg(
            frame[frame["model"] == "gcn"], "step", "dirichlet_energy",
            out.joinpath("dirichlet_gcn.svg"), "GCN Dirichlet energy", hue="seed", log_y=True,
        )
    )

    thresholds = {"db_min": 0.05, "gcn_ratio": 1e-3, "min_passing": 4, **config.get("thresholds", {})}
    db_pass = sum(r["db_min"] > thresholds["db_min"] for r in results)
    gcn_pass = sum(r["gcn_ratio"] < thresholds["gcn_ratio"] for r in results)
    needed = min(thresholds["min_passing"], len(results))
    passed = db_pass >= needed and gcn_pass >= needed
    doc = {
        "thresholds": thresholds,
        "seeds": [{"seed": r["seed"], "db_min": r["db_min"], "gcn_ratio": r["gcn_ratio"]} for r in results],
        "db_passing": db_pass,
        "gcn_passing": gcn_pass,
        "passed": passed,
    }
    artifacts.append(write_json(doc, out.joinpath("report.json")))

    code = 0
    if config.get("gate", False) and not passed:
        logger.error(f"Dirichlet claims failed: DBGNN {db_pass}, GCN {gcn_pass} of {len(results)} seeds")
        code = 1
    write_manifest(out, COMMAND, config, artifacts, code)
    return code
