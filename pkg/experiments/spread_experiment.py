"""
spread_experiment.py - feature spreading from a localized initial state.

All steppers start from the same initial state and share one weight draw.
MPNN steppers reuse the DB weights (W_n <- W_ne, W_e <- W_en, beta_n <- W_beta_n).

Artifacts per stepper label:
    activation_<label>.csv   step, node_id, activation
    heatmap_<label>.svg      steps x nodes, linear grayscale
and for the whole run:
    fronts.csv               stepper, node_id, arrival   (empty arrival = never reached)
    summary.csv              stepper, steps, front_slope, reached_nodes
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
from core.core_dynamics import (
    StepperSpec,
    Trajectory,
    evolve,
    init_weights,
    point_initial_state,
    spreading_initial_state,
    wave_crossing_steps,
)
from core.core_graph import build_graph
from core.core_metrics import front_arrival, front_slope
from utils.utils_logger import logger
from utils.utils_output import write_csv, write_heatmap_svg, write_manifest
from utils.utils_parallel import parallel_map

COMMAND = "spread"

#####################################
# Helpers
#####################################


def unique_labels(specs: list[StepperSpec]) -> list[str]:
    labels, seen = [], set()
    for k, spec in enumerate(specs):
        label = spec.label if spec.label not in seen else f"{spec.label}_{k}"
        seen.add(label)
        labels.append(label)
    return labels


#####################################
# Run
#####################################


def run(config: Mapping[str, Any]) -> int:
    out = pathlib.Path(config["out"])
    seed = config["seed"]
    rng = np.random.default_rng(seed)
    g = build_graph(config["graph"], rng)
    d_n, d_e = config["d_n"], config["d_e"]
    w = init_weights(
        d_n, d_e, config["weights"]["spread"], config["weights"]["oscillatory"], rng
    )
    if config.get("initial_state", "column") == "column":
        s0 = spreading_initial_state(g, d_n, d_e, rng)
    else:
        s0 = point_initial_state(g, d_n, d_e, rng)

    steps = config.get("steps")
    if steps is None:
        steps = wave_crossing_steps(w, config.get("wave_distance", 20.0), config.get("max_steps", 40000))
    specs = [StepperSpec(**s) for s in config["steppers"]]
    labels = unique_labels(specs)
    logger.info(f"Spreading on {g.num_nodes} nodes for {steps} steps: {labels}")

    def rollout(k: int) -> Trajectory:
        return evolve(
            g, specs[k], w, s0, steps, rng=np.random.default_rng((seed, k)), record_states=False
        )

    trajectories = parallel_map(rollout, range(len(specs)))

    threshold = config.get("threshold", 0.01)
    artifacts = []
    fronts, summary = [], []
    for label, traj in zip(labels, trajectories):
        artifacts.append(write_csv(traj.activation_frame(), out.joinpath(f"activation_{label}.csv")))
        if config.get("heatmaps", True):
            artifacts.append(
                write_heatmap_svg(traj.activations, out.joinpath(f"heatmap_{label}.svg"), f"Feature activation: {label}")
            )
        arrivals = front_arrival(traj, threshold)
        fronts.append(
            pd.DataFrame(
                {
                    "stepper": label,
                    "node_id": np.arange(len(arrivals)),
                    "arrival": pd.array(
                        [None if np.isnan(a) else int(a) for a in arrivals], dtype="Int64"
                    ),
                }
            )
        )
        slope = front_slope(arrivals)
        reached = int(np.sum(np.isfinite(arrivals)))
        summary.append({"stepper": label, "steps": steps, "front_slope": slope, "reached_nodes": reached})
        logger.info(f"{label}: front slope {slope:.3f}, {reached}/{g.num_nodes} nodes reached")

    artifacts.append(write_csv(pd.concat(fronts, ignore_index=True), out.joinpath("fronts.csv")))
    artifacts.append(
        write_csv(
            pd.DataFrame(summary, columns=["stepper", "steps", "front_slope", "reached_nodes"]),
            out.joinpath("summary.csv"),
        )
    )
    write_manifest(out, COMMAND, config, artifacts)
    return 0
