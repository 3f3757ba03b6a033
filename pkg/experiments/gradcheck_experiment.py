"""
gradcheck_experiment.py - compare tape gradients with central finite differences.

A random model, inputs and targets are drawn from the seed. Every parameter
block passes when its relative error is below the tolerance. inject_fault
corrupts the adjoint rule of one primitive, which must make the check fail.

Artifacts:
    gradcheck.csv   block, rel_error, passed
    manifest.json

Exit code 1 when any block fails.
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
from core.core_graph import build_graph
from model.model_dbgnn import ModelConfig, init_model
from model.model_train import gradient_check, make_batch
from utils.utils_logger import logger
from utils.utils_output import write_csv, write_manifest

COMMAND = "gradcheck"

# Input widths of the random check problem.
NODE_INPUTS = 2
EDGE_INPUTS = 2


def run(config: Mapping[str, Any]) -> int:
    out = pathlib.Path(config["out"])
    seed = config["seed"]
    rng = np.random.default_rng(seed)
    g = build_graph(config["graph"], rng)
    model = init_model(
        ModelConfig(d_n_in=NODE_INPUTS, d_e_in=EDGE_INPUTS, d_out=1, **config["model"]), rng
    )
    batch = make_batch(
        g,
        rng.normal(size=(g.num_nodes, NODE_INPUTS)),
        rng.normal(size=(g.num_directed_edges, EDGE_INPUTS)),
        rng.normal(size=(g.num_nodes, 1)),
    )
    fault = config.get("inject_fault")
    errors = gradient_check(
        model,
        batch,
        h=config.get("h", 1e-5),
        loss_fn=config.get("loss", "mse"),
        seed=seed,
        train_mode=config.get("train_mode", True),
        adjoint_faults=(fault,) if fault else (),
    )
    tol = config.get("tolerance", 1e-4)
    frame = pd.DataFrame(
        {
            "block": list(errors),
            "rel_error": list(errors.values()),
            "passed": [e < tol for e in errors.values()],
        }
    )
    artifacts = [write_csv(frame, out.joinpath("gradcheck.csv"))]
    failed = frame.loc[~frame["passed"], "block"].tolist()
    code = 0
    if failed:
        logger.error(f"Gradient check failed for {len(failed)} blocks: {failed}")
        code = 1
    else:
        logger.info(f"All {len(frame)} parameter blocks pass at tolerance {tol:g}")
    write_manifest(out, COMMAND, config, artifacts, code)
    return code
