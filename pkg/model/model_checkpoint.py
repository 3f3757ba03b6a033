"""
model_checkpoint.py - save and load DBGNN checkpoints as JSON.

Format "dbgnn-ckpt-v1":

    {
      "format": "dbgnn-ckpt-v1",
      "model_config": {...},
      "train_config": {...} | null,
      "epoch": 12,
      "params": {"<name>": {"shape": [r, c], "data": [...]}},
      "optimizer": {"step": n, "beta1": .., "beta2": .., "eps": .., "m": {...}, "v": {...}} | null,
      "best": {"epoch": 9, "score": .., "stale": 3, "params": {...}} | null
    }

Arrays are stored row-major; Python float repr keeps every value exact.
Parameter shapes are checked against the model config on load.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import json
import pathlib
from dataclasses import dataclass
from typing import Any, Mapping, Optional

# Import external packages
import numpy as np

# Import functions from local modules
from core.core_errors import ConfigError
from model.model_dbgnn import DBGNNModel, ModelConfig, init_model
from model.model_train import BestState, OptimizerState, TrainConfig
from utils.utils_logger import logger

CHECKPOINT_FORMAT = "dbgnn-ckpt-v1"

#####################################
# Types
#####################################


@dataclass(frozen=True)
class Checkpoint:
    model: DBGNNModel
    epoch: int
    optimizer: Optional[OptimizerState] = None
    train_config: Optional[TrainConfig] = None
    best: Optional[BestState] = None


#####################################
# Array Encoding
#####################################


def _encode_arrays(arrays: Mapping[str, np.ndarray]) -> dict[str, Any]:
    return {
        name: {"shape": list(arr.shape), "data": [float(v) for v in np.ravel(arr)]}
        for name, arr in arrays.items()
    }


def _decode_arrays(data: Mapping[str, Any]) -> dict[str, np.ndarray]:
    arrays = {}
    for name, entry in data.items():
        try:
            arrays[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"Malformed checkpoint array '{name}': {e}") from e
    return arrays


def _build_model(config: ModelConfig, data: Mapping[str, Any]) -> DBGNNModel:
    """
    Raises:
        ConfigError: on missing or unknown parameter names.
        DimensionMismatchError: when a stored shape disagrees with the config.
    """
    params = _decode_arrays(data)
    template = init_model(config, np.random.default_rng(0))
    unknown = set(params) - set(template.params)
    if unknown:
        raise ConfigError(f"Unknown parameters in checkpoint: {sorted(unknown)}")
    return template.with_params(params)


#####################################
# Save and Load
#####################################


def checkpoint_document(
    model: DBGNNModel,
    epoch: int,
    optimizer: Optional[OptimizerState] = None,
    train_config: Optional[TrainConfig] = None,
    best: Optional[BestState] = None,
) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model.config.as_dict(),
        "train_config": train_config.as_dict() if train_config else None,
        "epoch": int(epoch),
        "params": _encode_arrays(model.params),
        "optimizer": None,
        "best": None,
    }
    if optimizer is not None:
        doc["optimizer"] = {
            "step": optimizer.step,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "m": _encode_arrays(optimizer.m),
            "v": _encode_arrays(optimizer.v),
        }
    if best is not None:
        doc["best"] = {
            "epoch": int(best.epoch),
            "score": float(best.score),
            "stale": int(best.stale),
            "params": _encode_arrays(best.model.params),
        }
    return doc


def save_checkpoint(
    path: pathlib.Path,
    model: DBGNNModel,
    epoch: int,
    optimizer: Optional[OptimizerState] = None,
    train_config: Optional[TrainConfig] = None,
    best: Optional[BestState] = None,
) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = checkpoint_document(model, epoch, optimizer, train_config, best)
    path.write_text(json.dumps(doc, indent=1) + "\n")
    logger.info(f"Checkpoint written to {path} (epoch {epoch})")
    return path


def load_checkpoint(path: pathlib.Path) -> Checkpoint:
    path = pathlib.Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"Checkpoint not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Checkpoint {path} is not valid JSON: {e}") from e

    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(
            f"Unsupported checkpoint format {doc.get('format')!r}, expected {CHECKPOINT_FORMAT}."
        )
    config = ModelConfig.from_dict(doc["model_config"])
    model = _build_model(config, doc["params"])

    optimizer = None
    if doc.get("optimizer"):
        o = doc["optimizer"]
        optimizer = OptimizerState(
            m=_decode_arrays(o["m"]),
            v=_decode_arrays(o["v"]),
            step=int(o["step"]),
            beta1=float(o["beta1"]),
            beta2=float(o["beta2"]),
            eps=float(o["eps"]),
        )
    train_config = None
    if doc.get("train_config"):
        train_config = TrainConfig.from_dict(doc["train_config"])
    best = None
    if doc.get("best"):
        b = doc["best"]
        best = BestState(
            model=_build_model(config, b["params"]),
            epoch=int(b["epoch"]),
            score=float(b["score"]),
            stale=int(b["stale"]),
        )
    logger.info(f"Loaded checkpoint {path} (epoch {doc['epoch']})")
    return Checkpoint(
        model=model,
        epoch=int(doc["epoch"]),
        optimizer=optimizer,
        train_config=train_config,
        best=best,
    )
