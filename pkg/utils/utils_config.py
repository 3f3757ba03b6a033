"""
utils_config.py - environment settings, experiment config schemas and config
resolution for the experiment commands.

A resolved config is built in this order, later sources winning:

    built-in defaults <- preset (--preset) <- config file (--config) <- flags

Flags are --seed, --out and repeated --set dotted.key=JSON. A manifest.json
written by an earlier run is accepted as a config file.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import copy
import json
import os
import pathlib
from typing import Any, Iterable, Mapping, Optional

# Import external packages
from dotenv import load_dotenv
from jsonschema import Draft202012Validator

# Import functions from local modules
from core.core_errors import ConfigError
from utils.utils_logger import logger

load_dotenv()

#####################################
# Default Configurations
#####################################

PROJECT_ROOT = pathlib.Path(__file__).parent.parent
DATA_FOLDER = PROJECT_ROOT.joinpath("data")
PRESET_FOLDER = DATA_FOLDER.joinpath("presets")

MANIFEST_FORMAT = "dbgnn-manifest-v1"
COMMANDS = ("spectrum", "spread", "dirichlet", "train", "gradcheck")

#####################################
# Environment Getters
#####################################


def get_threads() -> int:
    """Upper bound on worker threads for independent rollouts and seeds."""
    raw = os.getenv("DBGNN_THREADS", "1")
    try:
        threads = max(1, int(raw))
    except ValueError:
        logger.warning(f"Ignoring DBGNN_THREADS={raw!r}, using 1")
        threads = 1
    logger.debug(f"Worker threads: {threads}")
    return threads


def get_output_dir() -> pathlib.Path:
    out = pathlib.Path(os.getenv("DBGNN_OUTPUT_DIR", "outputs"))
    logger.debug(f"Output root: {out}")
    return out


def get_eigen_cap() -> int:
    """Largest operator size the dense eigensolver accepts."""
    raw = os.getenv("DBGNN_EIGEN_CAP", "512")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"DBGNN_EIGEN_CAP must be an integer, got {raw!r}.") from None
    logger.debug(f"Eigensolver size cap: {cap}")
    return cap


#####################################
# Schemas
#####################################


def _obj(properties: Mapping[str, Any], required: Iterable[str] = ()) -> dict[str, Any]:
    return {
        "type": "object",
        "properties": dict(properties),
        "required": list(required),
        "additionalProperties": False,
    }


_INT1 = {"type": "integer", "minimum": 1}
_POS = {"type": "number", "exclusiveMinimum": 0}
_RATE = {"type": "number", "minimum": 0, "exclusiveMaximum": 1}
_NONLIN = {"enum": ["tanh", "relu", "identity"]}

GRAPH_SCHEMA = _obj(
    {
        "family": {"enum": ["path", "grid", "ladder", "random", "regular", "file"]},
        "size": _INT1,
        "rows": _INT1,
        "cols": _INT1,
        "degree": _INT1,
        "extra_edge_prob": {"type": "number", "minimum": 0, "maximum": 1},
        "path": {"type": "string"},
    },
    required=["family"],
)

STEPPER_SCHEMA = _obj(
    {
        "kind": {"enum": ["lindb", "db1s", "mpnn_linear", "mpnn_sigma"]},
        "nonlinearity": _NONLIN,
        "edge_nonlinearity": {"type": "boolean"},
        "dropout_rate": _RATE,
        "train_mode": {"type": "boolean"},
    },
    required=["kind"],
)

MODEL_SCHEMA = _obj(
    {
        "K": _INT1,
        "T": _INT1,
        "hidden_n": _INT1,
        "hidden_e": _INT1,
        "dropout_n": _RATE,
        "dropout_e": _RATE,
        "nonlinearity": _NONLIN,
        "pooling": {"enum": ["none", "mean"]},
        "head": {"type": "boolean"},
        "layer_kind": {"enum": ["db", "mpnn_sigma"]},
        "edge_nonlinearity": {"type": "boolean"},
        "spread": _POS,
        "oscillatory": {"type": "boolean"},
    },
    required=["K", "T", "hidden_n", "hidden_e"],
)

_COMMON = {"seed": {"type": "integer", "minimum": 0}, "out": {"type": "string"}}

SCHEMAS: dict[str, dict[str, Any]] = {
    "spectrum": _obj(
        {
            **_COMMON,
            "graph": GRAPH_SCHEMA,
            "n_graphs": _INT1,
            "b": {"type": "number"},
            "beta": {"type": "number"},
        },
        required=["seed", "graph", "n_graphs", "b", "beta"],
    ),
    "spread": _obj(
        {
            **_COMMON,
            "graph": GRAPH_SCHEMA,
            "d_n": _INT1,
            "d_e": _INT1,
            "weights": _obj(
                {"spread": _POS, "oscillatory": {"type": "boolean"}},
                required=["spread", "oscillatory"],
            ),
            "initial_state": {"enum": ["column", "point"]},
            "steps": {"oneOf": [_INT1, {"type": "null"}]},
            "wave_distance": _POS,
            "max_steps": _INT1,
            "steppers": {"type": "array", "items": STEPPER_SCHEMA, "minItems": 1},
            "threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "heatmaps": {"type": "boolean"},
        },
        required=["seed", "graph", "d_n", "d_e", "weights", "steppers"],
    ),
    "dirichlet": _obj(
        {
            **_COMMON,
            "graph": GRAPH_SCHEMA,
            "seeds": _INT1,
            "db": _obj(
                {
                    "hidden": _INT1,
                    "steps": _INT1,
                    "spread": _POS,
                    "oscillatory": {"type": "boolean"},
                    "nonlinearity": _NONLIN,
                },
                required=["hidden", "steps", "spread", "oscillatory"],
            ),
            "gcn": _obj(
                {"hidden": _INT1, "depth": _INT1, "spread": _POS},
                required=["hidden", "depth", "spread"],
            ),
            "thresholds": _obj(
                {
                    "db_min": {"type": "number", "minimum": 0},
                    "gcn_ratio": _POS,
                    "min_passing": _INT1,
                },
            ),
            "gate": {"type": "boolean"},
        },
        required=["seed", "graph", "seeds", "db", "gcn"],
    ),
    "train": _obj(
        {
            **_COMMON,
            "task": _obj(
                {
                    "kind": {"enum": ["distance_regression", "parity_source"]},
                    "family": {"enum": ["path", "grid", "ladder"]},
                    "size": {"type": "integer", "minimum": 8},
                    "n_graphs": _INT1,
                },
                required=["kind", "family", "size", "n_graphs"],
            ),
            "model": MODEL_SCHEMA,
            "training": _obj(
                {
                    "epochs": _INT1,
                    "batch_size": _INT1,
                    "max_lr": {"type": "number", "minimum": 0},
                    "initial_div": _POS,
                    "final_div": _POS,
                    "warmup": {"type": "number", "minimum": 0, "maximum": 1},
                    "loss": {"enum": ["mse", "huber"]},
                    "metric": {"enum": ["r2", "mae"]},
                    "patience": {"type": "integer", "minimum": 0},
                },
                required=["epochs", "batch_size", "max_lr"],
            ),
            "seeds": _INT1,
            "keep_best": _INT1,
            "eval_sizes": {"type": "array", "items": {"type": "integer", "minimum": 8}},
            "baseline": {"type": "boolean"},
            "trace_dirichlet": {"type": "boolean"},
            "dirichlet_samples": _INT1,
            "resume": {"oneOf": [{"type": "string"}, {"type": "null"}]},
        },
        required=["seed", "task", "model", "training"],
    ),
    "gradcheck": _obj(
        {
            **_COMMON,
            "graph": GRAPH_SCHEMA,
            "model": MODEL_SCHEMA,
            "h": _POS,
            "tolerance": _POS,
            "loss": {"enum": ["mse", "huber"]},
            "train_mode": {"type": "boolean"},
            "inject_fault": {
                "oneOf": [
                    {
                        "enum": [
                            "matmul", "add", "scale", "relu", "tanh", "identity",
                            "gather_diff", "scatter_sum", "dropout", "mean_pool",
                            "mse", "huber",
                        ]
                    },
                    {"type": "null"},
                ]
            },
        },
        required=["seed", "graph", "model"],
    ),
}

#####################################
# Built-in Defaults
#####################################

DEFAULTS: dict[str, dict[str, Any]] = {
    "spectrum": {
        "seed": 0,
        "graph": {"family": "path", "size": 3},
        "n_graphs": 1,
        "b": 1.0,
        "beta": 0.5,
    },
    "spread": {
        "seed": 0,
        "graph": {"family": "grid", "rows": 5, "cols": 20},
        "d_n": 4,
        "d_e": 4,
        "weights": {"spread": 0.1, "oscillatory": True},
        "initial_state": "column",
        "steps": 200,
        "wave_distance": 20.0,
        "max_steps": 40000,
        "steppers": [{"kind": "lindb"}, {"kind": "mpnn_linear"}],
        "threshold": 0.01,
        "heatmaps": True,
    },
    "dirichlet": {
        "seed": 0,
        "graph": {"family": "regular", "size": 20, "degree": 3},
        "seeds": 5,
        "db": {"hidden": 16, "steps": 1000, "spread": 0.1, "oscillatory": True, "nonlinearity": "tanh"},
        "gcn": {"hidden": 16, "depth": 100, "spread": 0.1},
        "thresholds": {"db_min": 0.05, "gcn_ratio": 1e-3, "min_passing": 4},
        "gate": False,
    },
    "train": {
        "seed": 0,
        "task": {"kind": "distance_regression", "family": "path", "size": 32, "n_graphs": 16},
        "model": {
            "K": 2,
            "T": 68,
            "hidden_n": 113,
            "hidden_e": 109,
            "dropout_n": 1.4e-2,
            "dropout_e": 1.9e-3,
            "nonlinearity": "tanh",
            "pooling": "none",
            "head": False,
            "layer_kind": "db",
            "edge_nonlinearity": True,
            "spread": 0.1,
            "oscillatory": True,
        },
        "training": {
            "epochs": 2000,
            "batch_size": 50,
            "max_lr": 6.1e-4,
            "initial_div": 32.0,
            "final_div": 5.8e5,
            "warmup": 0.3,
            "loss": "mse",
            "metric": "r2",
            "patience": 0,
        },
        "seeds": 1,
        "eval_sizes": [],
        "baseline": False,
        "trace_dirichlet": False,
        "dirichlet_samples": 1,
        "resume": None,
    },
    "gradcheck": {
        "seed": 0,
        "graph": {"family": "random", "size": 10},
        "model": {
            "K": 2,
            "T": 4,
            "hidden_n": 8,
            "hidden_e": 8,
            "dropout_n": 0.1,
            "dropout_e": 0.1,
            "nonlinearity": "tanh",
            "pooling": "none",
            "head": False,
            "layer_kind": "db",
            "edge_nonlinearity": True,
            "spread": 0.3,
            "oscillatory": True,
        },
        "h": 1e-5,
        "tolerance": 1e-4,
        "loss": "mse",
        "train_mode": True,
        "inject_fault": None,
    },
}

#####################################
# Merging and Overrides
#####################################


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    """
    Recursive dict merge; lists and scalars in override replace base values.
    A mapping whose 'family' differs from the base one replaces it whole.
    """
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if (
            isinstance(value, Mapping)
            and isinstance(merged.get(key), Mapping)
            and value.get("family", merged[key].get("family")) == merged[key].get("family")
        ):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_set(assignment: str) -> tuple[list[str], Any]:
    """Split 'a.b.c=JSON' into (['a', 'b', 'c'], value). Non-JSON values stay strings."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects dotted.key=value, got {assignment!r}.")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return [part for part in key.strip().split(".")], value


def apply_set(config: Mapping[str, Any], assignment: str) -> dict[str, Any]:
    path, value = parse_set(assignment)
    override: dict[str, Any] = {}
    node = override
    for part in path[:-1]:
        node = node.setdefault(part, {})
    node[path[-1]] = value
    return deep_merge(config, override)


#####################################
# Presets and Config Files
#####################################


def list_presets(command: str) -> list[str]:
    folder = PRESET_FOLDER.joinpath(command)
    return sorted(p.stem for p in folder.glob("*.json"))


def load_preset(command: str, name: str) -> dict[str, Any]:
    path = PRESET_FOLDER.joinpath(command, f"{name}.json")
    if not path.exists():
        raise ConfigError(
            f"Unknown {command} preset '{name}'. Available: {list_presets(command)}"
        )
    logger.info(f"Loading preset {command}/{name}")
    return json.loads(path.read_text())


def load_config_file(command: str, path: pathlib.Path) -> dict[str, Any]:
    """Read a JSON config; a manifest contributes its resolved config."""
    path = pathlib.Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object.")
    if doc.get("format") == MANIFEST_FORMAT:
        if doc.get("command") != command:
            raise ConfigError(
                f"Manifest {path} belongs to '{doc.get('command')}', not '{command}'."
            )
        logger.info(f"Re-using resolved config from manifest {path}")
        return doc["config"]
    return doc


#####################################
# Validation and Resolution
#####################################


def validate_config(command: str, config: Mapping[str, Any]) -> None:
    """Raise ConfigError listing every schema violation."""
    if command not in SCHEMAS:
        raise ConfigError(f"Unknown command '{command}', expected one of {COMMANDS}.")
    validator = Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.path))
    if errors:
        details = "; ".join(
            f"{'.'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors
        )
        raise ConfigError(f"Invalid {command} config: {details}")


def resolve_config(
    command: str,
    preset: Optional[str] = None,
    config_path: Optional[pathlib.Path] = None,
    seed: Optional[int] = None,
    out: Optional[str] = None,
    sets: Iterable[str] = (),
) -> dict[str, Any]:
    """Merge every config source for command and validate the result."""
    if command not in DEFAULTS:
        raise ConfigError(f"Unknown command '{command}', expected one of {COMMANDS}.")
    config = copy.deepcopy(DEFAULTS[command])
    if preset:
        config = deep_merge(config, load_preset(command, preset))
    if config_path:
        config = deep_merge(config, load_config_file(command, config_path))
    if seed is not None:
        config["seed"] = int(seed)
    if out is not None:
        config["out"] = str(out)
    for assignment in sets:
        config = apply_set(config, assignment)
    if "out" not in config:
        config["out"] = str(get_output_dir().joinpath(command if not preset else f"{command}_{preset}"))
    validate_config(command, config)
    logger.info(f"Resolved {command} config: {json.dumps(config, sort_keys=True)}")
    return config
