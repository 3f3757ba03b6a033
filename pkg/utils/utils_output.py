"""
utils_output.py - artifact writers for experiment runs.

CSV files go through pandas with a fixed column order and '\\n' line endings.
Figures are SVGs drawn with matplotlib and seaborn on the Agg backend with a
fixed hash salt and no date metadata, so reruns produce identical bytes.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import hashlib
import json
import pathlib
from typing import Any, Iterable, Mapping, Optional

# Import external packages
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

# Import functions from local modules
from utils.utils_config import MANIFEST_FORMAT  # noqa: E402
from utils.utils_logger import logger  # noqa: E402

#####################################
# Default Configurations
#####################################

plt.rcParams["svg.hashsalt"] = "dbgnn"
plt.rcParams["svg.fonttype"] = "none"

# Heatmaps keep at most this many step rows; longer runs are strided.
MAX_HEATMAP_ROWS = 400

#####################################
# Writers
#####################################


def write_csv(frame: pd.DataFrame, path: pathlib.Path) -> pathlib.Path:
    """
    Write a frame without its index, creating parent folders.

    Args:
        frame (pd.DataFrame): Rows to write.
        path (pathlib.Path): Target CSV file.

    Returns:
        pathlib.Path: The path written.
    """
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_json(doc: Mapping[str, Any], path: pathlib.Path) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, allow_nan=True) + "\n")
    logger.info(f"Wrote {path}")
    return path


def _save_svg(fig, path: pathlib.Path) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Wrote figure {path}")
    return path


def write_heatmap_svg(
    values: np.ndarray,
    path: pathlib.Path,
    title: str,
    xlabel: str = "node",
    ylabel: str = "step",
) -> pathlib.Path:
    """Linear grayscale heatmap, white at 0 and black at the maximum."""
    values = np.asarray(values, dtype=np.float64)
    stride = max(1, int(np.ceil(values.shape[0] / MAX_HEATMAP_ROWS)))
    shown = values[::stride]
    vmax = float(np.max(values)) if values.size and np.max(values) > 0 else 1.0
    fig, ax = plt.subplots(figsize=(8, 5))
    sns.heatmap(shown, ax=ax, cmap="Greys", vmin=0.0, vmax=vmax, xticklabels=False, yticklabels=False)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel if stride == 1 else f"{ylabel} (every {stride})")
    return _save_svg(fig, path)


def write_series_svg(
    frame: pd.DataFrame,
    x: str,
    y: str,
    path: pathlib.Path,
    title: str,
    hue: Optional[str] = None,
    log_y: bool = False,
) -> pathlib.Path:
    fig, ax = plt.subplots(figsize=(8, 5))
    sns.lineplot(data=frame, x=x, y=y, hue=hue, ax=ax, errorbar=None)
    if log_y:
        ax.set_yscale("symlog", linthresh=1e-12)
    ax.set_title(title)
    return _save_svg(fig, path)


#####################################
# Hashes and Manifest
#####################################


def file_sha256(path: pathlib.Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    out_dir: pathlib.Path,
    command: str,
    config: Mapping[str, Any],
    artifacts: Iterable[pathlib.Path],
    exit_code: int = 0,
) -> pathlib.Path:
    """manifest.json with the resolved config, seed and artifact hashes."""
    out_dir = pathlib.Path(out_dir)
    doc = {
        "format": MANIFEST_FORMAT,
        "command": command,
        "seed": config.get("seed"),
        "config": dict(config),
        "exit_code": exit_code,
        "artifacts": {
            pathlib.Path(p).name: file_sha256(p) for p in sorted(artifacts, key=str)
        },
    }
    return write_json(doc, out_dir.joinpath("manifest.json"))
