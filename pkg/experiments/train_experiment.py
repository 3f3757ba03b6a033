"""
train_experiment.py - train a DBGNN on a synthetic long-range task.

Artifacts:
    training.csv            epoch, train_loss, val_loss, metric, lr
    checkpoint.json         best-validation model
    last.json               final model with optimizer and best-model state, for resume
    report.json             best epoch and train/val/test metrics
    seeds.csv               (seeds > 1) one row per initialization, kept or not
    ood.csv                 (eval_sizes) seed, size, loss, r2, mae on larger task graphs
    baseline_training.csv   (baseline: true) equal-depth MPNN-sigma model
    trained_dirichlet.csv   (trace_dirichlet: true) step, dirichlet_energy, seed, sample
                            through the trained first block on held-out samples
    trained_dirichlet.svg
    manifest.json

With seeds = n the model is trained from n initializations (seed, seed + 1, ...)
on the same task. The keep_best runs with the lowest best validation loss are
kept; training.csv and the checkpoints come from the best of them, and
report.json averages the kept runs.

With resume set to a last.json path, training continues from its epoch,
optimizer state and best model up to training.epochs.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import dataclasses
import pathlib
import time
from typing import Any, Mapping, Sequence

# Import external packages
import numpy as np
import pandas as pd

# Import functions from local modules
from core.core_dynamics import StepperSpec, evolve
from core.core_errors import ConfigError
from model.model_checkpoint import load_checkpoint, save_checkpoint
from model.model_dbgnn import DBGNNModel, ModelConfig, encode_inputs, init_model, layer_weights, total_steps
from model.model_train import (
    SPLITS,
    SyntheticTask,
    TrainConfig,
    TrainingReport,
    evaluate_all,
    make_longrange_task,
    train,
)
from utils.utils_logger import logger
from utils.utils_output import write_csv, write_json, write_manifest, write_series_svg
from utils.utils_parallel import parallel_map

COMMAND = "train"
METRICS = ("loss", "r2", "mae")

#####################################
# Helpers
#####################################


def held_out(task: SyntheticTask) -> tuple[int, ...]:
    return task.splits["test"] or task.splits["val"] or task.splits["train"]


def trained_dirichlet(
    runs: Sequence[tuple[int, DBGNNModel]], task: SyntheticTask, samples: int = 1
) -> pd.DataFrame:
    """
    Dirichlet energy through the trained first block.

    One series per (seed, held-out sample); the first `samples` held-out graphs
    are traced for every model.
    """
    frames = []
    for seed, model in runs:
        for i in held_out(task)[:samples]:
            state = encode_inputs(model, task.node_inputs[i], task.edge_inputs[i])
            traj = evolve(
                task.graphs[i],
                StepperSpec("db1s", nonlinearity=model.config.nonlinearity),
                layer_weights(model, 0),
                state,
                model.config.T,
                record_states=False,
            )
            frames.append(
                pd.DataFrame(
                    {
                        "step": np.arange(len(traj.dirichlet)),
                        "dirichlet_energy": traj.dirichlet,
                        "seed": seed,
                        "sample": int(i),
                    }
                )
            )
    return pd.concat(frames, ignore_index=True)


def metrics_doc(report: TrainingReport) -> dict[str, Any]:
    return {
        "best_epoch": report.best_epoch,
        "epochs_run": report.epochs_run,
        "stopped_early": report.stopped_early,
        "metrics": report.final_metrics,
    }


def rank_runs(reports: Sequence[TrainingReport]) -> list[int]:
    """Run indices by best validation loss, ties by order; NaN scores go last."""
    def key(i: int) -> tuple[float, int]:
        score = reports[i].best_score
        return (score if np.isfinite(score) else np.inf, i)

    return sorted(range(len(reports)), key=key)


def seeds_frame(seeds: Sequence[int], reports: Sequence[TrainingReport], kept: Sequence[int]) -> pd.DataFrame:
    rows = []
    for i, (seed, report) in enumerate(zip(seeds, reports)):
        row = {"seed": seed, "best_epoch": report.best_epoch, "best_score": report.best_score}
        for split in SPLITS:
            for metric in METRICS:
                row[f"{split}_{metric}"] = report.final_metrics[split][metric]
        row["kept"] = i in kept
        rows.append(row)
    return pd.DataFrame(rows)


def kept_means(frame: pd.DataFrame) -> dict[str, dict[str, float]]:
    kept = frame[frame["kept"]]
    return {
        split: {metric: float(kept[f"{split}_{metric}"].mean()) for metric in METRICS}
        for split in SPLITS
    }


def ood_frame(
    runs: Sequence[tuple[int, DBGNNModel]], task_spec: Mapping[str, Any], sizes: Sequence[int], seed: int, loss_fn: str
) -> pd.DataFrame:
    """Evaluate trained models on every graph of the same task built at other sizes."""
    rows = []
    for size in sizes:
        task = make_longrange_task(task_spec["kind"], task_spec["family"], size, task_spec["n_graphs"], seed)
        for run_seed, model in runs:
            rows.append({"seed": run_seed, "size": int(size), **evaluate_all(model, task, loss_fn)})
            logger.info(
                f"seed {run_seed} on {task_spec['family']}-{size}: "
                f"R2 {rows[-1]['r2']:.4f}, MAE {rows[-1]['mae']:.4f}"
            )
    return pd.DataFrame(rows, columns=["seed", "size", *METRICS])


#####################################
# Run
#####################################


def run(config: Mapping[str, Any]) -> int:
    out = pathlib.Path(config["out"])
    seed = config["seed"]
    t = config["task"]
    n_seeds = config.get("seeds", 1)
    keep = min(config.get("keep_best", n_seeds), n_seeds)
    task = make_longrange_task(t["kind"], t["family"], t["size"], t["n_graphs"], seed)
    model_config = ModelConfig(d_n_in=1, d_e_in=1, d_out=1, **config["model"])

    started = time.perf_counter()
    if config.get("resume"):
        if n_seeds != 1:
            raise ConfigError("resume continues a single run; set seeds to 1.")
        ckpt = load_checkpoint(pathlib.Path(config["resume"]))
        logger.info(f"Resuming from epoch {ckpt.epoch}")
        seeds, start_epoch = [seed], ckpt.epoch
        reports = [
            train(
                ckpt.model,
                task,
                TrainConfig(seed=seed, **config["training"]),
                ckpt.optimizer,
                start_epoch,
                best=ckpt.best,
            )
        ]
    else:
        seeds, start_epoch = [seed + s for s in range(n_seeds)], 0
        logger.info(f"Training {n_seeds} initialization(s), keeping the best {keep}")
        reports = parallel_map(
            lambda s: train(
                init_model(model_config, np.random.default_rng(s)),
                task,
                TrainConfig(seed=s, **config["training"]),
            ),
            seeds,
        )
    logger.info(f"Training finished in {time.perf_counter() - started:.1f} s")

    ranked = rank_runs(reports)
    kept = ranked[:keep]
    primary = reports[kept[0]]
    train_config = TrainConfig(seed=seeds[kept[0]], **config["training"])
    logger.info(
        f"Best initialization: seed {seeds[kept[0]]}. Model: {primary.model.num_parameters} parameters, "
        f"{total_steps(primary.model)} steps ({model_config.K} blocks of {model_config.T})"
    )

    artifacts = [write_csv(primary.history, out.joinpath("training.csv"))]
    artifacts.append(
        save_checkpoint(
            out.joinpath("checkpoint.json"), primary.best_model, primary.best_epoch, train_config=train_config
        )
    )
    artifacts.append(
        save_checkpoint(
            out.joinpath("last.json"),
            primary.model,
            start_epoch + primary.epochs_run,
            primary.optimizer,
            train_config,
            primary.best_state,
        )
    )
    doc = {"dbgnn": {**metrics_doc(primary), "seed": seeds[kept[0]]}}
    kept_runs = [(seeds[i], reports[i].best_model) for i in kept]

    if n_seeds > 1:
        frame = seeds_frame(seeds, reports, kept)
        artifacts.append(write_csv(frame, out.joinpath("seeds.csv")))
        doc["seeds"] = {"runs": n_seeds, "kept": [seeds[i] for i in kept], "mean": kept_means(frame)}

    if config.get("eval_sizes"):
        ood = ood_frame(kept_runs, t, config["eval_sizes"], seed, train_config.loss)
        artifacts.append(write_csv(ood, out.joinpath("ood.csv")))
        doc["ood"] = {
            str(size): {metric: float(group[metric].mean()) for metric in METRICS}
            for size, group in ood.groupby("size", sort=True)
        }

    if config.get("baseline", False):
        base_config = dataclasses.replace(model_config, layer_kind="mpnn_sigma")
        base_report = train(
            init_model(base_config, np.random.default_rng(seed)), task, TrainConfig(seed=seed, **config["training"])
        )
        artifacts.append(write_csv(base_report.history, out.joinpath("baseline_training.csv")))
        doc["mpnn_sigma"] = metrics_doc(base_report)

    if config.get("trace_dirichlet", False) and model_config.layer_kind == "db":
        energy = trained_dirichlet(kept_runs, task, config.get("dirichlet_samples", 1))
        artifacts.append(write_csv(energy, out.joinpath("trained_dirichlet.csv")))
        artifacts.append(
            write_series_svg(
                energy, "step", "dirichlet_energy", out.joinpath("trained_dirichlet.svg"),
                "Trained DBGNN Dirichlet energy, mean over samples", hue="seed",
            )
        )
        by_step = energy.groupby("step", sort=True)["dirichlet_energy"].mean()
        doc["trained_dirichlet"] = {"mean_min": float(by_step.min()), "mean_last": float(by_step.iloc[-1])}

    artifacts.append(write_json(doc, out.joinpath("report.json")))
    for name in ("dbgnn", "mpnn_sigma"):
        if name in doc:
            val = doc[name]["metrics"]["val"]
            logger.info(f"{name}: best epoch {doc[name]['best_epoch']}, val R2 {val['r2']:.4f}, val MAE {val['mae']:.4f}")
    write_manifest(out, COMMAND, config, artifacts)
    return 0
