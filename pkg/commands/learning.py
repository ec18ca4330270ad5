"""
Learned contact model commands.

Commands:
- train: fit the per-point MLP on the training side of a split
- predict: rotation-averaged contact prediction for one grasp
"""

import logging
import os
from typing import Any, Dict, Optional, Tuple

import click
import pandas as pd

from commands.base import (
    config_option,
    corpus_option,
    generate_option,
    handles_errors,
    load_corpus,
    out_option,
    respond,
    seed_option,
    success,
)
from commands.pipeline_config import resolve_config
from services.analysis import split
from services.errors import FeatureError
from services.features import FAMILIES, FAMILY_DIMS
from services.learner import LEARNING_RATES, build_training_set, predict, predict_voxels, train
from services.metrics import mean_auc, rebalanced_auc
from storage.formats import load_checkpoint, read_grasp, save_checkpoint, save_mesh, write_json
from storage.manifest import write_manifest

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "model.gkm"


def _family_for(input_dim: int, recorded: str = "") -> Tuple[str, bool]:
    """Feature family of a checkpoint and whether it expects the occupancy column."""
    for family in [recorded] if recorded else FAMILIES:
        dims = FAMILY_DIMS.get(family)
        if dims == input_dim:
            return family, False
        if dims is not None and dims + 1 == input_dim:
            return family, True
    if recorded:
        raise FeatureError(f"checkpoint family {recorded!r} does not take {input_dim} columns")
    raise FeatureError(f"no feature family has {input_dim} columns")


# =============================================================================
# TRAIN
# =============================================================================

@handles_errors
def run_train(config_path: Optional[str], flags: Dict[str, Any], corpus_dir: Optional[str],
              generate_n: Optional[int], validation: int, out_dir: str) -> Dict[str, Any]:
    config = resolve_config(config_path, flags)
    train_config = config.train
    grasps, _, inputs = load_corpus(corpus_dir, generate_n, config.seeded_scenario(), config.seed)
    sides = split(grasps, config.split)
    training = list(sides["train"])
    if not training:
        training = list(grasps)
        logger.warning(f"train: the {config.split} split leaves no training grasps, using all {len(training)}")
    held = training[-validation:] if 0 < validation < len(training) else []
    fitting = training[:len(training) - len(held)]

    x, labels = build_training_set(fitting, config.family, train_config)
    held_set = build_training_set(held, config.family, train_config) if held else None
    result = train(x, labels, train_config, validation=held_set)

    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, CHECKPOINT_FILE), result.model, train_config.digest(), config.family)
    pd.DataFrame(result.history).to_csv(os.path.join(out_dir, "history.csv"), index=False, float_format="%.10g")

    report: Dict[str, Any] = {"family": config.family, "best_epoch": result.best_epoch,
                              "train_grasps": len(fitting), "validation_grasps": len(held),
                              "rows": len(x)}
    test = list(sides["test"])
    if test:
        pairs = [(predict(result.model, g, config.family, train_config.rotation_step_deg, config.temperature)[1],
                  g.contact) for g in test]
        report["test_grasps"] = len(test)
        report["test_auc"] = mean_auc(pairs, lam=config.rebalance_lambda)
    write_json(os.path.join(out_dir, "train.json"), report)
    write_manifest(out_dir, "train", config.to_dict(), inputs + ([config_path] if config_path else []),
                   extra={"config_hash": train_config.digest()})
    return success(out=out_dir, **report)


@click.command("train")
@config_option
@seed_option
@out_option
@corpus_option
@generate_option
@click.option("--family", type=click.Choice(FAMILIES), default=None)
@click.option("--split", type=click.Choice(["object", "participant"]), default=None)
@click.option("--lr", type=click.Choice([str(r) for r in LEARNING_RATES]), default=None, help="Learning rate.")
@click.option("--epochs", type=click.IntRange(min=1), default=None)
@click.option("--hidden", type=click.IntRange(min=1), multiple=True, help="Hidden layer width (repeatable).")
@click.option("--no-dropout", is_flag=True, default=False, help="Disable occlusion dropout augmentation.")
@click.option("--validation", type=click.IntRange(min=0), default=0, show_default=True,
              help="Training grasps held back for early stopping.")
def train_command(config_path, seed, out_dir, corpus_dir, generate_n, family, split, lr, epochs, hidden,
                  no_dropout, validation):
    """Train the contact MLP on rotated, occlusion-augmented features."""
    flags = {
        "seed": seed, "family": family, "split": split,
        "train": {"seed": seed, "learning_rate": None if lr is None else float(lr), "epochs": epochs,
                  "hidden": list(hidden) or None, "dropout": False if no_dropout else None},
    }
    respond(run_train(config_path, flags, corpus_dir, generate_n, validation, out_dir))


# =============================================================================
# PREDICT
# =============================================================================

@handles_errors
def run_predict(config_path: Optional[str], flags: Dict[str, Any], model_path: str, grasp_dir: str,
                out_dir: str) -> Dict[str, Any]:
    config = resolve_config(config_path, flags)
    model, config_hash, recorded = load_checkpoint(model_path)
    family, voxels = _family_for(model.input_dim, recorded)
    grasp = read_grasp(grasp_dir)
    if voxels:
        distribution, contact = predict_voxels(model, grasp, family, config.voxel_resolution,
                                               config.train.rotation_step_deg, config.temperature)
    else:
        distribution, contact = predict(model, grasp, family, config.train.rotation_step_deg, config.temperature)

    save_mesh(os.path.join(out_dir, "prediction.ply"), grasp.mesh, contact)
    write_json(os.path.join(out_dir, "prediction.json"), {"contact": contact.values,
                                                          "bin_probabilities": distribution.probabilities})
    auc = rebalanced_auc(contact, grasp.contact, config.rebalance_lambda).auc
    write_manifest(out_dir, "predict", {**config.to_dict(), "family": family, "voxels": voxels},
                   [model_path, grasp_dir] + ([config_path] if config_path else []),
                   extra={"model_config_hash": config_hash})
    return success(out=out_dir, family=family, voxels=voxels, points=len(contact), auc=auc)


@click.command("predict")
@config_option
@out_option
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True, help="Checkpoint from train.")
@click.option("--grasp", "grasp_dir", type=click.Path(file_okay=False), required=True, help="Grasp directory.")
@click.option("--temperature", type=click.FloatRange(min=0.0, min_open=True), default=None,
              help="Annealed-mean decoding temperature.")
def predict_command(config_path, out_dir, model_path, grasp_dir, temperature):
    """Predict a contact map for a grasp and score it against the stored ground truth."""
    respond(run_predict(config_path, {"temperature": temperature}, model_path, grasp_dir, out_dir))


COMMANDS = [train_command, predict_command]
