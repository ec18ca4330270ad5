"""
Synthetic data and reconstruction commands.

This module provides the click commands that create synthetic grasps and
turn multi-view 2D detections into 3D hand joints.

Commands:
- synth: generate a seeded synthetic grasp with its multi-view observation
- reconstruct: RANSAC joint reconstruction (+ second-pass pose rescue)
- fit-hand: fit shape and pose parameters to reconstructed joints
- sweep: reconstruction error over noise, outlier rate or camera count

Every command writes manifest.json next to its outputs.

Author: GraspKit Team
Version: 1.0.0
"""

import logging
import os
from dataclasses import replace
from typing import Any, Dict, Optional, Sequence

import click
import numpy as np

from commands.base import config_option, handles_errors, out_option, respond, seed_option, success
from commands.pipeline_config import resolve_config
from services.errors import ConfigError
from services.handmodel import fit_hand
from services.reconstruct import reconstruct_grasp
from services.synth import SHAPES, SWEEP_AXES, catalog_object, generate, summarize_sweep, sweep
from storage.formats import (
    GRASP_JOINTS,
    observation_from_dict,
    observation_to_dict,
    read_json,
    result_to_dict,
    skeletons_from_dict,
    skeletons_to_dict,
    transform_to_dict,
    write_grasp,
    write_json,
)
from storage.manifest import write_manifest

logger = logging.getLogger(__name__)

OBSERVATION_FILE = "observation.json"
RESULT_FILE = "result.json"
JOINTS_FILE = "joints.json"

# Dimensions used when only --shape is given.
DEFAULT_DIMENSIONS = {
    "sphere": (0.04,),
    "box": (0.06, 0.045, 0.09),
    "cylinder": (0.03, 0.1),
    "torus": (0.045, 0.016),
}


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}")


# =============================================================================
# SYNTH
# =============================================================================

@handles_errors
def run_synth(config_path: Optional[str], flags: Dict[str, Any], out_dir: str,
              object_name: Optional[str] = None) -> Dict[str, Any]:
    config = resolve_config(config_path, flags)
    scenario = config.seeded_scenario()
    if object_name:
        scenario = replace(scenario, object=catalog_object(object_name), object_id=object_name)
    result = generate(scenario)

    write_json(os.path.join(out_dir, "scenario.json"), scenario.to_dict())
    write_json(os.path.join(out_dir, OBSERVATION_FILE), observation_to_dict(result.observation))
    write_grasp(out_dir, result.grasp)
    write_json(os.path.join(out_dir, "truth.json"), {
        "hands": {h.handedness: {"beta": h.beta, "theta": h.theta} for h in result.hands},
        "world_T_object": [transform_to_dict(t) for t in result.true_poses],
        "outlier_frames": list(result.outlier_frames),
        "corrupted_detections": [list(k) for k in result.corrupted_detections],
    })
    write_manifest(out_dir, "synth", config.to_dict(), [config_path] if config_path else [])
    logger.info(f"synth: wrote {len(result.observation.detections)} detections to {out_dir}")
    return success(out=out_dir, detections=len(result.observation.detections),
                   vertices=len(result.mesh.vertices), outlier_frames=list(result.outlier_frames))


@click.command("synth")
@config_option
@seed_option
@out_option
@click.option("--shape", type=click.Choice(SHAPES), default=None, help="Object primitive.")
@click.option("--dims", default=None, help="Comma-separated object dimensions in meters.")
@click.option("--object", "object_name", default=None, help="Catalog object (overrides --shape).")
@click.option("--hands", type=click.Choice(["right", "left", "both"]), default=None)
@click.option("--cameras", type=click.IntRange(min=1), default=None)
@click.option("--frames", type=click.IntRange(min=2), default=None)
@click.option("--noise", type=click.FloatRange(min=0.0), default=None, help="Keypoint noise sigma (px).")
@click.option("--outliers", type=click.FloatRange(0.0, 1.0), default=None, help="Fraction of corrupted frame poses.")
@click.option("--corrupted", type=click.FloatRange(0.0, 1.0), default=None,
              help="Fraction of corrupted frame-camera detections.")
@click.option("--dropout", type=click.FloatRange(0.0, 1.0), default=None, help="Per-keypoint dropout rate.")
def synth_command(config_path, seed, out_dir, shape, dims, object_name, hands, cameras, frames, noise,
                  outliers, corrupted, dropout):
    """Generate a synthetic grasp, its contact map and multi-view detections."""
    obj = None
    if shape or dims:
        try:
            obj = {"shape": shape or "sphere",
                   "dimensions": _float_list(dims) if dims else DEFAULT_DIMENSIONS[shape or "sphere"]}
        except ConfigError as e:
            raise click.BadParameter(str(e), param_hint="--dims")
    flags = {
        "seed": seed,
        "scenario": {
            "object": obj,
            "hands": None if hands is None else (["right", "left"] if hands == "both" else [hands]),
            "cameras": cameras,
            "frames": frames,
            "noise": {"pixel_sigma": noise, "outlier_fraction": outliers,
                      "corrupted_fraction": corrupted, "dropout_rate": dropout},
        },
    }
    respond(run_synth(config_path, flags, out_dir, object_name))


# =============================================================================
# RECONSTRUCT
# =============================================================================

@handles_errors
def run_reconstruct(config_path: Optional[str], flags: Dict[str, Any], in_dir: str, out_dir: str) -> Dict[str, Any]:
    config = resolve_config(config_path, flags)
    observation_path = os.path.join(in_dir, OBSERVATION_FILE)
    observation = observation_from_dict(read_json(observation_path), observation_path)
    results = reconstruct_grasp(observation, config.ransac, rescue=config.rescue, refine=config.refine)
    payload = result_to_dict(results)
    inputs = [observation_path]

    truth_path = os.path.join(in_dir, GRASP_JOINTS)
    if os.path.exists(truth_path):
        truth = {s.handedness: s.joints for s in skeletons_from_dict(read_json(truth_path), truth_path)}
        errors = {hand: float(np.linalg.norm(r.joints - truth[hand], axis=1).mean())
                  for hand, r in results.items() if hand in truth}
        if errors:
            payload["mean_error_m_per_hand"] = errors
            payload["mean_error_m"] = float(np.mean(list(errors.values())))
        inputs.append(truth_path)

    write_json(os.path.join(out_dir, RESULT_FILE), payload)
    write_json(os.path.join(out_dir, JOINTS_FILE), skeletons_to_dict([r.skeleton for r in results.values()]))
    write_manifest(out_dir, "reconstruct", config.to_dict(), inputs + ([config_path] if config_path else []))
    summary = {hand: {"inliers": len(r.inliers), "outlier_frames": list(r.outlier_frames),
                      "rescued": sorted(r.rescued_poses)} for hand, r in results.items()}
    return success(out=out_dir, hands=summary, mean_error_m=payload.get("mean_error_m"))


@click.command("reconstruct")
@config_option
@click.option("--in", "in_dir", type=click.Path(file_okay=False), required=True,
              help="Directory holding observation.json (gt_joints.json is used for errors when present).")
@out_option
@click.option("--inlier-px", type=click.FloatRange(min=0.0, min_open=True), default=None)
@click.option("--iterations", type=click.IntRange(min=1), default=None)
@click.option("--seed", type=click.IntRange(min=0), default=None, help="RANSAC seed.")
@click.option("--rescue/--no-rescue", default=None, help="Second-pass pose rescue of outlier frames.")
@click.option("--refine/--no-refine", default=None, help="Re-optimize joints after rescue.")
def reconstruct_command(config_path, in_dir, out_dir, inlier_px, iterations, seed, rescue, refine):
    """Reconstruct 3D hand joints from multi-view detections."""
    flags = {"rescue": rescue, "refine": refine,
             "ransac": {"inlier_px": inlier_px, "iterations": iterations, "seed": seed}}
    respond(run_reconstruct(config_path, flags, in_dir, out_dir))


# =============================================================================
# FIT-HAND
# =============================================================================

@handles_errors
def run_fit_hand(config_path: Optional[str], joints_path: str, out_dir: str, sigma: float) -> Dict[str, Any]:
    config = resolve_config(config_path)
    targets = skeletons_from_dict(read_json(joints_path), joints_path)
    fits = {t.handedness: fit_hand(t, sigma=sigma) for t in targets}
    write_json(os.path.join(out_dir, "fit.json"), {"hands": {
        hand: {"beta": f.hand.beta, "theta": f.hand.theta, "joints": f.skeleton.joints,
               "residuals_m": f.residuals, "cost": f.cost, "evaluations": f.evaluations}
        for hand, f in sorted(fits.items())
    }})
    write_manifest(out_dir, "fit-hand", {**config.to_dict(), "sigma": sigma},
                   [joints_path] + ([config_path] if config_path else []))
    return success(out=out_dir, max_residual_m={h: float(f.residuals.max()) for h, f in fits.items()})


@click.command("fit-hand")
@config_option
@click.option("--joints", "joints_path", type=click.Path(dir_okay=False), required=True,
              help="Skeleton JSON ({\"hands\": {hand: 21x3}}), e.g. joints.json from reconstruct.")
@out_option
@click.option("--sigma", type=click.FloatRange(min=0.0, min_open=True), default=10.0, show_default=True,
              help="Shape prior width.")
def fit_hand_command(config_path, joints_path, out_dir, sigma):
    """Fit shape and pose parameters to 3D joints."""
    respond(run_fit_hand(config_path, joints_path, out_dir, sigma))


# =============================================================================
# SWEEP
# =============================================================================

@handles_errors
def run_sweep(config_path: Optional[str], flags: Dict[str, Any], axis: str, values: Sequence[float],
              seeds: int, out_dir: str) -> Dict[str, Any]:
    config = resolve_config(config_path, flags)
    seed_list = [config.seed + k for k in range(seeds)]
    frame = sweep(config.seeded_scenario(), axis, values, seed_list, config.ransac)
    summary = summarize_sweep(frame)
    os.makedirs(out_dir, exist_ok=True)
    frame.to_csv(os.path.join(out_dir, "sweep.csv"), index=False, float_format="%.10g")
    summary.to_csv(os.path.join(out_dir, "summary.csv"), index=False, float_format="%.10g")
    write_manifest(out_dir, "sweep", {**config.to_dict(), "axis": axis, "values": list(values), "seeds": seed_list},
                   [config_path] if config_path else [])
    failed = int((frame["status"] != "success").sum()) if not frame.empty else 0
    return success(out=out_dir, cells=len(frame), failed=failed)


@click.command("sweep")
@config_option
@seed_option
@out_option
@click.option("--axis", type=click.Choice(SWEEP_AXES), required=True)
@click.option("--values", required=True, help="Comma-separated values of the swept parameter.")
@click.option("--seeds", type=click.IntRange(min=1), default=1, show_default=True,
              help="Number of consecutive seeds per value.")
def sweep_command(config_path, seed, out_dir, axis, values, seeds):
    """Reconstruction error as a function of noise, outlier rate or camera count."""
    try:
        parsed = _float_list(values)
    except ConfigError as e:
        raise click.BadParameter(str(e), param_hint="--values")
    respond(run_sweep(config_path, {"seed": seed}, axis, parsed, seeds, out_dir))


COMMANDS = [synth_command, reconstruct_command, fit_hand_command, sweep_command]
