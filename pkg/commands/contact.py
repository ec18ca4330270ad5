"""
Contact processing, features, heuristic baseline, evaluation and analysis commands.

Commands:
- contact-normalize: thermal values to a [0, 1] contact map
- features: per-point (or per-voxel) feature matrix of a grasp
- heuristic: calibrated proximity baseline over a corpus
- eval: rebalanced AuC, joint accuracy and penetration statistics
- analyze: dataset statistics over a grasp corpus

Author: GraspKit Team
Version: 1.0.0
"""

import logging
import os
from typing import Any, Dict, List, Optional

import click
import numpy as np
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
from services.analysis import (
    INTENTS,
    LEVELS,
    NUM_PARTS,
    active_areas,
    align_corpus,
    cluster_statistics,
    contact_area,
    contact_to_hand_distance,
    contrasting_pairs,
    grasp_association,
    hand_contact_probability,
    joint_stddev,
    split,
)
from services.contact import CONTACT_THRESHOLD, ContactMap, binarize, normalize_thermal
from services.errors import AnalysisError, ConfigError, MalformedInputError
from services.features import FAMILIES, compute_features, occlusion_dropout, voxel_features
from services.geom import PointCloud, voxelize
from services.handmodel import build_proxy
from services.heuristic import Calibration, calibrate_corpus, hands_psi, predict, uncalibrated
from services.metrics import joint_accuracy, penetration_stats, rebalanced_auc
from storage.formats import (
    read_contact,
    read_grasp,
    read_json,
    read_ply,
    save_mesh,
    skeletons_from_dict,
    write_features,
    write_json,
    write_ply,
)
from storage.manifest import write_manifest

logger = logging.getLogger(__name__)


def _inputs(*paths: Optional[str]) -> List[str]:
    return [p for p in paths if p]


def _grasp_points(grasp) -> PointCloud:
    return PointCloud(grasp.mesh.vertices, grasp.mesh.vertex_normals)


# =============================================================================
# CONTACT-NORMALIZE
# =============================================================================

@handles_errors
def run_contact_normalize(config_path: Optional[str], in_path: str, out_dir: str, tau: float) -> Dict[str, Any]:
    config = resolve_config(config_path)
    if in_path.lower().endswith(".json"):
        payload = read_json(in_path)
        raw = payload.get("thermal") if isinstance(payload, dict) else payload
        try:
            raw = np.asarray(raw, dtype=np.float64).reshape(-1)
        except (TypeError, ValueError) as e:
            raise MalformedInputError(in_path, f"invalid thermal values: {e}")
        contact = normalize_thermal(raw)
        write_json(os.path.join(out_dir, "contact.json"), {"contact": contact.values})
    else:
        ply = read_ply(in_path)
        if ply.contact is None:
            raise MalformedInputError(in_path, "PLY needs a per-vertex `contact` property holding raw thermal values")
        contact = normalize_thermal(ply.contact)
        write_ply(os.path.join(out_dir, "contact.ply"), ply.vertices, ply.normals, contact, ply.faces)
    mask = binarize(contact, tau)
    write_manifest(out_dir, "contact-normalize", {**config.to_dict(), "tau": tau}, _inputs(in_path, config_path))
    return success(out=out_dir, points=len(contact), contacted=int(mask.sum()), contacted_fraction=float(mask.mean()))


@click.command("contact-normalize")
@config_option
@click.option("--in", "in_path", type=click.Path(dir_okay=False), required=True,
              help="PLY with raw values in the `contact` property, or a JSON array.")
@out_option
@click.option("--tau", type=click.FloatRange(0.0, 1.0), default=CONTACT_THRESHOLD, show_default=True,
              help="Contact threshold for the reported contacted fraction.")
def contact_normalize_command(config_path, in_path, out_dir, tau):
    """Map raw thermal values to contact with a sigmoid (coldest 0.05, warmest 0.95)."""
    respond(run_contact_normalize(config_path, in_path, out_dir, tau))


# =============================================================================
# FEATURES
# =============================================================================

@handles_errors
def run_features(config_path: Optional[str], flags: Dict[str, Any], grasp_dir: str, out_dir: str,
                 voxels: bool, dropout: bool) -> Dict[str, Any]:
    config = resolve_config(config_path, flags)
    grasp = read_grasp(grasp_dir)
    if voxels:
        grid = voxelize(grasp.mesh, config.voxel_resolution)
        matrix = voxel_features(grid, config.family, grasp.hands, grasp.mesh)
    else:
        matrix = compute_features(config.family, _grasp_points(grasp), grasp.hands)
    if dropout:
        matrix = occlusion_dropout(matrix, grasp.hands, seed=config.seed)
    path = os.path.join(out_dir, "features.f32")
    write_features(path, matrix)
    write_manifest(out_dir, "features", {**config.to_dict(), "voxels": voxels, "dropout": dropout},
                   _inputs(grasp_dir, config_path))
    return success(out=out_dir, family=config.family, rows=len(matrix), columns=matrix.dims)


@click.command("features")
@config_option
@seed_option
@out_option
@click.option("--grasp", "grasp_dir", type=click.Path(file_okay=False), required=True, help="Grasp directory.")
@click.option("--family", type=click.Choice(FAMILIES), default=None)
@click.option("--voxels", is_flag=True, help="Compute on the occupancy grid instead of mesh vertices.")
@click.option("--resolution", type=click.IntRange(min=2), default=None, help="Voxel grid resolution.")
@click.option("--dropout", is_flag=True, help="Apply seeded occlusion dropout.")
def features_command(config_path, seed, out_dir, grasp_dir, family, voxels, resolution, dropout):
    """Hand-derived features for every object point of a grasp."""
    flags = {"seed": seed, "family": family, "voxel_resolution": resolution}
    respond(run_features(config_path, flags, grasp_dir, out_dir, voxels, dropout))


# =============================================================================
# HEURISTIC
# =============================================================================

@handles_errors
def run_heuristic(config_path: Optional[str], flags: Dict[str, Any], corpus_dir: Optional[str],
                  generate_n: Optional[int], calibration_path: Optional[str], out_dir: str) -> Dict[str, Any]:
    config = resolve_config(config_path, flags)
    grasps, names, inputs = load_corpus(corpus_dir, generate_n, config.seeded_scenario(), config.seed)
    fields = [hands_psi(_grasp_points(g), [build_proxy(h) for h in g.hands], config.psi_cutoff) for g in grasps]
    held_out = {id(g) for g in split(grasps, config.split)["test"]}

    if calibration_path:
        calibration = Calibration.from_dict(read_json(calibration_path))
        calibrations = [calibration] * len(grasps)
    elif config.calibration_mode == "per-grasp":
        # every grasp is scored with its own fit
        calibrations = calibrate_corpus(fields, [g.contact for g in grasps], config.calibration_samples,
                                        config.seed, "per-grasp")
    else:
        train = [k for k, g in enumerate(grasps) if id(g) not in held_out] or list(range(len(grasps)))
        calibration = calibrate_corpus([fields[k] for k in train], [grasps[k].contact for k in train],
                                       config.calibration_samples, config.seed)
        calibrations = [calibration] * len(grasps)

    rows = []
    for name, grasp, field, calib in zip(names, grasps, fields, calibrations):
        prediction = predict(field, calib)
        write_json(os.path.join(out_dir, "predictions", f"{name}.json"), {"contact": prediction.values})
        rows.append({
            "grasp": name, "object": grasp.object_id, "intent": grasp.intent,
            "held_out": id(grasp) in held_out,
            "auc_calibrated": rebalanced_auc(prediction, grasp.contact, config.rebalance_lambda).auc,
            "auc_uncalibrated": rebalanced_auc(uncalibrated(field), grasp.contact, config.rebalance_lambda).auc,
        })
    report = pd.DataFrame(rows)
    os.makedirs(out_dir, exist_ok=True)
    report.to_csv(os.path.join(out_dir, "heuristic.csv"), index=False, float_format="%.10g")
    if config.calibration_mode == "per-grasp" and not calibration_path:
        write_json(os.path.join(out_dir, "calibration.json"),
                   {"per_grasp": {n: c.to_dict() for n, c in zip(names, calibrations)}})
    else:
        write_json(os.path.join(out_dir, "calibration.json"), calibration.to_dict())
    write_manifest(out_dir, "heuristic", config.to_dict(), inputs + _inputs(calibration_path, config_path))
    scored = report[report["held_out"]] if report["held_out"].any() else report
    return success(out=out_dir, grasps=len(report), evaluated=len(scored),
                   auc_calibrated=float(scored["auc_calibrated"].mean()),
                   auc_uncalibrated=float(scored["auc_uncalibrated"].mean()))


@click.command("heuristic")
@config_option
@seed_option
@out_option
@corpus_option
@generate_option
@click.option("--split", type=click.Choice(["object", "participant"]), default=None,
              help="Calibrate on the training side of this split.")
@click.option("--cutoff", type=click.FloatRange(min=0.0, min_open=True), default=None, help="Proximity cutoff (m).")
@click.option("--samples", type=click.IntRange(min=2), default=None, help="Calibration sample count.")
@click.option("--mode", type=click.Choice(["corpus", "per-grasp"]), default=None)
@click.option("--calibration", "calibration_path", type=click.Path(dir_okay=False), default=None,
              help="Reuse a calibration.json instead of fitting.")
def heuristic_command(config_path, seed, out_dir, corpus_dir, generate_n, split, cutoff, samples, mode,
                      calibration_path):
    """Calibrated proximity-to-hand contact baseline."""
    flags = {"seed": seed, "split": split, "psi_cutoff": cutoff, "calibration_samples": samples,
             "calibration_mode": mode}
    respond(run_heuristic(config_path, flags, corpus_dir, generate_n, calibration_path, out_dir))


# =============================================================================
# EVAL
# =============================================================================

@handles_errors
def run_eval(config_path: Optional[str], flags: Dict[str, Any], pred_path: Optional[str], gt_path: Optional[str],
             pred_joints: Optional[str], gt_joints: Optional[str], grasp_dir: Optional[str],
             out_dir: Optional[str]) -> Dict[str, Any]:
    config = resolve_config(config_path, flags)
    if not any([pred_path, pred_joints, grasp_dir]):
        raise ConfigError("nothing to evaluate: give --pred/--gt, --pred-joints/--gt-joints or --grasp")
    report: Dict[str, Any] = {}
    if pred_path or gt_path:
        if not (pred_path and gt_path):
            raise ConfigError("--pred and --gt go together")
        auc = rebalanced_auc(read_contact(pred_path), read_contact(gt_path), config.rebalance_lambda)
        report["contact"] = auc.to_dict()
        report["auc"] = round(auc.auc, 2)
    if pred_joints or gt_joints:
        if not (pred_joints and gt_joints):
            raise ConfigError("--pred-joints and --gt-joints go together")
        predicted = {s.handedness: s for s in skeletons_from_dict(read_json(pred_joints), pred_joints)}
        truth = {s.handedness: s for s in skeletons_from_dict(read_json(gt_joints), gt_joints)}
        report["joints"] = {}
        for hand in sorted(set(predicted) & set(truth)):
            error_mm, pck = joint_accuracy(predicted[hand], truth[hand])
            report["joints"][hand] = {"mean_error_mm": error_mm, "pck_auc": pck}
    if grasp_dir:
        grasp = read_grasp(grasp_dir)
        report["penetration"] = penetration_stats([build_proxy(h) for h in grasp.hands], grasp.mesh).to_dict()
    if out_dir:
        write_json(os.path.join(out_dir, "eval.json"), report)
        write_manifest(out_dir, "eval", config.to_dict(),
                       _inputs(pred_path, gt_path, pred_joints, gt_joints, grasp_dir, config_path))
    return success(**report)


@click.command("eval")
@config_option
@click.option("--pred", "pred_path", type=click.Path(dir_okay=False), default=None, help="Predicted contact map.")
@click.option("--gt", "gt_path", type=click.Path(dir_okay=False), default=None, help="Ground-truth contact map.")
@click.option("--pred-joints", type=click.Path(dir_okay=False), default=None)
@click.option("--gt-joints", type=click.Path(dir_okay=False), default=None)
@click.option("--grasp", "grasp_dir", type=click.Path(file_okay=False), default=None,
              help="Grasp directory for hand-object penetration statistics.")
@click.option("--lam", type=click.FloatRange(0.0, 1.0), default=None, help="Rebalancing smoothing.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def eval_command(config_path, pred_path, gt_path, pred_joints, gt_joints, grasp_dir, lam, out_dir):
    """Contact AuC, joint accuracy and penetration statistics."""
    respond(run_eval(config_path, {"rebalance_lambda": lam}, pred_path, gt_path, pred_joints, gt_joints,
                     grasp_dir, out_dir))


# =============================================================================
# ANALYZE
# =============================================================================

def _slug(text: str) -> str:
    return "_".join(str(text).lower().split())


def _contact_to_hand_mm(grasp) -> float:
    try:
        distance = contact_to_hand_distance(grasp.contact, grasp.mesh, [build_proxy(h) for h in grasp.hands])
    except AnalysisError:
        return float("nan")
    return distance * 1000.0


def _write_active_areas(out_dir: str, object_id: str, intent: str, members: list) -> List[str]:
    """One PLY heatmap per hand part with any activity; empty when the grasps do not share a mesh."""
    try:
        per_part = [active_areas(members, part) for part in range(NUM_PARTS)]
    except AnalysisError as e:
        logger.info(f"analyze: no active areas for {object_id}/{intent}: {e}")
        return []
    written = []
    for part, values in enumerate(per_part):
        if not np.any(values > 0):
            continue
        name = f"active_{_slug(object_id)}_{intent}_part{part:02d}.ply"
        save_mesh(os.path.join(out_dir, name), members[0].mesh, ContactMap(values))
        written.append(name)
    return written


@handles_errors
def run_analyze(config_path: Optional[str], flags: Dict[str, Any], corpus_dir: Optional[str],
                generate_n: Optional[int], out_dir: str) -> Dict[str, Any]:
    config = resolve_config(config_path, flags)
    grasps, names, inputs = load_corpus(corpus_dir, generate_n, config.seeded_scenario(), config.seed)
    grasps.validate_catalog()
    os.makedirs(out_dir, exist_ok=True)

    probabilities = hand_contact_probability(grasps, config.level, by_intent=True)
    parts = pd.DataFrame({f"p_{intent}": values for intent, values in probabilities.items()})
    parts.index.name = "part"

    area_rows = []
    for name, grasp in zip(names, grasps):
        association = grasp_association(grasp, "phalange")
        area_rows.append({"grasp": name, "object": grasp.object_id, "intent": grasp.intent,
                          "participant": grasp.participant,
                          "area_fingertips_cm2": contact_area(grasp, "fingertips", association),
                          "area_whole_hand_cm2": contact_area(grasp, "whole-hand", association),
                          "contact_to_hand_mm": _contact_to_hand_mm(grasp)})
    areas = pd.DataFrame(area_rows)

    diversity: Dict[str, Any] = {}
    stddev_rows = []
    heatmaps: List[str] = []
    contrasting: Dict[str, list] = {}
    by_object: Dict[str, list] = {}
    for name, grasp in zip(names, grasps):
        by_object.setdefault(grasp.object_id, []).append((name, grasp))
    for object_id, named in sorted(by_object.items()):
        for intent in INTENTS:
            chosen = [g for _, g in named if g.intent == intent]
            if not chosen:
                continue
            heatmaps += _write_active_areas(out_dir, object_id, intent, chosen)
            if len(chosen) < 2:
                continue
            aligned = align_corpus([g.hands[0] for g in chosen], chosen[0].symmetry_axis)
            per_joint, mean_std = joint_stddev(aligned)
            stddev_rows += [{"object": object_id, "intent": intent, "joint": j, "stddev_m": float(s)}
                            for j, s in enumerate(per_joint)]
            clusters = cluster_statistics([intent] * len(aligned), aligned, config.cluster_threshold)[intent]
            diversity.setdefault(object_id, {})[intent] = {
                "mean_joint_stddev_m": mean_std, "clusters": len(clusters.sizes),
                "mean_intra_cluster_distance": clusters.mean_intra_distance,
            }
        if len(named) >= 2:
            pairs = contrasting_pairs([g for _, g in named], config.pose_threshold, axis=named[0][1].symmetry_axis)
            contrasting[object_id] = [{"first": named[i][0], "second": named[j][0], "pose_distance": pose,
                                       "contact_distance": contact} for i, j, pose, contact in pairs]

    splits = {name: {side: len(s) for side, s in split(grasps, name).items()} for name in ("object", "participant")}
    summary = {
        "grasps": len(grasps),
        "level": config.level,
        "mean_area_cm2": {intent: {"fingertips": float(group["area_fingertips_cm2"].mean()),
                                   "whole_hand": float(group["area_whole_hand_cm2"].mean())}
                          for intent, group in areas.groupby("intent")},
        "mean_contact_to_hand_mm": float(areas["contact_to_hand_mm"].mean()),
        "diversity": diversity,
        "contrasting_pairs": contrasting,
        "active_areas": heatmaps,
        "splits": splits,
    }
    stddevs = pd.DataFrame(stddev_rows, columns=["object", "intent", "joint", "stddev_m"])
    parts.to_csv(os.path.join(out_dir, "part_probability.csv"), float_format="%.10g")
    areas.to_csv(os.path.join(out_dir, "contact_areas.csv"), index=False, float_format="%.10g")
    stddevs.to_csv(os.path.join(out_dir, "joint_stddev.csv"), index=False, float_format="%.10g")
    write_json(os.path.join(out_dir, "analysis.json"), summary)
    write_manifest(out_dir, "analyze", {**config.to_dict(), "generate": generate_n}, inputs + _inputs(config_path))
    return success(out=out_dir, grasps=len(grasps), splits=splits, active_areas=len(heatmaps))


@click.command("analyze")
@config_option
@seed_option
@out_option
@corpus_option
@generate_option
@click.option("--level", type=click.Choice(LEVELS), default=None, help="Hand part granularity.")
@click.option("--cluster-threshold", type=click.FloatRange(min=0.0, min_open=True), default=None)
@click.option("--pose-threshold", type=click.FloatRange(min=0.0, min_open=True), default=None,
              help="Aligned joint distance under which two grasps count as the same pose.")
def analyze_command(config_path, seed, out_dir, corpus_dir, generate_n, level, cluster_threshold, pose_threshold):
    """Part contact probabilities, contact areas, active areas, pose diversity and split sizes."""
    flags = {"seed": seed, "level": level, "cluster_threshold": cluster_threshold, "pose_threshold": pose_threshold}
    respond(run_analyze(config_path, flags, corpus_dir, generate_n, out_dir))


COMMANDS = [contact_normalize_command, features_command, heuristic_command, eval_command, analyze_command]
