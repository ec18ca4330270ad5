"""
Synthetic scenario tests: objects, hand placement, ground-truth contact,
detections and sweeps.
"""

from dataclasses import replace

import numpy as np
import pytest

from conftest import feasible
from services.analysis import OBJECT_CATALOG
from services.contact import binarize
from services.errors import ConfigError
from services.geom import RigidTransform, project, project_points
from services.handmodel import build_proxy, proxy_signed_distance
from services.synth import (
    CONTACT_FALLOFF,
    MAX_EDGE,
    SWEEP_COLUMNS,
    TOUCH_TOLERANCE,
    ObjectSpec,
    ScenarioNoise,
    SynthScenario,
    camera_rig,
    catalog_object,
    fingertip_gaps,
    generate,
    generate_corpus,
    ground_truth_contact,
    look_at,
    summarize_sweep,
    sweep,
    trajectory,
)


# =============================================================================
# OBJECTS
# =============================================================================

@pytest.mark.parametrize("spec, inside, outside", [
    (ObjectSpec("sphere", (0.04,)), [0.0, 0.0, 0.0], [0.05, 0.0, 0.0]),
    (ObjectSpec("box", (0.06, 0.04, 0.02)), [0.0, 0.0, 0.0], [0.0, 0.0, 0.02]),
    (ObjectSpec("cylinder", (0.03, 0.1)), [0.0, 0.0, 0.04], [0.04, 0.0, 0.0]),
    (ObjectSpec("torus", (0.05, 0.01)), [0.05, 0.0, 0.0], [0.0, 0.0, 0.0]),
])
def test_signed_distance_signs(spec, inside, outside):
    assert spec.sdf(inside) < 0
    assert spec.sdf(outside) > 0


def test_signed_distance_values():
    assert ObjectSpec("sphere", (0.04,)).sdf([0.1, 0.0, 0.0]) == pytest.approx(0.06)
    assert ObjectSpec("box", (0.06, 0.04, 0.02)).sdf([0.0, 0.0, 0.03]) == pytest.approx(0.02)
    assert ObjectSpec("cylinder", (0.03, 0.1)).sdf([0.0, 0.0, 0.0]) == pytest.approx(-0.03)
    assert ObjectSpec("torus", (0.05, 0.01)).sdf([0.05, 0.0, 0.0]) == pytest.approx(-0.01)


@pytest.mark.parametrize("shape, dims", [("sphere", (0.04,)), ("box", (0.06, 0.045, 0.09)), ("cylinder", (0.03, 0.1))])
def test_object_mesh_is_closed_and_fine(shape, dims):
    mesh = ObjectSpec(shape, dims).mesh()
    assert mesh.is_watertight
    edges = mesh.triangles - np.roll(mesh.triangles, 1, axis=1)
    assert np.linalg.norm(edges, axis=2).max() <= MAX_EDGE + 1e-9


@pytest.mark.parametrize("shape, dims", [("cone", (0.1,)), ("sphere", (0.04, 0.02)), ("box", (0.1, 0.0, 0.1)),
                                         ("torus", (0.02, 0.03))])
def test_invalid_objects(shape, dims):
    with pytest.raises(ConfigError):
        ObjectSpec(shape, dims)


def test_catalog_objects_are_stable():
    for name in OBJECT_CATALOG:
        assert catalog_object(name) == catalog_object(name)
    with pytest.raises(ConfigError):
        catalog_object("spoon")


# =============================================================================
# SCENARIOS
# =============================================================================

def test_scenario_validation():
    with pytest.raises(ConfigError):
        SynthScenario(frames=1)
    with pytest.raises(ConfigError):
        SynthScenario(cameras=0)
    with pytest.raises(ConfigError):
        SynthScenario(hands=("right", "right"))
    with pytest.raises(ConfigError):
        ScenarioNoise(pixel_sigma=-1.0)
    with pytest.raises(ConfigError):
        ScenarioNoise(outlier_fraction=1.5)


def test_scenario_dict_round_trip():
    scenario = SynthScenario(object=ObjectSpec("cylinder", (0.03, 0.1)), hands=("right", "left"),
                             noise=ScenarioNoise(pixel_sigma=2.0), seed=4)
    assert SynthScenario.from_dict(scenario.to_dict()) == scenario


def test_scenario_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        SynthScenario.from_dict({"frames": 10, "lighting": "studio"})


# =============================================================================
# HANDS AND CONTACT
# =============================================================================

def test_at_least_three_fingertips_touch(synthetic_grasp):
    gaps = fingertip_gaps(ObjectSpec(), synthetic_grasp.hands[0])
    assert np.sum(np.abs(gaps) <= TOUCH_TOLERANCE) >= 3


def test_cylinder_grasp_touches(cylinder_grasp):
    gaps = fingertip_gaps(ObjectSpec("cylinder", (0.03, 0.1)), cylinder_grasp.hands[0])
    assert np.sum(np.abs(gaps) <= TOUCH_TOLERANCE) >= 3


def test_contact_follows_proxy_falloff(synthetic_grasp):
    contact = synthetic_grasp.contact.values
    distance = proxy_signed_distance(build_proxy(synthetic_grasp.hands[0]), synthetic_grasp.mesh.vertices)
    np.testing.assert_allclose(contact, np.clip((CONTACT_FALLOFF - distance) / CONTACT_FALLOFF, 0.0, 1.0),
                               atol=1e-12)
    assert np.all(contact[distance >= CONTACT_FALLOFF] == 0.0)
    assert binarize(synthetic_grasp.contact).any()


def test_ground_truth_contact_takes_nearest_hand(synthetic_grasp, rest_hand):
    single = ground_truth_contact(synthetic_grasp.mesh, synthetic_grasp.hands)
    far = rest_hand.transformed(RigidTransform(np.eye(3), [0.0, 2.0, 0.0]))
    both = ground_truth_contact(synthetic_grasp.mesh, list(synthetic_grasp.hands) + [far])
    np.testing.assert_array_equal(both.values, single.values)


def test_grasp_record(synthetic_grasp):
    assert synthetic_grasp.intent == "use"
    assert synthetic_grasp.symmetry_axis == (0.0, 0.0, 1.0)
    assert len(synthetic_grasp.contact) == len(synthetic_grasp.mesh.vertices)


# =============================================================================
# CAMERAS AND DETECTIONS
# =============================================================================

def test_cameras_look_at_the_origin():
    for camera in camera_rig(4):
        pixel = project(np.zeros(3), camera.intrinsics, camera.extrinsics)
        np.testing.assert_allclose(pixel, [camera.intrinsics.cx, camera.intrinsics.cy], atol=1e-9)


def test_look_at_puts_target_on_the_optical_axis():
    position = np.array([0.3, -0.2, 0.5])
    camera = look_at(position)
    np.testing.assert_allclose(camera.apply(position), 0.0, atol=1e-12)
    target = camera.apply(np.zeros(3))
    np.testing.assert_allclose(target[:2], 0.0, atol=1e-12)
    assert target[2] == pytest.approx(np.linalg.norm(position))


def test_trajectory_is_seeded():
    first = trajectory(8, np.random.default_rng(0))
    second = trajectory(8, np.random.default_rng(0))
    assert len(first) == 8
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.as_matrix(), b.as_matrix())


def test_clean_detections_are_exact_projections(clean_capture):
    cameras = clean_capture.observation.camera_map
    for detection in clean_capture.observation.detections:
        camera = cameras[detection.camera_id]
        world = clean_capture.true_poses[detection.frame_id].apply(clean_capture.joints[detection.handedness])
        pixels, _ = project_points(world, camera.intrinsics, camera.extrinsics)
        np.testing.assert_allclose(detection.keypoints, pixels, atol=1e-9)
        np.testing.assert_array_equal(detection.confidence, 1.0)


def small(**noise) -> SynthScenario:
    return SynthScenario(frames=10, noise=ScenarioNoise(**noise))


def test_generation_is_deterministic():
    first = feasible(generate, small(pixel_sigma=1.0, dropout_rate=0.1), 40)
    second = generate(first.scenario)
    for a, b in zip(first.observation.detections, second.observation.detections):
        np.testing.assert_array_equal(a.keypoints, b.keypoints)
        np.testing.assert_array_equal(a.confidence, b.confidence)


def test_noisy_confidences_are_clipped():
    result = feasible(generate, small(pixel_sigma=3.0), 40)
    confidence = np.concatenate([d.confidence for d in result.observation.detections])
    assert confidence.min() >= 0.1 and confidence.max() <= 1.0
    assert confidence.min() < 1.0


def test_planted_outlier_frames():
    result = feasible(generate, small(outlier_fraction=0.3), 40)
    assert len(result.outlier_frames) == 3
    for frame in result.observation.frames:
        recorded = frame.world_T_object.as_matrix()
        true = result.true_poses[frame.frame_id].as_matrix()
        assert np.allclose(recorded, true) == (frame.frame_id not in result.outlier_frames)


def test_dropout_and_corruption():
    result = feasible(generate, small(dropout_rate=0.3, corrupted_fraction=0.2), 40)
    assert len(result.corrupted_detections) == 6
    missing = np.concatenate([np.isnan(d.keypoints[:, 0]) for d in result.observation.detections])
    zero = np.concatenate([d.confidence == 0.0 for d in result.observation.detections])
    np.testing.assert_array_equal(missing, zero)
    assert 0.15 < missing.mean() < 0.45


# =============================================================================
# SWEEPS AND CORPORA
# =============================================================================

def test_empty_sweep_has_header():
    frame = sweep(SynthScenario(), "noise", [])
    assert frame.empty
    assert list(frame.columns) == SWEEP_COLUMNS
    assert summarize_sweep(frame).empty


def test_unknown_sweep_axis():
    with pytest.raises(ConfigError):
        sweep(SynthScenario(), "lighting", [1.0])


def test_sweep_records_failures_and_continues(clean_capture):
    template = replace(SynthScenario(), frames=12)
    frame = sweep(template, "outliers", [0.0, 1.0], seeds=[clean_capture.scenario.seed])
    assert frame["status"].tolist() == ["success", "error"]
    assert frame["mean_error_m"].iloc[0] < 1e-6
    assert np.isnan(frame["mean_error_m"].iloc[1])
    summary = summarize_sweep(frame)
    assert summary["value"].tolist() == [0.0]
    assert summary["succeeded"].tolist() == [1]


def test_noise_raises_reconstruction_error(clean_capture):
    template = replace(SynthScenario(), frames=12)
    seeds = [clean_capture.scenario.seed]
    frame = sweep(template, "noise", [0.0, 4.0], seeds=seeds)
    errors = frame.set_index("value")["mean_error_m"]
    assert errors[0.0] < errors[4.0]


def test_generated_corpus():
    corpus = generate_corpus(replace(SynthScenario(), frames=2), 3, seed=0)
    assert len(corpus) == 3
    corpus.validate_catalog()
    for grasp in corpus:
        assert grasp.object_id in OBJECT_CATALOG
        assert 1 <= grasp.participant <= 50
    for a in corpus:
        for b in corpus:
            if a.object_id == b.object_id:
                np.testing.assert_array_equal(a.mesh.vertices, b.mesh.vertices)
