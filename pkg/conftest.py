"""
Shared pytest fixtures for the GraspKit test suite.

Meshes are small closed primitives; the synthetic grasp fixtures are
session-scoped because hand placement and rendering take a few seconds.
"""

from dataclasses import replace

import numpy as np
import pytest
import trimesh

from services.errors import ScenarioInfeasibleError
from services.geom import TriMesh
from services.handmodel import KinematicHand, forward_kinematics
from services.synth import ObjectSpec, SynthScenario, build_grasp, generate

# =============================================================================
# MESHES
# =============================================================================

# Unit cube [0, 1]^3, vertex i at (i >> 2, (i >> 1) & 1, i & 1). Every face is
# split along the diagonal through vertex 7 or vertex 0.
CUBE_FACES = [
    [4, 6, 7], [4, 7, 5],  # x = 1
    [2, 3, 7], [2, 7, 6],  # y = 1
    [1, 5, 7], [1, 7, 3],  # z = 1
    [0, 1, 3], [0, 3, 2],  # x = 0
    [0, 4, 5], [0, 5, 1],  # y = 0
    [0, 2, 6], [0, 6, 4],  # z = 0
]


@pytest.fixture
def unit_cube() -> TriMesh:
    vertices = [[(i >> 2) & 1, (i >> 1) & 1, i & 1] for i in range(8)]
    return TriMesh(np.array(vertices, dtype=float), np.array(CUBE_FACES))


@pytest.fixture
def unit_square() -> TriMesh:
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    return TriMesh(vertices, np.array([[0, 1, 2], [0, 2, 3]]))


@pytest.fixture(scope="session")
def unit_sphere() -> TriMesh:
    return TriMesh.from_trimesh(trimesh.creation.icosphere(subdivisions=3, radius=1.0))


# =============================================================================
# HANDS AND GRASPS
# =============================================================================

@pytest.fixture(scope="session")
def rest_hand():
    return forward_kinematics(KinematicHand())


def feasible(build, template: SynthScenario, first_seed: int, attempts: int = 20):
    """Run `build` on the first seed from first_seed on whose hand placement succeeds."""
    for seed in range(first_seed, first_seed + attempts):
        try:
            return build(replace(template, seed=seed))
        except ScenarioInfeasibleError:
            continue
    raise RuntimeError(f"no feasible scenario in seeds {first_seed}..{first_seed + attempts - 1}")


@pytest.fixture(scope="session")
def synthetic_grasp():
    """Noise-free single-hand grasp of a 4 cm sphere."""
    return feasible(lambda s: build_grasp(s)[4], SynthScenario(), 3)


@pytest.fixture(scope="session")
def clean_capture():
    """Noise-free 3-camera, 50-frame capture."""
    return feasible(generate, SynthScenario(), 7)


@pytest.fixture(scope="session")
def cylinder_grasp():
    return feasible(lambda s: build_grasp(s)[4], SynthScenario(object=ObjectSpec("cylinder", (0.03, 0.1))), 11)
