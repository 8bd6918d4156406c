"""Shared fixtures-by-function for the unit tests."""

import numpy as np
from scipy.spatial.transform import Rotation

from isocloth.generators import grid, jittered_triangles, with_noise
from isocloth.mesh import build_mesh


def unit_quad():
    return build_mesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [(0, 1, 2, 3)])


def grid3():
    return grid(3, 3)


def sample_meshes():
    """Five meshes, triangles and quads, 25 to 900 nodes."""
    return [
        grid(5, 5),
        jittered_triangles(8, 8, seed=3),
        with_noise(grid(12, 12, triangles=True), 0.01, seed=1),
        jittered_triangles(20, 20, seed=4),
        grid(30, 30),
    ]


def random_rigid(rng):
    R = Rotation.random(random_state=rng).as_matrix()
    b = rng.normal(size=3)
    return R, b
