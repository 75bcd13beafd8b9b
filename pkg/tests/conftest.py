import numpy as np
import pytest

from strandkit import Strand, StrandSet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_strand(sid, joints, **kw):
    return Strand(sid, np.asarray(joints, dtype=float), **kw)


def straight_strand(sid, start, direction, length, n_joints, **kw):
    start = np.asarray(start, dtype=float)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    arcs = np.linspace(0.0, length, n_joints)
    return Strand(sid, start + arcs[:, None] * direction, **kw)


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def bend_angles(strand):
    """Bend angle at every interior joint, radians."""
    u = np.diff(strand.joints, axis=0)
    u = u / np.linalg.norm(u, axis=1, keepdims=True)
    c = np.clip((u[:-1] * u[1:]).sum(axis=1), -1.0, 1.0)
    return np.arccos(c)


def as_set(*strands):
    return StrandSet(tuple(strands))
