from dataclasses import replace

import numpy as np
import pytest

from cersa_forge.linalg import grassmann, svd
from cersa_forge.tasks import SynthTask, cayley_rotation, gen_task

LOW = SynthTask("lowrank-teacher", in_dim=10, out_dim=8, n_train=40, n_test=30, rank=3)


@pytest.mark.parametrize("gen", ["lowrank-teacher", "rotated-teacher", "blobs-classification"])
def test_same_seed_same_data(gen):
    t = replace(LOW, generator=gen, noise=0.1)
    a, b = gen_task(t), gen_task(t)
    for name in ("x_train", "y_train", "x_test", "y_test"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(gen_task(replace(t, seed=1)).x_train, a.x_train)


def test_split_sizes_and_disjoint():
    d = gen_task(LOW)
    assert d.x_train.shape == (40, 10) and d.y_test.shape == (30, 8)
    assert not any((d.x_test == row).all(axis=1).any() for row in d.x_train)


def test_noiseless_teacher_is_exact():
    d = gen_task(LOW)
    assert np.allclose(d.y_test, d.x_test @ d.teacher.T, atol=1e-12)


def test_teacher_change_stays_in_principal_subspace():
    d = gen_task(LOW)
    delta = d.teacher - d.base
    f = svd(d.base)
    fd = svd(delta)
    assert grassmann(f.u, fd.u, 3, 3) == pytest.approx(1.0, abs=1e-10)


def test_rotated_teacher_identity_rotation_is_base():
    d = gen_task(replace(LOW, generator="rotated-teacher", angle=0.0))
    assert np.allclose(d.teacher, d.base, atol=1e-14)


def test_cayley_is_orthogonal(rng):
    r = cayley_rotation(rng, 5, 0.7)
    assert np.allclose(r.T @ r, np.eye(5), atol=1e-12)


def test_blobs_labels():
    d = gen_task(replace(LOW, generator="blobs-classification", noise=0.3))
    assert d.classification
    labels = np.unique(d.y_train)
    assert set(labels) <= set(range(8))


@pytest.mark.parametrize(
    "kw", [{"in_dim": 0}, {"n_train": -1}, {"noise": -0.1}, {"generator": "nope"}, {"rank": 20}]
)
def test_invalid_tasks(kw):
    with pytest.raises(ValueError):
        gen_task(replace(LOW, **kw))
