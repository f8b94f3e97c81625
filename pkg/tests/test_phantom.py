import itertools

import numpy as np
import pytest

from spinereg.exceptions import BodiesOverlapAfterMotion, EmptyBody
from spinereg.metrics import compute_report, folding_count
from spinereg.phantom import PhantomSpec, distance_transform, edt, generate_pair, zero_motion
from spinereg.volume import LabelVolume, grid_coords

SMALL = PhantomSpec(dims=(32, 32, 40), n_bodies=2, half_extent=(8, 6, 3), gap=5, seed=3)


def brute_edt(mask):
    pts = np.argwhere(mask)
    grid = grid_coords(mask.shape).reshape(-1, 3)
    d2 = ((grid[:, None, :] - pts[None]) ** 2).sum(-1).min(1)
    return np.sqrt(d2).reshape(mask.shape)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_edt_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((16, 16, 16)) < 0.01
    mask[rng.integers(16), rng.integers(16), rng.integers(16)] = True
    np.testing.assert_array_equal(edt(mask), brute_edt(mask))


def test_edt_edge_cases():
    mask = np.zeros((5, 6, 7), bool)
    mask[0, 0, 0] = True
    np.testing.assert_array_equal(edt(mask), brute_edt(mask))
    assert np.all(edt(np.ones((3, 3, 3), bool)) == 0)
    with pytest.raises(EmptyBody):
        edt(np.zeros((4, 4, 4), bool))
    d = distance_transform(LabelVolume(mask.astype(int) * 2))
    assert set(d) == {2}


def test_zero_motion_is_identity():
    pair = generate_pair(zero_motion(SMALL))
    assert np.all(pair.gt_field.data == 0)
    np.testing.assert_array_equal(pair.fixed_labels.data, pair.moving_labels.data)


def test_ground_truth_is_rigid_on_bodies():
    pair = generate_pair(SMALL)
    x = grid_coords(SMALL.dims)
    for b, T in enumerate(pair.motions, start=1):
        core = pair.fixed_labels.data == b
        np.testing.assert_allclose((x + pair.gt_field.data)[core], T.apply(x[core]), atol=1e-9)
    report = compute_report(pair.moving_labels, pair.gt_field, pair.fixed_labels)
    for body in report.bodies:
        assert body.dsc > 0.95
        assert body.rigid_dsc >= 0.98
        assert body.pc_metric < 1e-3
    assert folding_count(pair.gt_field) == 0


def test_determinism_and_noise_stream():
    a = generate_pair(SMALL)
    b = generate_pair(SMALL)
    np.testing.assert_array_equal(a.fixed.data, b.fixed.data)
    np.testing.assert_array_equal(a.gt_field.data, b.gt_field.data)
    quiet = generate_pair(PhantomSpec(**{**SMALL.__dict__, "noise": 0.0}))
    np.testing.assert_array_equal(quiet.gt_field.data, a.gt_field.data)


def test_bodies_separated_and_ordered():
    pair = generate_pair(SMALL)
    assert pair.moving_labels.body_ids == (1, 2)
    z = [np.argwhere(pair.moving_labels.data == b)[:, 2].mean() for b in (1, 2)]
    assert z[0] < z[1]


def test_overlap_raises_when_motion_cannot_shrink():
    spec = PhantomSpec(dims=(32, 32, 40), n_bodies=2, half_extent=(8, 6, 3), gap=1, max_translation=4.0, max_rotation_deg=20.0, seed=1)
    with pytest.raises(BodiesOverlapAfterMotion):
        generate_pair(spec, max_retries=0)


def test_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec(dims=(16, 16, 16))
    with pytest.raises(ValueError):
        PhantomSpec(shape="sphere")
    ell = generate_pair(PhantomSpec(**{**SMALL.__dict__, "shape": "ellipsoid"}))
    assert ell.moving_labels.body_ids == (1, 2)
