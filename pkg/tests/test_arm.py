"""Arm simulator tests: rendering, stepping, clipping, PGM round trips."""

import numpy as np
import pytest

from pixelarm import arm
from pixelarm.arm import DEG
from pixelarm.errors import ConfigError, FormatError


@pytest.fixture
def model():
    return arm.default_model(40, 24)


def test_default_model_valid(model):
    assert model.joint_count == 4
    assert model.image_width == 40 and model.image_height == 24


def test_model_validation_rejects_bad_limits():
    with pytest.raises(ConfigError):
        arm.ArmModel(link_lengths=(5.0,), link_half_widths=(1.0,),
                     end_radius=1.0, joint_limits=((1.0, -1.0),),
                     anchor=(0.0, 0.0), image_width=10, image_height=10)


def test_model_json_round_trip(model):
    again = arm.ArmModel.from_json(model.to_json())
    assert again == model
    assert again.model_hash() == model.model_hash()


def test_kinematics_straight_arm(model):
    pts = arm.joint_points(model, np.zeros(4))
    assert np.allclose(pts[:, 1], model.anchor[1])
    assert np.all(np.diff(pts[:, 0]) > 0)
    ee = arm.end_effector(model, np.zeros(4))
    assert ee[0] == pytest.approx(model.anchor[0] + sum(model.link_lengths))


def test_render_centroid_on_anchor_line(model):
    img = arm.render(model, np.zeros(4))
    ys = np.arange(model.image_height)
    centroid_y = float((img.sum(axis=1) * ys).sum() / img.sum())
    assert abs(centroid_y - model.anchor[1]) <= 0.5


def test_render_deterministic(model):
    q = np.array([0.3, -0.4, 0.2, 0.1])
    a = arm.render(model, q)
    b = arm.render(model, q)
    assert a.tobytes() == b.tobytes()


def test_render_intensity_bounds(model):
    rng = np.random.default_rng(3)
    for _ in range(5):
        q = rng.uniform(model.limits_lo, model.limits_hi)
        img = arm.render(model, q)
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_single_link_area_matches_capsule_formula():
    length, hw = 14.0, 2.0
    one = arm.ArmModel(link_lengths=(length,), link_half_widths=(hw,),
                       end_radius=0.01, joint_limits=((-np.pi, np.pi),),
                       anchor=(10.0, 15.5), image_width=40, image_height=32)
    img = arm.render(one, np.zeros(1))
    # coverage sum approximates the capsule area 2*len*hw + pi*hw^2
    area = 2 * length * hw + np.pi * hw ** 2
    assert abs(float(img.sum()) - area) / area <= 0.05


def test_render_continuity(model):
    q = np.array([0.2, -0.3, 0.25, -0.1])
    rng = np.random.default_rng(11)
    diffs = []
    for delta_deg in (1.0, 0.5, 0.25):
        vals = []
        for _ in range(10):
            direction = rng.standard_normal(4)
            direction /= np.linalg.norm(direction)
            dq = direction * delta_deg * DEG
            vals.append(np.abs(arm.render(model, q) - arm.render(model, q + dq)).sum())
        diffs.append(np.mean(vals))
    assert diffs[0] > diffs[1] > diffs[2]


def test_render_batch_matches_single(model):
    rng = np.random.default_rng(5)
    qs = rng.uniform(model.limits_lo, model.limits_hi, size=(6, 4))
    batch = arm.render_batch(model, qs)
    for i in range(6):
        np.testing.assert_array_equal(batch[i], arm.render(model, qs[i]))


def test_step_identity_at_zero_action(model):
    q = np.array([0.1, 0.2, -0.3, 0.0])
    np.testing.assert_array_equal(arm.step(model, q, np.zeros(4), 1.0), q)


def test_step_clips_displacement(model):
    q = np.zeros(4)
    a = np.array([10.0 * DEG, 0, 0, 0])
    q2 = arm.step(model, q, a, 1.0)
    assert q2[0] == pytest.approx(2.0 * DEG)


def test_step_respects_limits(model):
    q = model.limits_hi.copy()
    q2 = arm.step(model, q, np.full(4, 10.0), 1.0)
    np.testing.assert_array_equal(q2, model.limits_hi)


def test_step_bound_property(model):
    rng = np.random.default_rng(17)
    for _ in range(200):
        q = rng.uniform(model.limits_lo, model.limits_hi)
        a = rng.standard_normal(4) * rng.uniform(0, 100)
        dt = rng.uniform(0.01, 2.0)
        q2 = arm.step(model, q, a, dt)
        assert np.all(np.abs(q2 - q) <= arm.ACTION_BOUND_DEFAULT + 1e-12)
        assert np.all(q2 >= model.limits_lo) and np.all(q2 <= model.limits_hi)


def test_step_identity_under_backlash(model):
    q = np.array([0.1, 0.0, 0.0, 0.0])
    q2 = arm.step(model, q, np.zeros(4), 1.0,
                  backlash=arm.BacklashConfig(), rng=np.random.default_rng(0))
    np.testing.assert_array_equal(q2, q)


def test_backlash_shrinks_motion(model):
    rng = np.random.default_rng(23)
    q = np.zeros(4)
    a = np.full(4, 1.5 * DEG)
    for _ in range(50):
        q2 = arm.step(model, q, a, 1.0, backlash=arm.BacklashConfig(), rng=rng)
        assert np.all(q2 >= 0.0) and np.all(q2 <= 1.5 * DEG + 1e-12)


def test_clip_action_within_bound_unchanged():
    a = np.array([0.01, -0.02, 0.0, 0.03])
    np.testing.assert_allclose(arm.clip_action(a, 1.0), a)


def test_clip_action_hand_values():
    a = np.array([5.0, -5.0, 0.0, 0.0]) * DEG
    clipped = arm.clip_action(a, 1.0)
    np.testing.assert_allclose(clipped, np.array([2.0, -2.0, 0.0, 0.0]) * DEG)


def test_clip_action_odd_symmetry():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(4)
    np.testing.assert_array_equal(arm.clip_action(-a, 0.7), -arm.clip_action(a, 0.7))


def test_pgm_round_trip(tmp_path, model):
    img = arm.render(model, np.array([0.2, 0.1, -0.2, 0.3]))
    path = tmp_path / "pose.pgm"
    arm.write_pgm(img, path)
    back = arm.read_pgm(path)
    assert back.shape == img.shape
    # quantization to 8 bits, half-up
    expected = np.floor(img * 255.0 + 0.5) / 255.0
    np.testing.assert_allclose(back, expected.astype(np.float32), atol=1e-7)


def test_pgm_rejects_truncated(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\n4 4\n255\nxx")
    with pytest.raises(FormatError):
        arm.read_pgm(path)


def test_pgm_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad2.pgm"
    path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(FormatError):
        arm.read_pgm(path)
