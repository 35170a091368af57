import math

import numpy as np
import pytest

from hybridmimic.geometry import CameraModel, Rotation, ShapeMismatch, quat_to_matrix
from hybridmimic.rewards import (RewardConfig, contact_reward, force_ratio, hand_object_distance,
                                 human_tracking_reward, hybrid_reward, mechanical_power, object_tracking_reward)

HANDS = ((1, [2, 3]), (4, [5]))


def rand_rots(rng, n):
    q = rng.normal(size=(n, 4))
    return quat_to_matrix(q / np.linalg.norm(q, axis=-1, keepdims=True))


def random_frame(rng, n=6):
    return rng.normal(size=(n, 3)) * 0.3, rand_rots(rng, n), rng.normal(size=(n, 3))


def geo(a, b):
    return math.acos(max(-1.0, min(1.0, (np.trace(a.T @ b) - 1) / 2)))


def human_oracle(s, r, cfg, power):
    sp, sr, sv = s
    rp, rr, rv = r
    n = len(sp)
    jp = sum(float(np.sum((sp[j] - rp[j]) ** 2)) for j in range(n)) / n
    jv = sum(float(np.sum((sv[j] - rv[j]) ** 2)) for j in range(n)) / n
    jr = sum(geo(sr[j], rr[j]) ** 2 for j in range(n)) / n
    lp, lr = [], []
    for w, ids in HANDS:
        for j in ids:
            a = sr[w].T @ (sp[j] - sp[w])
            b = rr[w].T @ (rp[j] - rp[w])
            lp.append(float(np.sum((a - b) ** 2)))
            lr.append(geo(sr[w].T @ sr[j], rr[w].T @ rr[j]) ** 2)
    lp, lr = sum(lp) / len(lp), sum(lr) / len(lr)
    return math.exp(-cfg.lambda_jp * jp - cfg.lambda_jv * jv - cfg.lambda_jr * jr - cfg.lambda_lp * lp
                    - cfg.lambda_lr * lr - cfg.lambda_pw * power)


# human ------------------------------------------------------------------------

def test_perfect_tracking_is_one():
    rng = np.random.default_rng(0)
    f = random_frame(rng)
    assert human_tracking_reward(*f, *f, HANDS, RewardConfig()) == pytest.approx(1.0, abs=1e-12)


def test_unit_position_error():
    rng = np.random.default_rng(1)
    p, r, v = random_frame(rng)
    shifted = p + np.array([1.0, 0, 0])  # rigid shift: wrist-relative terms stay zero
    cfg = RewardConfig(lambda_jp=1.0)
    assert human_tracking_reward(shifted, r, v, p, r, v, HANDS, cfg) == pytest.approx(math.exp(-1.0), abs=1e-12)


def test_human_matches_term_oracle():
    rng = np.random.default_rng(2)
    cfg = RewardConfig(lambda_jp=3.0, lambda_jv=0.2, lambda_jr=0.5, lambda_lp=4.0, lambda_lr=0.7, lambda_pw=1e-3)
    for _ in range(50):
        s, r = random_frame(rng), random_frame(rng)
        power = float(rng.random() * 100)
        got = human_tracking_reward(*s, *r, HANDS, cfg, power)
        assert got == pytest.approx(human_oracle(s, r, cfg, power), rel=1e-9, abs=1e-300)


def test_human_batched_matches_single():
    rng = np.random.default_rng(3)
    s = [np.stack(x) for x in zip(*(random_frame(rng) for _ in range(4)))]
    r = random_frame(rng)
    got = human_tracking_reward(*s, *r, HANDS, RewardConfig(lambda_jp=1.0, lambda_jv=0.01, lambda_lp=1.0))
    for i in range(4):
        one = human_tracking_reward(s[0][i], s[1][i], s[2][i], *r, HANDS,
                                    RewardConfig(lambda_jp=1.0, lambda_jv=0.01, lambda_lp=1.0))
        assert got[i] == pytest.approx(one, rel=1e-12)


def test_human_strictly_decreasing_in_error():
    rng = np.random.default_rng(4)
    p, r, v = random_frame(rng)
    vals = [human_tracking_reward(p + [d, 0, 0], r, v, p, r, v, HANDS, RewardConfig()) for d in (0.0, 0.01, 0.05)]
    assert vals[0] > vals[1] > vals[2] > 0


def test_human_shape_mismatch():
    rng = np.random.default_rng(5)
    a, b = random_frame(rng, 6), random_frame(rng, 7)
    with pytest.raises(ShapeMismatch):
        human_tracking_reward(*a, *b, HANDS, RewardConfig())


def test_power():
    assert mechanical_power([1.0, -2.0], [3.0, 1.0]) == 5.0


# object -----------------------------------------------------------------------

def object_setup(rng):
    cam = CameraModel.default()
    verts = rng.normal(size=(20, 3)) * 0.05
    ids = np.arange(0, 20, 2)
    pos = np.array([0.0, 0.0, 1.0])
    quat = Rotation(rng.normal(size=4)).quat
    R = quat_to_matrix(quat)
    px = cam.project_camera(cam.to_camera(verts[ids] @ R.T + pos))
    return cam, verts, ids, pos, quat, px


def test_object_at_reference_is_one():
    cam, verts, ids, pos, quat, px = object_setup(np.random.default_rng(6))
    assert object_tracking_reward(pos, quat, verts, ids, px, np.ones(len(ids), bool), cam, RewardConfig()) == 1.0


def test_object_unit_pixel_error():
    cam, verts, ids, pos, quat, px = object_setup(np.random.default_rng(7))
    cfg = RewardConfig(lambda_o=1.0)
    r = object_tracking_reward(pos, quat, verts, ids, px + [0.0, 1.0], np.ones(len(ids), bool), cam, cfg)
    assert r == pytest.approx(math.exp(-1.0), abs=1e-9)


def test_object_matches_projection_oracle():
    rng = np.random.default_rng(8)
    cam, verts, ids, pos, quat, px = object_setup(rng)
    cfg = RewardConfig(lambda_o=0.003)
    for _ in range(20):
        p2 = pos + rng.normal(size=3) * 0.02
        q2 = Rotation(quat + rng.normal(size=4) * 0.1).quat
        vis = rng.random(len(ids)) > 0.3
        vis[0] = True
        R = quat_to_matrix(q2)
        errs = []
        for k, vid in enumerate(ids):
            if not vis[k]:
                continue
            pc = cam.rotation.as_matrix() @ (R @ verts[vid] + p2) + cam.translation
            u = cam.focal * pc[0] / pc[2] + cam.cx
            v = cam.focal * pc[1] / pc[2] + cam.cy
            errs.append((u - px[k, 0]) ** 2 + (v - px[k, 1]) ** 2)
        want = math.exp(-cfg.lambda_o * sum(errs) / len(errs))
        assert object_tracking_reward(p2, q2, verts, ids, px, vis, cam, cfg) == pytest.approx(want, rel=1e-9)


def test_object_permutation_invariant():
    rng = np.random.default_rng(9)
    cam, verts, ids, pos, quat, px = object_setup(rng)
    p2 = pos + [0.01, 0, 0]
    perm = rng.permutation(len(ids))
    vis = np.ones(len(ids), bool)
    a = object_tracking_reward(p2, quat, verts, ids, px, vis, cam, RewardConfig())
    b = object_tracking_reward(p2, quat, verts, ids[perm], px[perm], vis, cam, RewardConfig())
    assert a == pytest.approx(b, rel=1e-12)


def test_object_behind_camera_charged_cap():
    cam, verts, ids, pos, quat, px = object_setup(np.random.default_rng(10))
    cfg = RewardConfig(lambda_o=1e-6, behind_camera_px2=1e6)
    r = object_tracking_reward(np.array([0, 0, -3.0]), quat, verts, ids, px, np.ones(len(ids), bool), cam, cfg)
    assert r == pytest.approx(math.exp(-1.0), rel=1e-9)


def test_object_reward_ablation_flag():
    cam, verts, ids, pos, quat, px = object_setup(np.random.default_rng(11))
    cfg = RewardConfig(object_reward=False)
    assert object_tracking_reward(pos + 1.0, quat, verts, ids, px, np.ones(len(ids), bool), cam, cfg) == 1.0


# contact ----------------------------------------------------------------------------

def test_no_contact_label_gives_one():
    rng = np.random.default_rng(12)
    r = contact_reward(rng.random((2, 4)) * 5, rng.random(2), [0, 0], RewardConfig())
    assert r == 1.0


def test_force_ratio_counts():
    f = np.array([[2.0, 0.5, 3.0, 0.0], [0, 0, 0, 0]])
    assert list(force_ratio(f, 1.0)) == [0.5, 0.0]
    r = contact_reward(f, [0.0, 1.0], [1, 0], RewardConfig(lambda_c=1000.0))
    assert r == pytest.approx(0.5 * 0.5)  # Psi = 0.5, sigmoid(0) = 0.5


def test_distance_factor_at_zero_is_half():
    f = np.ones((2, 4)) * 10.0
    assert contact_reward(f, [0.0, 0.0], [0, 1], RewardConfig()) == pytest.approx(0.5)


def test_contact_non_increasing_in_distance():
    f = np.ones((2, 4)) * 10.0
    vals = [contact_reward(f, [d, 0.0], [1, 0], RewardConfig()) for d in np.linspace(0, 0.2, 21)]
    assert np.all(np.diff(vals) <= 0)


def test_contact_floor_keeps_reward_positive():
    r = contact_reward(np.zeros((2, 4)), [0.0, 0.0], [1, 1], RewardConfig())
    assert 0 < r <= 1


def test_hand_object_distance_is_rms_chamfer():
    h = np.array([[0.0, 0, 0], [0.3, 0, 0]])
    v = np.array([[0.0, 0.1, 0], [0.3, 0, 0.2]])
    assert hand_object_distance(h, v) == pytest.approx(math.sqrt((0.01 + 0.04) / 2))


# product -------------------------------------------------------------------------------

def test_hybrid_product():
    assert hybrid_reward(1.0, 1.0, 1.0) == 1.0
    assert hybrid_reward(0.5, 1.0, 1.0) == 0.5
    rng = np.random.default_rng(13)
    a, b, c = rng.random(3)
    r = hybrid_reward(a, b, c)
    assert r == pytest.approx(a * b * c) and r <= min(a, b, c)


def test_config_rejects_negative_and_unknown():
    with pytest.raises(ValueError):
        RewardConfig(lambda_o=-1.0)
    with pytest.raises(ValueError):
        RewardConfig.from_dict({"lambda_q": 1.0})
