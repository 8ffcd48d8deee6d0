import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxdiff.geometry import PointCloud, RigidTransform
from voxdiff.metrics import (BevGrid, chamfer, evaluate_pair, fscore, hausdorff, jsd_bev, mhd, mmd_bev,
                             ucd, umhd, write_reports)
from voxdiff.synthdata import SceneSpec, generate_scene


def brute_directed(a, b):
    """Double loop: distance from each a-point to its nearest b-point."""
    out = []
    for p in a:
        best = np.inf
        for q in b:
            d = float(np.sum((p - q) ** 2))
            if d < best:
                best = d
        out.append(best)
    return np.array(out)


def brute(a, b, tau=0.1):
    ab, ba = brute_directed(a, b), brute_directed(b, a)
    p, r = np.mean(np.sqrt(ab) <= tau), np.mean(np.sqrt(ba) <= tau)
    return {"cd": ab.mean() + ba.mean(), "ucd": ab.mean(),
            "hd": max(np.sqrt(ab).max(), np.sqrt(ba).max()),
            "mhd": max(np.sqrt(ab).mean(), np.sqrt(ba).mean()), "umhd": np.sqrt(ab).mean(),
            "fscore": 0.0 if p + r == 0 else 2 * p * r / (p + r)}


def ours(a, b, tau=0.1, dims=3):
    return {"cd": chamfer(a, b, dims), "ucd": ucd(a, b, dims), "hd": hausdorff(a, b, dims),
            "mhd": mhd(a, b, dims), "umhd": umhd(a, b, dims), "fscore": fscore(a, b, tau, dims)}


def test_hand_cases():
    a, b = np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])
    assert chamfer(a, b) == 2.0 and ucd(a, b) == 1.0
    assert fscore(a, b, 0.5) == 0.0 and fscore(a, b, 2.0) == 1.0
    a2 = np.array([[0.0, 0, 0], [3.0, 0, 0]])
    assert hausdorff(a2, a) == 3.0 and umhd(a2, a) == 1.5


def test_identical_clouds():
    a = np.random.default_rng(0).normal(size=(30, 3))
    for v in ours(a, a).values():
        assert v in (0.0, 1.0)
    assert fscore(a, a, 1e-9) == 1.0


def test_matches_brute_force_exactly():
    rng = np.random.default_rng(0)
    for _ in range(25):
        a = rng.normal(size=(rng.integers(1, 60), 3))
        b = rng.normal(size=(rng.integers(1, 60), 3))
        want, got = brute(a, b), ours(a, b)
        for k in want:
            assert got[k] == want[k], k


def test_two_d_mode_drops_z():
    a = np.array([[0.0, 0, 0], [1, 1, 5]])
    b = np.array([[0.0, 0, 9], [1, 1, -5]])
    assert chamfer(a, b, dims=2) == 0.0 and chamfer(a, b) > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_symmetry_and_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(40, 3)), rng.normal(size=(35, 3))
    assert abs(chamfer(a, b) - chamfer(b, a)) < 1e-12
    assert abs(hausdorff(a, b) - hausdorff(b, a)) < 1e-12
    assert hausdorff(a, b) >= mhd(a, b) >= 0
    T = RigidTransform.from_euler(*rng.uniform(-180, 180, 3), translation=rng.uniform(-3, 3, 3))
    ta, tb = T.apply(a), T.apply(b)
    for k, v in ours(a, b).items():
        assert abs(ours(ta, tb)[k] - v) < 1e-9, k


def test_empty_cloud_rejected():
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), np.zeros((3, 3)))


def test_jsd_bev_cases():
    g = BevGrid()
    a = np.array([[0.2, -1.8, 0.0]] * 5)
    b = np.array([[3.8, 1.8, 0.0]] * 5)
    assert jsd_bev(a, a, g) == 0.0
    assert jsd_bev(a, b, g) == pytest.approx(1.0, abs=1e-12)
    rng = np.random.default_rng(0)
    c = np.c_[rng.uniform(0, 4, (100, 2)) - [0, 2], np.zeros(100)]
    d = np.c_[rng.uniform(0, 4, (80, 2)) - [0, 2], np.zeros(80)]
    assert abs(jsd_bev(c, d) - jsd_bev(d, c)) < 1e-12


def test_mmd_bev_properties():
    fam_a = [generate_scene(SceneSpec(seed=s))[0] for s in range(6)]
    fam_a2 = [generate_scene(SceneSpec(seed=s))[0] for s in range(6, 12)]
    fam_b = [generate_scene(SceneSpec(seed=s, n_walls=0, n_boxes=1, n_poles=6))[0] for s in range(6)]
    assert mmd_bev(fam_a, fam_a) <= 1e-9
    cross, same = mmd_bev(fam_a, fam_b), mmd_bev(fam_a, fam_a2)
    assert cross > 0 and cross > same
    assert abs(mmd_bev(fam_a[::-1], fam_b[::-1]) - cross) < 1e-12


def test_reports_written(tmp_path):
    lidar, radar, _ = generate_scene(SceneSpec(seed=1))
    reps = [evaluate_pair(radar, lidar), evaluate_pair(lidar, lidar)]
    assert reps[1].values["cd"] == 0 and reps[1].values["fscore"] == 1
    csv_path, json_path = write_reports(tmp_path, ["r", "l"], reps)
    lines = csv_path.read_text().splitlines()
    assert lines[0].startswith("pair,cd,hd") and len(lines) == 3
    assert "mean" in json_path.read_text()


def test_empty_prediction_yields_undefined_metrics(tmp_path):
    gt = np.random.default_rng(0).uniform(-5, 5, (50, 3))
    rep = evaluate_pair(np.zeros((0, 3)), gt)
    assert rep.values["fscore"] == 0.0 and np.isnan(rep.values["cd"]) and rep.n_pred == 0
    ok = evaluate_pair(gt, gt)
    _, js = write_reports(tmp_path, ["empty", "same"], [rep, ok])
    summary = json.loads(js.read_text())
    assert summary["mean"]["cd"] == 0.0 and summary["n_undefined"]["cd"] == 1
