import numpy as np

from voxdiff.geometry import RigidTransform, aggregate_frames
from voxdiff.registration import select_pairs
from voxdiff.synthdata import (SceneSpec, build_scene, generate_scene, generate_sequence, load_manifest,
                               write_dataset, write_sequence)
from voxdiff.voxel import VoxelGridSpec


def test_radar_subset_of_lidar():
    lidar, radar, _ = generate_scene(SceneSpec(seed=2, keep_fraction=0.1, jitter=0.0, clutter=0))
    assert len(radar) == round(0.1 * len(lidar))
    lset = {tuple(p) for p in lidar.points}
    assert all(tuple(p) in lset for p in radar.points)


def test_same_seed_same_scene():
    a, b = generate_scene(SceneSpec(seed=5)), generate_scene(SceneSpec(seed=5))
    assert np.array_equal(a[0].points, b[0].points) and np.array_equal(a[1].points, b[1].points)
    c = generate_scene(SceneSpec(seed=6))
    assert not np.array_equal(a[0].points[:10], c[0].points[:10])


def test_default_sparsity_ratio():
    for seed in range(5):
        lidar, radar, _ = generate_scene(SceneSpec(seed=seed))
        assert 6 <= len(lidar) / len(radar) <= 100


def test_clouds_inside_default_grid():
    grid = VoxelGridSpec()
    for seed in range(5):
        for c in generate_scene(SceneSpec(seed=seed))[:2]:
            assert np.all(c.points >= np.asarray(grid.origin)) and np.all(c.points < grid.upper)


def test_lidar_lies_on_surfaces():
    spec = SceneSpec(seed=3)
    lidar, _, _ = generate_scene(spec)
    assert np.max(build_scene(spec).distance(lidar.points)) < 1e-9


def test_single_frame_sequence_matches_scene():
    spec = SceneSpec(seed=4)
    (f,) = generate_sequence(spec, 1, RigidTransform.identity())
    lidar, radar, _ = generate_scene(spec)
    assert np.array_equal(f.lidar.points, lidar.points) and np.array_equal(f.radar.points, radar.points)


def test_sequence_aggregates_onto_scene():
    spec = SceneSpec(seed=1)
    frames = generate_sequence(spec, 5, RigidTransform.from_euler(3.0, translation=(0.5, 0.1, 0.0)))
    agg = aggregate_frames([(f.lidar, f.pose) for f in frames])
    assert np.max(build_scene(spec).distance(agg.points)) < 1e-9
    radar = aggregate_frames([(f.radar, f.pose) for f in frames])
    d = build_scene(spec).distance(radar.points)
    # jittered returns sit within the jitter bound; the rest are clutter
    assert np.mean(d <= 3 * spec.jitter * np.sqrt(3)) > 0.8


def test_two_meter_spacing_passes_pair_filter():
    frames = generate_sequence(SceneSpec(seed=0), 4, RigidTransform(np.eye(3), np.array([2.0, 0, 0])))
    pairs = select_pairs([f.pose for f in frames], 1.5)
    assert all((i, i + 1) in pairs for i in range(3))


def test_dataset_and_manifest_roundtrip(tmp_path):
    m = write_dataset(tmp_path / "d", [SceneSpec(seed=s) for s in range(3)])
    entries = load_manifest(m)
    assert len(entries) == 3 and entries[1]["seed"] == 1
    frames = generate_sequence(SceneSpec(seed=0), 3, RigidTransform(np.eye(3), np.array([1.0, 0, 0])))
    entries = load_manifest(write_sequence(tmp_path / "s", frames, SceneSpec(seed=0)))
    assert np.allclose(entries[2]["pose"].translation, [2, 0, 0])
