import numpy as np
import pytest

from voxdiff.cloudio import CloudParseError, load_cloud, save_cloud
from voxdiff.geometry import PointCloud


def test_binary_ply_roundtrip_bitwise(tmp_path):
    pts = np.random.default_rng(0).normal(size=(1000, 3))
    save_cloud(PointCloud(pts), tmp_path / "a.ply")
    back = load_cloud(tmp_path / "a.ply")
    assert np.array_equal(back.points.astype(np.float32), pts.astype(np.float32))


def test_ascii_ply_roundtrip(tmp_path):
    pts = np.random.default_rng(1).normal(size=(20, 3))
    save_cloud(PointCloud(pts), tmp_path / "a.ply", binary=False)
    assert np.array_equal(load_cloud(tmp_path / "a.ply").points, pts.astype(np.float32).astype(np.float64))


def test_hand_written_ascii_ply(tmp_path):
    text = ("ply\nformat ascii 1.0\ncomment hand made\nelement vertex 3\n"
            "property float x\nproperty float y\nproperty float z\nproperty float intensity\n"
            "end_header\n0 0 0 1\n1 2 3 0.5\n-1 -2 -3 0.25\n")
    (tmp_path / "h.ply").write_text(text)
    c = load_cloud(tmp_path / "h.ply")
    assert len(c) == 3
    assert c.points[1].tolist() == [1, 2, 3]
    assert c.attrs["intensity"].tolist() == [1, 0.5, 0.25]


def test_attrs_survive_binary_roundtrip(tmp_path):
    pts = np.arange(12, dtype=float).reshape(4, 3)
    save_cloud(PointCloud(pts, {"intensity": np.array([1.0, 2, 3, 4])}), tmp_path / "a.ply")
    assert load_cloud(tmp_path / "a.ply").attrs["intensity"].tolist() == [1, 2, 3, 4]


def test_xyz_roundtrip_and_parse_error(tmp_path):
    pts = np.random.default_rng(2).normal(size=(5, 3))
    save_cloud(PointCloud(pts), tmp_path / "a.xyz")
    assert np.allclose(load_cloud(tmp_path / "a.xyz").points, pts, atol=1e-8)
    (tmp_path / "bad.xyz").write_text("0 0 0\n1 two 3\n")
    with pytest.raises(CloudParseError, match="line 2"):
        load_cloud(tmp_path / "bad.xyz")


def test_truncated_binary_ply(tmp_path):
    save_cloud(PointCloud(np.zeros((10, 3))), tmp_path / "a.ply")
    data = (tmp_path / "a.ply").read_bytes()
    (tmp_path / "t.ply").write_bytes(data[:-5])
    with pytest.raises(CloudParseError, match="byte"):
        load_cloud(tmp_path / "t.ply")
