import numpy as np
import pytest

from voxdiff import autograd as ag
from voxdiff.autograd import AdamW, CheckpointError, Tensor, load_checkpoint, save_checkpoint
from voxdiff.gradcheck import OPS, adjoint_gap, check, run_gradchecks


def T(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def test_conv3d_identity_kernel():
    x = np.random.default_rng(0).normal(size=(3, 4, 5, 6))
    w = np.zeros((3, 3, 1, 1, 1))
    w[np.arange(3), np.arange(3)] = 1.0
    assert np.array_equal(ag.conv3d(T(x), T(w)).data, x)


def test_conv2d_hand_computed():
    x = np.arange(9, dtype=float).reshape(1, 3, 3)
    w = np.array([[[[1.0, 0.0], [0.0, -1.0]]]])
    # out[i, j] = x[i, j] - x[i+1, j+1] = -4 everywhere
    assert ag.conv2d(T(x), T(w)).data.tolist() == [[[-4.0, -4.0], [-4.0, -4.0]]]
    w2 = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    want = [[0 + 2 + 9 + 16, 1 + 4 + 12 + 20], [3 + 8 + 18 + 28, 4 + 10 + 21 + 32]]
    assert ag.conv2d(T(x), T(w2)).data[0].tolist() == want


def test_sigmoid_value_and_gradient():
    x = T([0.0])
    y = ag.sum_(ag.sigmoid(x))
    y.backward()
    assert y.item() == 0.5 and x.grad[0] == 0.25


def test_loss_hand_values():
    assert ag.l1(T([1.0, 2.0]), T([0.0, 0.0])).item() == 1.5
    x = np.random.default_rng(0).normal(size=(4, 5))
    assert ag.mse(T(x), T(x)).item() == 0.0
    target = (np.random.default_rng(1).uniform(size=50) > 0.5).astype(float)
    assert ag.bce(T(target), T(target, False)).item() <= 1e-6


def test_masked_l1_averages_over_mask_only():
    a, b = T([1.0, 5.0, 3.0]), T([0.0, 0.0, 0.0])
    assert ag.l1(a, b, mask=np.array([1.0, 0.0, 1.0])).item() == 2.0


def test_bce_gradient_zero_in_clamped_region():
    p = T([0.0, 1.0, 0.5])
    loss = ag.bce(p, T([1.0, 0.0, 1.0], False))
    loss.backward()
    assert p.grad[0] == 0.0 and p.grad[1] == 0.0 and p.grad[2] != 0.0


def test_sum_gradient_is_ones():
    x = T(np.random.default_rng(0).normal(size=(3, 4)))
    ag.sum_(x).backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_mse_of_linear_map_matches_finite_differences():
    rng = np.random.default_rng(0)
    W, x, y = rng.normal(size=(4, 3)), rng.normal(size=(3, 1)), rng.normal(size=(4, 1))
    err = check(lambda w: ag.mse(ag.matmul(w, Tensor(x)), Tensor(y)), [W])
    assert err < 1e-4


def test_conv_transpose3d_finite_differences():
    (res,) = run_gradchecks(trials=2, ops=["conv_transpose3d"])
    assert res.passed, res


def test_every_op_is_covered():
    for op in ("conv3d", "conv_transpose3d", "bce", "offset_reparam", "group_norm", "l1_masked"):
        assert op in OPS


def test_adjoint_identity():
    rng = np.random.default_rng(0)
    assert adjoint_gap(rng, 2) < 1e-9 and adjoint_gap(rng, 3) < 1e-9


def test_shape_errors():
    with pytest.raises(ag.ShapeError):
        ag.mse(T(np.zeros(3)), T(np.zeros(4)))
    with pytest.raises(ag.ShapeError):
        ag.conv2d(T(np.zeros((2, 4, 4))), T(np.zeros((1, 3, 3, 3))))


def test_backward_twice_raises():
    x = T([1.0, 2.0])
    y = ag.sum_(ag.mul(x, x))
    y.backward()
    with pytest.raises(RuntimeError):
        y.backward()


def test_no_grad_builds_no_graph():
    x = T([1.0])
    with ag.no_grad():
        y = ag.mul(x, x)
    assert not y.requires_grad


def test_adamw_single_step_decreases_square():
    w = T([1.0])
    opt = AdamW([w], lr=0.1)
    ag.sum_(ag.mul(w, w)).backward()
    opt.step()
    assert abs(w.data[0]) < 1.0


def test_adamw_zero_gradient_is_noop():
    w = T([1.0, -2.0])
    opt = AdamW([w], lr=0.1, weight_decay=0.0)
    w.grad = np.zeros(2)
    opt.step()
    assert w.data.tolist() == [1.0, -2.0]


def test_adamw_converges_on_quadratic():
    w = T([3.0, -2.0])
    opt = AdamW([w], lr=0.1)
    target = Tensor(np.array([0.5, 1.5]))
    for _ in range(200):
        opt.zero_grad()
        d = ag.sub(w, target)
        loss = ag.sum_(ag.mul(ag.mul(d, d), np.array([1.0, 4.0])))
        loss.backward()
        opt.step()
    d = w.data - target.data
    assert d[0] ** 2 + 4 * d[1] ** 2 < 1e-6


def test_adamw_rejects_nonfinite_gradient():
    w = T([1.0])
    opt = AdamW([w], lr=0.1)
    w.grad = np.array([np.nan])
    with pytest.raises(FloatingPointError, match="non-finite gradient"):
        opt.step()


def test_checkpoint_roundtrip_and_errors(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a": rng.normal(size=(3, 4)), "b/c": np.arange(5, dtype=np.float32)}
    save_checkpoint(tmp_path / "x.ckpt", arrays, {"k": 1})
    back, cfg = load_checkpoint(tmp_path / "x.ckpt")
    assert cfg == {"k": 1}
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype and np.array_equal(back[k], v)
    raw = (tmp_path / "x.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"NOTMAGIC" + raw[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "trunc.ckpt").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match="byte"):
        load_checkpoint(tmp_path / "trunc.ckpt")
