"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the summary block at the end
lists every criterion) or directly with ``python tests/test_acceptance.py``.
"""
import json
import time

import numpy as np
import pytest

from voxdiff.autograd import Tensor
from voxdiff.cli import main as cli_main
from voxdiff.diffusion import (Prediction, PredictionTarget, chain_equivalence_check, diffusion_loss,
                               make_schedule, sample)
from voxdiff.geometry import PointCloud, RigidTransform
from voxdiff.gradcheck import adjoint_gap, run_gradchecks
from voxdiff.metrics import chamfer, fscore, hausdorff, mhd, ucd, umhd
from voxdiff.model import LatentModel
from voxdiff.nets import NetConfig
from voxdiff.registration import evaluate_registration, icp, registration_recall, relative_pose
from voxdiff.synthdata import SceneSpec, generate_scene, generate_sequence
from voxdiff.train import (LossWeights, Stage1Sample, TrainConfig, evaluate_stage1, stage1_loss,
                           train_stage1, train_stage2)
from voxdiff.voxel import VoxelGridSpec, derive_targets, reconstruct, voxelize

# Toy benchmark settings (criterion 6). The latent and denoiser are desk-sized and stage 2
# runs longer at a higher, cosine-annealed learning rate; the diffusion setup is the
# library default (cosine noise schedule, T = 1024, L2 noise target).
TOY_NET = NetConfig(latent_dim=16, unet_widths=(32, 64, 128))
TOY_STAGE1_ITERS = 3000
TOY_STAGE2_ITERS = 20000
TOY_STAGE2_LR = 1e-3
TOY_STEPS = 128

SMALL = NetConfig(latent_dim=16, vfe_widths=(8, 16, 16), lpcr_widths=(8, 8, 4),
                  unet_widths=(16, 32, 64), res_blocks=1, temb_dim=32)


def random_rotation(rng, max_deg):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = np.deg2rad(rng.uniform(0, max_deg))
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(ang) * K + (1 - np.cos(ang)) * K @ K


# 1 -----------------------------------------------------------------------------------
def test_criterion_01_forward_process_equivalence(report):
    s = make_schedule(1024, "cosine")
    f0 = np.array([1.5, -0.7, 0.0, 0.3, -2.0, 0.9])
    t0 = time.time()
    reps = [chain_equivalence_check(f0, t, s, n_samples=100_000, seed=0) for t in (1, 16, 64)]
    secs = time.time() - t0
    ok = all(r.passed for r in reps) and reps[0].exact_single_step and secs < 60
    detail = ", ".join(f"t={r.t} mean z {r.max_mean_z:.2f} var z {r.max_var_z:.2f}" for r in reps)
    report(1, "forward-process equivalence", ok, f"{detail}; {secs:.1f}s")


# 2 -----------------------------------------------------------------------------------
def test_criterion_02_schedule_invariants(report):
    rows, ok = [], True
    for kind in ("linear", "cosine"):
        for T in (64, 256, 1024):
            ab = make_schedule(T, kind).alpha_bar
            good = bool(np.all(np.diff(ab) < 0) and ab[0] > 0.99 and ab[-1] < 0.01)
            ok &= good
            rows.append(f"{kind}/{T}: ab1={ab[0]:.5f} abT={ab[-1]:.2e}")
    report(2, "schedule invariants", ok, "; ".join(rows))


# 3 -----------------------------------------------------------------------------------
def test_criterion_03_oracle_roundtrip(report):
    spec = VoxelGridSpec()
    rng = np.random.default_rng(3)
    clouds = [generate_scene(SceneSpec(seed=100 + i))[0] if i % 2 else
              PointCloud(rng.uniform(spec.origin, spec.upper, (rng.integers(50, 3000), 3)))
              for i in range(20)]
    t0 = time.time()
    worst_abs, worst_cd = 0.0, 0.0
    for c in clouds:
        vc = voxelize(c, spec)
        m, o = derive_targets(vc)[1]
        rec = reconstruct(m, o, spec, 0.5)
        worst_abs = max(worst_abs, float(np.max(np.abs(rec.points - vc.means))))
        worst_cd = max(worst_cd, chamfer(rec, vc.mean_cloud()))
    secs = time.time() - t0
    ok = worst_abs <= 1e-9 and worst_cd < 1e-18 and secs < 10
    report(3, "oracle round-trip", ok, f"max |err| {worst_abs:.1e} m, max CD {worst_cd:.1e} m^2, {secs:.2f}s")


# 4 -----------------------------------------------------------------------------------
def test_criterion_04_gradient_checks(report):
    results = run_gradchecks(trials=10, tol=1e-4, seed=4)
    rng = np.random.default_rng(4)
    gaps = [adjoint_gap(rng, nd) for nd in (2, 3) for _ in range(5)]
    worst = max(results, key=lambda r: r.max_rel_error)
    ok = all(r.passed for r in results) and max(gaps) < 1e-9
    report(4, "gradient checks", ok, f"{len(results)} ops x 10 trials, worst {worst.op} "
           f"{worst.max_rel_error:.1e}; adjoint gap {max(gaps):.1e}")


# 5 -----------------------------------------------------------------------------------
def test_criterion_05_stage1_overfit(report):
    lidar = generate_scene(SceneSpec(seed=0))[0]
    net = NetConfig()
    cfg = TrainConfig(stage=1, iterations=5000, lr=1e-3, net=net, log_every=50, stop_iou=0.95)
    res = train_stage1([lidar], cfg)
    vc = voxelize(lidar, net.grid)
    ev = evaluate_stage1(res.model, Stage1Sample(lidar, vc, derive_targets(vc)))
    edge = max(net.grid.edge)
    # CD is in squared meters; require its root to be within one voxel edge
    ok = ev["iou"] >= 0.95 and ev["cd"] <= edge ** 2 and len(res.losses) <= 5000
    report(5, "stage-1 overfit", ok, f"IoU {ev['iou']:.4f} after {len(res.losses)} iterations, "
           f"CD {ev['cd']:.5f} m^2 (sqrt {np.sqrt(ev['cd']):.4f} m <= {edge} m), {res.seconds:.0f}s")


# 6 -----------------------------------------------------------------------------------
def test_criterion_06_stage2_toy_benchmark(report, tmp_path):
    t0 = time.time()
    scenes = [generate_scene(SceneSpec(seed=s)) for s in range(250)]
    train, test = scenes[:200], scenes[200:]
    target = PredictionTarget(Prediction.NOISE, "l2")
    s1 = train_stage1([l for l, _, _ in train],
                      TrainConfig(stage=1, iterations=TOY_STAGE1_ITERS, net=TOY_NET, log_every=500))
    res = train_stage2([(r, l) for l, r, _ in train],
                       TrainConfig(stage=2, iterations=TOY_STAGE2_ITERS, lr=TOY_STAGE2_LR, net=TOY_NET,
                                   target=target, lr_schedule="cosine", log_every=1000,
                                   out_dir=str(tmp_path)),
                       s1.model)
    model = res.model
    wins, ratios, cds = 0, [], []
    for i, (lidar, radar, _) in enumerate(test):
        dense = model.generate(radar, steps=TOY_STEPS, seed=i)
        cd_gen = chamfer(dense, lidar) if len(dense) else float("inf")
        wins += cd_gen < chamfer(radar, lidar)
        ratios.append(len(dense) / len(radar))
        cds.append(cd_gen)
    secs = time.time() - t0
    frac, ratio = wins / len(test), float(np.mean(ratios))
    ok = frac >= 0.8 and ratio >= 6 and secs < 7200
    report(6, "stage-2 toy benchmark", ok, f"CD wins {wins}/{len(test)} ({100 * frac:.0f}%), "
           f"densification {ratio:.1f}x, median CD {np.median(cds):.4f} m^2, {secs / 60:.1f} min")


# 7 -----------------------------------------------------------------------------------
def test_criterion_07_sampler_oracle(report):
    s = make_schedule(128)
    f0 = np.random.default_rng(7).normal(size=(4, 6, 6))
    c = Tensor(np.zeros_like(f0))

    def noise_oracle(x, t, c):
        ab = s.ab(t)
        return Tensor((x.data - np.sqrt(ab) * f0) / np.sqrt(1.0 - ab))

    err_x0 = np.max(np.abs(sample(c, s.T, s, lambda x, t, c: Tensor(f0), PredictionTarget("x0")) - f0))
    err_eps = np.max(np.abs(sample(c, s.T, s, noise_oracle) - f0))
    big = make_schedule(1024)
    W = np.random.default_rng(0).normal(scale=0.2, size=(4, 4))
    stub = lambda x, t, c: Tensor(np.tanh(np.einsum("ij,jkl->ikl", W, x.data)))
    det = all(np.array_equal(sample(c, n, big, stub, seed=5), sample(c, n, big, stub, seed=5))
              for n in (32, 64, 128))
    ok = err_x0 < 1e-6 and err_eps < 1e-6 and det
    report(7, "sampler oracle", ok, f"x0-oracle err {err_x0:.1e}, noise-oracle err {err_eps:.1e}, "
           f"deterministic for 32/64/128 steps: {det}")


# 8 -----------------------------------------------------------------------------------
def _brute(a, b, tau):
    d_ab = np.min(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2), axis=1)
    d_ba = np.min(np.sum((b[:, None, :] - a[None, :, :]) ** 2, axis=2), axis=1)
    p, r = np.mean(np.sqrt(d_ab) <= tau), np.mean(np.sqrt(d_ba) <= tau)
    return {"cd": np.mean(d_ab) + np.mean(d_ba), "ucd": np.mean(d_ab),
            "hd": max(np.max(np.sqrt(d_ab)), np.max(np.sqrt(d_ba))),
            "mhd": max(np.mean(np.sqrt(d_ab)), np.mean(np.sqrt(d_ba))), "umhd": np.mean(np.sqrt(d_ab)),
            "fscore": 0.0 if p + r == 0 else 2 * p * r / (p + r)}


def _ours(a, b, tau):
    return {"cd": chamfer(a, b), "ucd": ucd(a, b), "hd": hausdorff(a, b), "mhd": mhd(a, b),
            "umhd": umhd(a, b), "fscore": fscore(a, b, tau)}


def test_criterion_08_metric_oracle(report):
    rng = np.random.default_rng(8)
    mismatches, sym, inv = 0, 0.0, 0.0
    for _ in range(100):
        a = rng.normal(size=(rng.integers(1, 201), 3))
        b = rng.normal(size=(rng.integers(1, 201), 3)) + rng.normal(scale=0.3, size=3)
        tau = float(rng.uniform(0.05, 0.5))
        want, got = _brute(a, b, tau), _ours(a, b, tau)
        mismatches += sum(got[k] != want[k] for k in want)
        sym = max(sym, abs(chamfer(a, b) - chamfer(b, a)), abs(hausdorff(a, b) - hausdorff(b, a)),
                  abs(mhd(a, b) - mhd(b, a)), abs(fscore(a, b, tau) - fscore(b, a, tau)))
        T = RigidTransform(random_rotation(rng, 180), rng.uniform(-5, 5, 3))
        moved = _ours(T.apply(a), T.apply(b), tau)
        inv = max(inv, max(abs(moved[k] - got[k]) for k in got if k != "fscore"))
    ok = mismatches == 0 and sym <= 1e-9 and inv <= 1e-9
    report(8, "metric oracle equivalence", ok,
           f"{mismatches} mismatches over 100 pairs x 6 metrics, symmetry gap {sym:.1e}, rigid gap {inv:.1e}")


# 9 -----------------------------------------------------------------------------------
def test_criterion_09_registration(report, tmp_path):
    I = RigidTransform.identity()
    e0 = evaluate_registration(I, I)
    e90 = evaluate_registration(RigidTransform.from_euler(90.0), I)
    analytic = e0.re_deg == 0 and e0.te_m == 0 and e0.success and abs(e90.re_deg - 90) < 1e-9 \
        and not e90.success
    rule = (evaluate_registration(RigidTransform(np.eye(3), np.array([0.49, 0, 0])), I).success
            and not evaluate_registration(RigidTransform(np.eye(3), np.array([0.5, 0, 0])), I).success
            and evaluate_registration(RigidTransform.from_euler(4.99), I).success
            and not evaluate_registration(RigidTransform.from_euler(5.01), I).success)

    rng = np.random.default_rng(9)
    results = []
    for k in range(50):
        d = rng.normal(size=3)
        T = RigidTransform(random_rotation(rng, 10.0), d * rng.uniform(0, 0.5) / np.linalg.norm(d))
        # two independent LiDAR samplings of the same structured scene
        f0, f1 = generate_sequence(SceneSpec(seed=1000 + k), 2, [I, T])
        est = icp(f0.lidar, f1.lidar)
        results.append(evaluate_registration(est.transform, relative_pose(f0.pose, f1.pose)))
    summary = registration_recall(results)

    cfg = tmp_path / "tiny.ini"
    cfg.write_text("[net]\nlatent_dim = 16\nvfe_widths = 8, 16, 16\nlpcr_widths = 8, 8, 4\n"
                   "unet_widths = 16, 32, 64\nres_blocks = 1\ntemb_dim = 32\n[stage1]\niterations = 3\n"
                   "[stage2]\niterations = 3\n[diffusion]\nT = 64\nclip_x0 = 3.0\n[synth]\nn_scenes = 2\n")
    c = ["--config", str(cfg)]
    codes = [cli_main(["synth", *c, "--sequence", "4", "--motion", "1.0", "--out", str(tmp_path / "seq")]),
             cli_main(["train-stage1", *c, "--manifest", str(tmp_path / "seq/manifest.json"),
                       "--out", str(tmp_path / "s1")]),
             cli_main(["train-stage2", *c, "--manifest", str(tmp_path / "seq/manifest.json"),
                       "--stage1", str(tmp_path / "s1/stage1.ckpt"), "--out", str(tmp_path / "s2")]),
             cli_main(["generate", *c, "--checkpoint", str(tmp_path / "s2/stage2.ckpt"), "--input",
                       str(tmp_path / "seq/manifest.json"), "--steps", "32", "--out", str(tmp_path / "gen")]),
             cli_main(["register", *c, "--manifest", str(tmp_path / "seq/manifest.json"), "--enhanced",
                       str(tmp_path / "gen/manifest.json"), "--out", str(tmp_path / "reg")])]
    body = json.loads((tmp_path / "reg/registration.json").read_text()) if not any(codes) else {}
    harness = not any(codes) and {"radar", "enhanced"} <= set(body) \
        and all("/" in body[k]["cells"]["RE(deg)"] for k in body)
    ok = analytic and rule and summary.rr >= 95 and harness
    report(9, "registration", ok, f"analytic cases {analytic}, threshold rule {rule}, ICP RR "
           f"{summary.rr:.0f}% ({summary.n_success}/{summary.n_total}), harness report {harness}")


# 10 ----------------------------------------------------------------------------------
def test_criterion_10_loss_constants_and_freeze(report):
    defaults = LossWeights() == LossWeights(0.9, 0.1) and TrainConfig().weights == LossWeights(0.9, 0.1)
    scenes = [generate_scene(SceneSpec(seed=s)) for s in range(3)]
    t = derive_targets(voxelize(scenes[0][0], SMALL.grid))
    perfect_s1 = stage1_loss({s: (Tensor(t.masks[s]), Tensor(t.offsets[s])) for s in t.masks}, t).item()
    sched = make_schedule(64)
    rng = np.random.default_rng(10)
    f0, eps = rng.normal(size=(16, 8, 8)), rng.normal(size=(16, 8, 8))
    c = Tensor(np.zeros_like(f0))
    perfect_eps = diffusion_loss(f0, c, 30, eps, lambda x, t, c: Tensor(eps), sched).item()
    perfect_x0 = diffusion_loss(f0, c, 30, eps, lambda x, t, c: Tensor(f0), sched,
                                PredictionTarget("x0")).item()

    model = train_stage1([s[0] for s in scenes], TrainConfig(stage=1, iterations=3, net=SMALL)).model
    before = {**model.encoder_lidar.params.arrays("e/"), **model.lpcr.params.arrays("d/")}
    before = {k: v.copy() for k, v in before.items()}
    train_stage2([(s[1], s[0]) for s in scenes],
                 TrainConfig(stage=2, iterations=100, net=SMALL, schedule_T=64, lr=1e-3), model)
    after = {**model.encoder_lidar.params.arrays("e/"), **model.lpcr.params.arrays("d/")}
    frozen = all(np.array_equal(before[k], after[k]) and before[k].tobytes() == after[k].tobytes()
                 for k in before)
    perfect = max(perfect_s1, perfect_eps, perfect_x0)
    ok = defaults and perfect <= 1e-6 and frozen
    report(10, "loss constants and freeze", ok, f"lambda (0.9, 0.1) default {defaults}, worst perfect-"
           f"prediction loss {perfect:.1e}, {len(before)} frozen arrays bitwise equal {frozen}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
