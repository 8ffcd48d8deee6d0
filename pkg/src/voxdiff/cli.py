"""``voxdiff`` command-line entry point.

Every command reads an INI config (``--config``), applies the common flags on
top, echoes the resolved config into its output directory, and exits nonzero
with a one-line diagnostic on failure (leaving a ``FAILED`` marker behind).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .cloudio import load_cloud, save_cloud
from .config import RunConfig, write_schema
from .geometry import RigidTransform, aggregate_frames, crop_fov, remove_ground
from .metrics import evaluate_pair, write_reports
from .model import LatentModel
from .registration import (evaluate_registration, format_table, icp, registration_recall,
                           relative_pose, select_pairs, write_registration_report)
from .synthdata import generate_sequence, load_manifest, write_dataset, write_sequence
from .train import train_stage1, train_stage2

log = logging.getLogger("voxdiff")


def _workers() -> int:
    import os
    return max(1, min(8, os.cpu_count() or 1))


def _write_manifest(path: Path, entries: list[dict], key: str = "frames") -> Path:
    body = []
    for e in entries:
        e = dict(e)
        for k, v in list(e.items()):
            if k in ("lidar", "radar", "pred", "gt", "enhanced") and v is not None:
                e[k] = str(Path(v).resolve())
            if k == "pose":
                e[k] = v.matrix().tolist()
        body.append(e)
    path.write_text(json.dumps({key: body}, indent=1))
    return path


def _load_pairs(path: str) -> list[dict]:
    data = json.loads(Path(path).read_text())
    if "pairs" not in data:
        raise ValueError(f"{path}: expected a pairs manifest with a 'pairs' list")
    base = Path(path).parent
    return [{**p, "pred": str(base / p["pred"]), "gt": str(base / p["gt"]) if p.get("gt") else None}
            for p in data["pairs"]]


# commands ------------------------------------------------------------------------------
def cmd_synth(cfg: RunConfig, args, out: Path) -> None:
    seed = cfg["run"]["seed"]
    if args.sequence:
        spec = cfg.scene(seed)
        step = RigidTransform.from_euler(yaw_deg=args.yaw, translation=(args.motion, 0.0, 0.0))
        frames = generate_sequence(spec, args.sequence, motion=step)
        m = write_sequence(out, frames, spec)
    else:
        n = args.n or cfg["synth"]["n_scenes"]
        m = write_dataset(out, [cfg.scene(seed + i) for i in range(n)])
    print(f"wrote {m}")


def cmd_preprocess(cfg: RunConfig, args, out: Path) -> None:
    p = cfg["preprocess"]
    entries = load_manifest(args.manifest)
    fov = cfg.fov()

    def clean(cloud):
        if p["remove_ground"] and len(cloud) >= 3:
            cloud = remove_ground(cloud, dist_thresh=p["ground_thresh"], max_iters=p["ground_iters"],
                                  seed=cfg["run"]["seed"])
        return crop_fov(cloud, fov)

    new = []
    for i, e in enumerate(entries):
        row = {k: v for k, v in e.items() if k not in ("lidar", "radar")}
        for key in ("lidar", "radar"):
            if key not in e:
                continue
            # multi-frame input: bring the previous frames into frame i's sensor coordinates
            lo = max(0, i - args.frames + 1) if key == "radar" else i
            parts = [(load_cloud(entries[j][key]), relative_pose(entries[j]["pose"], e["pose"]))
                     for j in range(lo, i + 1)]
            cloud = clean(aggregate_frames(parts))
            path = out / f"{i:05d}_{key}.ply"
            save_cloud(cloud, path)
            row[key] = path
        new.append(row)
    print(f"wrote {_write_manifest(out / 'manifest.json', new)}")


def cmd_train1(cfg: RunConfig, args, out: Path) -> None:
    entries = load_manifest(args.manifest)
    res = train_stage1([load_cloud(e["lidar"]) for e in entries], cfg.train(1, str(out)))
    print(f"stage 1 done in {res.seconds:.1f}s, final loss {res.losses[-1]:.5f}, checkpoint {res.checkpoint}")


def cmd_train2(cfg: RunConfig, args, out: Path) -> None:
    entries = load_manifest(args.manifest)
    model = LatentModel.load(args.stage1, expect=cfg.net())
    pairs = [(load_cloud(e["radar"]), load_cloud(e["lidar"])) for e in entries]
    res = train_stage2(pairs, cfg.train(2, str(out)), model)
    print(f"stage 2 done in {res.seconds:.1f}s, final loss {res.losses[-1]:.5f}, checkpoint {res.checkpoint}")


def cmd_generate(cfg: RunConfig, args, out: Path) -> None:
    model = LatentModel.load(args.checkpoint, expect=cfg.net())
    steps, thr = cfg["diffusion"]["steps"], cfg["recon"]["threshold"]
    seed = cfg["run"]["seed"]
    if args.input.endswith(".json"):
        jobs = [(e["radar"], e.get("lidar")) for e in load_manifest(args.input)]
    else:
        jobs = [(args.input, None)]
    pairs = []
    for i, (radar_path, gt) in enumerate(jobs):
        radar = load_cloud(radar_path)
        dense = model.generate(radar, steps=steps, seed=seed + i, threshold=thr, clip_x0=cfg.clip_x0())
        path = out / f"{i:05d}_generated.ply"
        save_cloud(dense, path)
        ratio = len(dense) / max(len(radar), 1)
        log.info("frame %d: %d radar -> %d points (%.1fx)", i, len(radar), len(dense), ratio)
        pairs.append({"name": f"{i:05d}", "pred": path.name, "radar": str(Path(radar_path).resolve()),
                      "gt": str(Path(gt).resolve()) if gt else None, "n_radar": len(radar),
                      "n_generated": len(dense)})
    (out / "manifest.json").write_text(json.dumps({"pairs": pairs}, indent=1))
    print(f"generated {len(pairs)} cloud(s) into {out}")


def cmd_evaluate(cfg: RunConfig, args, out: Path) -> None:
    m = cfg["metrics"]
    if args.manifest:
        pairs = [p for p in _load_pairs(args.manifest) if p["gt"]]
    elif args.pred and args.gt:
        pairs = [{"name": "pair", "pred": args.pred, "gt": args.gt}]
    else:
        raise ValueError("evaluate: give --manifest or both --pred and --gt")
    if not pairs:
        raise ValueError("evaluate: no pairs with ground truth")

    def one(p):
        return evaluate_pair(load_cloud(p["pred"]), load_cloud(p["gt"]), tau=m["fscore_tau"], grid=cfg.bev())

    with ThreadPoolExecutor(_workers()) as pool:
        reports = list(pool.map(one, pairs))
    csv_path, json_path = write_reports(out, [p.get("name", str(i)) for i, p in enumerate(pairs)], reports)
    print(f"wrote {csv_path} and {json_path}")


def cmd_register(cfg: RunConfig, args, out: Path) -> None:
    r = cfg["registration"]
    entries = load_manifest(args.manifest)
    inputs = {"radar": [e["radar"] for e in entries]}
    if args.enhanced:
        gen = _load_pairs(args.enhanced)
        if len(gen) != len(entries):
            raise ValueError(f"register: {len(gen)} enhanced clouds for {len(entries)} frames")
        inputs["enhanced"] = [g["pred"] for g in gen]
    if args.with_lidar:
        inputs["lidar"] = [e["lidar"] for e in entries]
    idx = select_pairs([e["pose"] for e in entries], min_dist=r["min_pair_dist"])
    if not idx:
        raise ValueError("register: no frame pairs exceed the minimum pose distance")
    rows, summaries = [], {}
    for name, paths in inputs.items():
        clouds = [load_cloud(p) for p in paths]

        def one(ij):
            i, j = ij
            gt = relative_pose(entries[i]["pose"], entries[j]["pose"])
            try:
                res = icp(clouds[i], clouds[j], max_iters=r["max_iters"], tol=r["tol"],
                          max_corr_dist=r["max_corr_dist"])
            except ValueError as err:  # degenerate clouds count as failures
                log.warning("pair %s on %s: %s", ij, name, err)
                return evaluate_registration(RigidTransform.identity(), gt, r["re_thresh"], r["te_thresh"])
            return evaluate_registration(res.transform, gt, r["re_thresh"], r["te_thresh"],
                                         res.iterations, res.final_residual)

        with ThreadPoolExecutor(_workers()) as pool:
            results = list(pool.map(one, idx))
        summaries[name] = registration_recall(results)
        rows += [{"pair": f"{i}-{j}", "input": name, "re_deg": res.re_deg, "te_m": res.te_m,
                  "success": int(res.success), "iterations": res.iterations, "residual": res.residual}
                 for (i, j), res in zip(idx, results)]
    write_registration_report(out, rows, summaries)
    print(format_table(summaries))


def cmd_gradcheck(cfg: RunConfig, args, out: Path) -> None:
    from .gradcheck import adjoint_gap, run_gradchecks
    results = run_gradchecks(trials=args.trials, seed=cfg["run"]["seed"])
    lines = [f"{'op':<20}{'max rel err':>14}  status"]
    lines += [f"{r.op:<20}{r.max_rel_error:>14.3e}  {'PASS' if r.passed else 'FAIL'}" for r in results]
    rng = np.random.default_rng(cfg["run"]["seed"])
    gaps = {nd: adjoint_gap(rng, nd) for nd in (2, 3)}
    lines += [f"{f'adjoint_{nd}d':<20}{g:>14.3e}  {'PASS' if g < 1e-9 else 'FAIL'}" for nd, g in gaps.items()]
    text = "\n".join(lines)
    (out / "gradcheck.txt").write_text(text + "\n")
    print(text)
    if not all(r.passed for r in results) or max(gaps.values()) >= 1e-9:
        raise RuntimeError("gradcheck: at least one op failed")


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train-stage1": cmd_train1,
            "train-stage2": cmd_train2, "generate": cmd_generate, "evaluate": cmd_evaluate,
            "register": cmd_register, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--steps", type=int, choices=(32, 64, 128), help="sampling steps")
    common.add_argument("--threshold", type=float, help="LPCR mask threshold")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="voxdiff", description="Latent voxel diffusion for radar point clouds.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="write a synthetic paired dataset")
    p.add_argument("--n", type=int, help="number of scenes (default: [synth] n_scenes)")
    p.add_argument("--sequence", type=int, default=0, help="write one moving-sensor sequence of this many frames")
    p.add_argument("--motion", type=float, default=0.8, help="sensor travel per frame along x, meters")
    p.add_argument("--yaw", type=float, default=2.0, help="sensor yaw per frame, degrees")
    p = sub.add_parser("preprocess", parents=[common], help="ground removal, FOV crop, multi-frame aggregation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--frames", type=int, default=1, help="radar frames aggregated per output frame")
    p = sub.add_parser("train-stage1", parents=[common], help="fit LiDAR encoder + LPCR")
    p.add_argument("--manifest", required=True)
    p = sub.add_parser("train-stage2", parents=[common], help="fit radar encoder + denoiser")
    p.add_argument("--manifest", required=True)
    p.add_argument("--stage1", required=True, help="stage-1 checkpoint")
    p = sub.add_parser("generate", parents=[common], help="radar cloud(s) -> dense cloud(s)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="radar .ply/.xyz or a dataset manifest.json")
    p = sub.add_parser("evaluate", parents=[common], help="metrics over (pred, gt) pairs")
    p.add_argument("--manifest", help="pairs manifest written by generate")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p = sub.add_parser("register", parents=[common], help="ICP registration recall report")
    p.add_argument("--manifest", required=True, help="sequence manifest with poses")
    p.add_argument("--enhanced", help="pairs manifest from generate over the same frames")
    p.add_argument("--with-lidar", action="store_true", help="also register the LiDAR clouds")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every op")
    p.add_argument("--trials", type=int, default=10)
    sub.add_parser("schema", parents=[common], help="write the config schema (all keys, defaults)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = None
    try:
        overrides: dict = {"run": {}, "diffusion": {}, "recon": {}}
        if args.seed is not None:
            overrides["run"]["seed"] = args.seed
        if args.out is not None:
            overrides["run"]["out"] = args.out
        if args.steps is not None:
            overrides["diffusion"]["steps"] = args.steps
        if args.threshold is not None:
            overrides["recon"]["threshold"] = args.threshold
        cfg = RunConfig.load(args.config, overrides=overrides)
        out = Path(cfg["run"]["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "FAILED").unlink(missing_ok=True)
        if args.command == "schema":
            write_schema(out / "schema.ini")
            print(f"wrote {out / 'schema.ini'}")
            return 0
        cfg.dump(out / f"{args.command}.config.ini")
        COMMANDS[args.command](cfg, args, out)
        return 0
    except Exception as err:  # one-line diagnostic, nonzero exit
        msg = str(err).splitlines()[0] if str(err) else type(err).__name__
        print(f"voxdiff {args.command}: error: {msg}", file=sys.stderr)
        if out is not None and out.is_dir():
            (out / "FAILED").write_text(f"{args.command}: {msg}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
