"""Two-stage training at a size that finishes in a few minutes on one CPU core.

Stage 1 fits the LiDAR autoencoder; stage 2 freezes it and trains the radar
encoder plus the conditional denoiser in latent space. The numbers printed at
the end are illustrative only: a few hundred iterations is far from converged.
"""
import logging

import numpy as np

from voxdiff import NetConfig, SceneSpec, TrainConfig, chamfer, generate_scene, train_stage1, train_stage2

logging.basicConfig(level=logging.INFO, format="%(message)s")

net = NetConfig(latent_dim=16, unet_widths=(32, 64, 128))
scenes = [generate_scene(SceneSpec(seed=s)) for s in range(24)]
train, test = scenes[:20], scenes[20:]

s1 = train_stage1([l for l, _, _ in train], TrainConfig(stage=1, iterations=300, net=net, log_every=100))
s2 = train_stage2([(r, l) for l, r, _ in train],
                  TrainConfig(stage=2, iterations=300, lr=1e-3, net=net, log_every=100), s1.model)

for i, (lidar, radar, _) in enumerate(test):
    dense = s2.model.generate(radar, steps=32, seed=i)
    cd = chamfer(dense, lidar) if len(dense) else float("nan")
    print(f"scene {i}: radar {len(radar)} pts CD {chamfer(radar, lidar):.4f} | "
          f"generated {len(dense)} pts CD {cd:.4f}")
