"""Conditional latent-voxel diffusion for radar point-cloud super-resolution.

A small, CPU-only reference implementation: voxelization and the LPCR target
encoding, a numpy autograd engine with the encoder / U-Net denoiser / LPCR
networks built on it, the diffusion schedule and samplers, two-stage training,
point-cloud metrics, ICP registration and a synthetic paired-data generator.
"""
from .geometry import FovSpec, PointCloud, RigidTransform
from .voxel import SCALES, VoxelGridSpec, derive_targets, reconstruct, voxelize
from .diffusion import NoiseSchedule, PredictionTarget, make_schedule, q_sample, sample
from .nets import NetConfig
from .model import LatentModel
from .train import LossWeights, TrainConfig, train_stage1, train_stage2
from .metrics import chamfer, evaluate_pair, fscore, hausdorff
from .registration import evaluate_registration, icp, registration_recall
from .synthdata import SceneSpec, generate_scene, generate_sequence

__version__ = "0.1.0"
