import numpy as np
import pytest
import torch

from poseforge import fixtures, vq
from poseforge.config import PipelineConfig
from poseforge.motion_repr import MotionSequence, encode_repr, toy_layout
from poseforge.pipeline import PlantedFixture, train_toy_models
from poseforge.seeding import derive_seed

torch.set_num_threads(2)


def sinusoid_family_reprs(n=200, length=32, seed=5):
    """Low-dimensional sinusoidal motion family on the toy layout: shared
    base waveforms, per-motion global phase and a small amplitude jitter."""
    layout = toy_layout()
    rng = np.random.default_rng(seed)
    J = layout.joint_count
    base_freq = rng.uniform(0.5, 1.5, (J, 3))
    base_amp = rng.uniform(0.05, 0.25, (J, 3))
    base_phase = rng.uniform(0.0, 2.0 * np.pi, (J, 3))
    reprs = []
    for _ in range(n):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.95, 1.05)
        t = np.arange(length)[:, None, None] / length
        j = amp * base_amp * np.sin(2.0 * np.pi * base_freq * t + base_phase + phase)
        j[:, 0] = 0.0
        orient = np.zeros((length, 3))
        pos = np.zeros((length, 3))
        pos[:, 1] = 0.9 + 0.03 * np.sin(2.0 * np.pi * t[:, 0, 0] + phase)
        reprs.append(encode_repr(MotionSequence(j, orient, pos), layout))
    return reprs


def experiment_config(**overrides) -> PipelineConfig:
    """The committed toy-scale configuration used by pipeline-level tests."""
    base = dict(k_challenging=8, k_nonchallenging=4, sequences_per_pose=2,
                codes=64, code_dim=64, vq_width=32, vq_steps=500, vq_batch=16,
                vq_lr=3e-3, vq_position_bias=3.0, prior_width=64,
                prior_steps=500, prior_batch=12, max_tokens=9, tau=350.0,
                filter_reduce="mean", noise_sigma_mm=10.0, p_artifact=0.3,
                sigma_artifact_mm=80.0)
    base.update(overrides)
    return PipelineConfig(**base)


def experiment_fixture(**overrides) -> PlantedFixture:
    base = dict(corpus_motions=36, corpus_length=28, pool_size=48, test_size=32)
    base.update(overrides)
    return PlantedFixture(**base)


@pytest.fixture(scope="session")
def trained_toy_models():
    """One trained (vqvae, prior, corpus) triple shared by the tests that need
    real models; training is deterministic, seed 0."""
    cfg = experiment_config()
    fx = experiment_fixture()
    corpus = fixtures.build_motion_corpus(
        fx.corpus_motions, fx.corpus_length, derive_seed(0, "corpus"),
        families=fx.corpus_families, static_fraction=fx.corpus_static_fraction)
    vqvae, prior_model, vq_losses, prior_losses = train_toy_models(cfg, corpus, 0)
    return {"config": cfg, "fixture": fx, "corpus": corpus, "vqvae": vqvae,
            "prior": prior_model, "vq_losses": vq_losses,
            "prior_losses": prior_losses}
