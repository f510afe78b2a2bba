import numpy as np
import pytest
import torch

from conftest import experiment_config, experiment_fixture
from poseforge import fixtures, pipeline as pl
from poseforge.config import PipelineConfig
from poseforge.errors import DataError
from poseforge.estimator import CorruptionModel
from poseforge.filtering import FilterConfig, err3d
from poseforge.manifest import manifest_hash
from poseforge.motion_repr import default_layout
from poseforge.prior import MotionTokenPrior
from poseforge.seeding import derive_seed
from poseforge.vq import MotionVqvae


class EndPrior(MotionTokenPrior):
    """Emits END immediately: generation returns the prefix verbatim."""

    def forward(self, cond, tokens):
        b, s = tokens.shape
        logits = torch.zeros(b, s + 1, self.codes + 1)
        logits[..., self.end_token] = 50.0
        return logits


class PerfectEstimator:
    """Returns the hidden pose unchanged (zero-error oracle estimator)."""

    def predict(self, image_ref, cam):
        return image_ref


def tiny_models(codes=8):
    layout = default_layout()
    vqvae = MotionVqvae(layout, codes=codes, code_dim=16, width=8, downsample=4)
    prior = EndPrior(codes, d_text=512, width=16, heads=2, layers=1, max_len=64)
    return vqvae, prior


def pool_records(n=4, seed=0):
    rng = np.random.default_rng(seed)
    fams = ["walk", "squat", "kick", "handstand"]
    return [pl.annotate_pose(fixtures.sample_family_pose(fams[i % 4], rng),
                             5000.0, f"r{i}",
                             caption=fixtures.caption_for(fams[i % 4], rng),
                             family=fams[i % 4])
            for i in range(n)]


class TestRunSynthesis:
    def test_degenerate_trace_keeps_all_prefix_frames(self):
        # END-emitting prior, no corruption, perfect estimator: every frame of
        # the decoded prefix (M*r = 7*4 = 28) survives
        vqvae, prior = tiny_models()
        cfg = PipelineConfig(k_challenging=1, k_nonchallenging=1,
                             sequences_per_pose=1, codes=8, code_dim=16,
                             p_artifact=0.0, tau=1e9, seed=3)
        manifest = pl.run_synthesis(cfg, pool_records(), vqvae, prior,
                                    PerfectEstimator())
        assert len(manifest) == 28
        assert manifest.meta["filter_total"] == 28
        assert manifest.meta["failures"] == []
        rec = manifest.records[0]
        assert rec.provenance == "synthesized"
        assert rec.source_challenging and rec.source_reference

    def test_tiny_tau_gives_empty_valid_manifest(self):
        vqvae, prior = tiny_models()
        cfg = PipelineConfig(k_challenging=1, k_nonchallenging=1,
                             sequences_per_pose=1, codes=8, code_dim=16,
                             p_artifact=0.3, tau=1e-9, tau_units="m", seed=3)
        manifest = pl.run_synthesis(cfg, pool_records(), vqvae, prior,
                                    pl.ExemplarPoseEstimator.fit(
                                        [(r.gt3d, pl._exemplar_camera(r.gt3d, 5000.0))
                                         for r in pool_records(6, 9)], k=2))
        assert len(manifest) == 0
        assert manifest.meta["filter_total"] > 0

    def test_round_robin_bound(self):
        vqvae, prior = tiny_models()
        cfg = PipelineConfig(k_challenging=2, k_nonchallenging=2,
                             sequences_per_pose=2, codes=8, code_dim=16,
                             p_artifact=0.0, tau=1e9, seed=1)
        manifest = pl.run_synthesis(cfg, pool_records(6, seed=2), vqvae, prior,
                                    PerfectEstimator())
        assert manifest.meta["pairings"] == 4
        assert len(manifest) <= 2 * 2 * 7 * 4

    def test_deterministic_across_runs_and_workers(self):
        vqvae, prior = tiny_models()
        base = dict(k_challenging=2, k_nonchallenging=1, sequences_per_pose=1,
                    codes=8, code_dim=16, p_artifact=0.3, tau=1e9, seed=7)
        records = pool_records(5, seed=4)
        h = [manifest_hash(pl.run_synthesis(PipelineConfig(workers=w, **base),
                                            records, vqvae, prior,
                                            PerfectEstimator()))
             for w in (1, 1, 4)]
        assert h[0] == h[1] == h[2]

    def test_kept_records_reverify_within_tau(self):
        # recompute each kept frame's error through the same deterministic
        # corruption + estimation chain and re-check the threshold
        vqvae, prior = tiny_models()
        records = pool_records(6, seed=5)
        est = PerfectEstimator()
        # the perfect estimator sees only the corruption, so half the frames
        # straddle a mid-range threshold
        cfg = PipelineConfig(k_challenging=2, k_nonchallenging=2,
                             sequences_per_pose=1, codes=8, code_dim=16,
                             p_artifact=0.5, sigma_artifact_mm=300.0,
                             tau=1000.0, seed=13)
        manifest = pl.run_synthesis(cfg, records, vqvae, prior, est)
        assert 0 < len(manifest) < manifest.meta["filter_total"]
        fcfg = FilterConfig(tau=cfg.tau, units=cfg.tau_units, norm=cfg.filter_norm,
                            reduce=cfg.filter_reduce)
        corruptor = CorruptionModel(p_artifact=cfg.p_artifact,
                                    sigma_artifact_mm=cfg.sigma_artifact_mm,
                                    seed=derive_seed(cfg.seed, "corruption"))
        # pairing index by construction: with one sequence pass it is the
        # position in the mined challenging order
        chall_order = manifest.meta["challenging"]
        from poseforge.mining import CameraRule
        cam_rule = CameraRule(cfg.focal)
        for rec in manifest.records:
            pairing_index = chall_order.index(rec.source_challenging)
            frame = int(rec.sample_id.rsplit("-f", 1)[1])
            pair_seed = derive_seed(cfg.seed, "pairing", pairing_index)
            corrupted = corruptor.corrupt(
                rec.gt3d, salt=derive_seed(pair_seed, "frame", frame))
            # the descriptor ignores the principal point and the focal is
            # shared, so the record's own bbox camera reproduces the
            # pipeline's prediction exactly
            cam = cam_rule.for_sample(rec.gt2d, rec.bbox)
            pred = est.predict(corrupted, cam)
            err = err3d(pred, rec.gt3d, norm=fcfg.norm, reduce=fcfg.reduce)
            assert err <= fcfg.tau_meters + 1e-9

    def test_missing_gt3d_rejected(self):
        vqvae, prior = tiny_models()
        records = pool_records(3, seed=6)
        from dataclasses import replace
        records[0] = replace(records[0], gt3d=None)
        cfg = PipelineConfig(k_challenging=1, k_nonchallenging=1,
                             sequences_per_pose=1, codes=8, code_dim=16)
        with pytest.raises(DataError, match="image proxy"):
            pl.run_synthesis(cfg, records, vqvae, prior, PerfectEstimator())


class TestClosedLoop:
    def test_rows_shape_and_zero_synth_equals_baseline(self):
        # tau so small nothing survives: the synth arm must equal baseline
        cfg = experiment_config(tau=1e-12, tau_units="m", vq_steps=20,
                                prior_steps=20)
        fx = experiment_fixture(pool_size=12, test_size=10, corpus_motions=8,
                                exemplars_per_easy_family=10, hard_exemplars=2)
        report = pl.run_closed_loop_experiment(cfg, seeds=[0, 1], fixture=fx)
        assert len(report.rows) == 2 * 3
        base = report.arm_values("baseline")
        synth = report.arm_values("synth_aug")
        for seed in base:
            assert synth[seed] == base[seed]

    def test_needs_two_seeds(self):
        with pytest.raises(DataError):
            pl.run_closed_loop_experiment(experiment_config(), seeds=[0])

    def test_report_json_shape(self):
        rows = [pl.ExperimentRow(0, "baseline", 100.0, 5),
                pl.ExperimentRow(0, "random_aug", 99.0, 5),
                pl.ExperimentRow(0, "synth_aug", 90.0, 5),
                pl.ExperimentRow(1, "baseline", 100.0, 5),
                pl.ExperimentRow(1, "random_aug", 89.0, 5),
                pl.ExperimentRow(1, "synth_aug", 95.0, 5)]
        report = pl.ExperimentReport(rows, pl.PlantedFixture())
        payload = report.to_json_dict()
        assert payload["win_rate_vs_baseline"] == 1.0
        assert payload["win_rate_vs_random"] == 0.5
        assert len(payload["rows"]) == 6
