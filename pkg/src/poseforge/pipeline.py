"""End-to-end orchestration.

run_synthesis: mine hard samples, synthesize motions around them, anchor each
motion to a non-challenging reference (orientation alignment + camera),
corrupt as a stand-in for animation artifacts, re-estimate, filter by 3D
error, and emit the surviving frames as synthesized training records.

run_closed_loop_experiment: plant pose populations with a deliberately
under-represented hard family, run the loop, retrain the estimator on its
output and measure whether hard-split error drops versus an equal-budget
random-augmentation control.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from . import fixtures
from .alignment import ReferenceContext, build_guidance
from .config import PipelineConfig
from .errors import DataError
from .estimator import CorruptionModel, ExemplarPoseEstimator
from .filtering import FilterConfig, filter_batch
from .geometry import (CameraIntrinsics, Pose2D, Pose3D, camera_for_bbox,
                       orientation_from_pose, project)
from .manifest import DatasetManifest, SampleRecord
from .metrics import mpjpe
from .mining import CameraRule, default_weights, mine
from .motion_repr import default_layout, encode_repr, make_initial_repr
from .prior import (GenerationConfig, HashedBagOfWordsEmbedder,
                    PriorTrainConfig, embed_text, synthesize_motion,
                    train_prior)
from .seeding import derive_seed
from .skeleton import default_skeleton
from .vq import VqTrainConfig, encode_latents, quantize, train_vqvae

log = logging.getLogger(__name__)


def config_kwargs(config: PipelineConfig) -> dict:
    return {f.name: getattr(config, f.name) for f in fields(config)}


def records_as_mining_rows(records):
    """Adapt SampleRecords to mining rows; the hidden true pose stands in for
    the image (the estimator consumes pose-space proxies)."""
    rows = []
    for r in records:
        if r.gt3d is None:
            raise DataError(f"record {r.sample_id} lacks the 3D image proxy")
        rows.append((r.sample_id, r.gt2d, r.gt3d, r.bbox))
    return rows


def reference_context_from_prediction(pred3d: Pose3D,
                                      cam: CameraIntrinsics) -> ReferenceContext:
    skel = default_skeleton()
    orient = orientation_from_pose(pred3d.joints, skel.index("left_hip"),
                                   skel.index("right_hip"), skel.index("neck"))
    return ReferenceContext(global_orient=orient, shape=1.0,
                            translation=pred3d.joints[0], cam=cam)


def _select_2d(pose2d_full: Pose2D, skel) -> Pose2D:
    sel = skel.indices_2d_in_3d()
    return Pose2D(pose2d_full.joints[sel], pose2d_full.visibility[sel])


def _bbox_of(pose2d: Pose2D):
    pts = pose2d.joints[pose2d.visibility]
    if pts.shape[0] == 0:
        raise DataError("cannot take a bbox of an all-invisible pose")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    size = np.maximum(hi - lo, 1.0)
    return (float(lo[0]), float(lo[1]), float(size[0]), float(size[1]))


def annotate_pose(pose: Pose3D, focal: float, sample_id: str, caption=None,
                  family=None) -> SampleRecord:
    """Project a camera-frame pose into a real SampleRecord: bbox from a
    first centered projection, then ground truth 2D through the bbox camera."""
    skel = default_skeleton()
    probe = project(pose, CameraIntrinsics(np.array([focal, focal]),
                                           np.zeros(2)))
    bbox = _bbox_of(probe)
    cam = camera_for_bbox(bbox, focal=focal)
    gt2d = _select_2d(project(pose, cam), skel)
    return SampleRecord(sample_id=sample_id, gt2d=gt2d, bbox=bbox, gt3d=pose,
                        caption=caption, provenance="real", family=family)


@dataclass
class _Pairing:
    index: int
    sequence: int
    challenging: object  # ScoredSample
    reference: object  # ScoredSample
    caption: str
    cam: CameraIntrinsics


def _build_pairings(config, split, captions, cam_rule):
    """Round-robin: every challenging pose is used once per sequence pass;
    references cycle underneath."""
    if len(split.non_challenging) == 0:
        raise DataError("no non-challenging references mined")
    pairings = []
    idx = 0
    for seq in range(config.sequences_per_pose):
        for chall in split.challenging:
            ref = split.non_challenging[idx % len(split.non_challenging)]
            cam = cam_rule.for_sample(ref.pred2d)
            pairings.append(_Pairing(idx, seq, chall, ref,
                                     captions[chall.sample_id], cam))
            idx += 1
    return pairings


def _synthesize_pairing(pairing, config, vqvae, prior_model, estimator,
                        provider, corruptor, skel):
    pair_seed = derive_seed(config.seed, "pairing", pairing.index)
    gen_cfg = GenerationConfig(
        max_tokens=config.max_tokens, temperature=config.temperature,
        top_k=config.top_k or None, seed=pair_seed)
    motion = synthesize_motion(vqvae, prior_model, pairing.challenging.pred3d,
                               pairing.caption, provider, gen_cfg,
                               t_steps=config.t_steps)
    ref_ctx = reference_context_from_prediction(pairing.reference.pred3d,
                                                pairing.cam)
    frames = build_guidance(motion, ref_ctx, skel)
    pairs = []
    for l, frame in enumerate(frames):
        corrupted = corruptor.corrupt(frame.pose3d,
                                      salt=derive_seed(pair_seed, "frame", l))
        pred = estimator.predict(corrupted, pairing.cam)
        pairs.append((frame.pose3d, pred))
    fcfg = FilterConfig(tau=config.tau, units=config.tau_units,
                        norm=config.filter_norm, reduce=config.filter_reduce)
    _, report = filter_batch(pairs, fcfg)

    records = []
    for l, (frame, err) in enumerate(zip(frames, report.per_sample_err)):
        if err > fcfg.tau_meters:
            continue
        gt2d = _select_2d(frame.pose2d, skel)
        if not gt2d.visibility.any():
            continue
        records.append(SampleRecord(
            sample_id=(f"syn-{pairing.challenging.sample_id}"
                       f"-{pairing.reference.sample_id}"
                       f"-s{pairing.sequence}-f{l:03d}"),
            gt2d=gt2d,
            bbox=_bbox_of(gt2d),
            gt3d=frame.pose3d,
            caption=pairing.caption,
            provenance="synthesized",
            source_challenging=pairing.challenging.sample_id,
            source_reference=pairing.reference.sample_id,
        ))
    return records, report


def run_synthesis(config: PipelineConfig, records, vqvae, prior_model,
                  estimator) -> DatasetManifest:
    """Full synthesis pass over a real dataset; returns the manifest of
    synthesized records.  Per-pairing seeds derive from the config seed by
    stable hashing and the reduction is ordered, so the worker count never
    changes the result."""
    skel = default_skeleton()
    provider = HashedBagOfWordsEmbedder()
    weights = default_weights(skel)
    cam_rule = CameraRule(focal=config.focal)
    corruptor = CorruptionModel(p_artifact=config.p_artifact,
                                sigma_artifact_mm=config.sigma_artifact_mm,
                                seed=derive_seed(config.seed, "corruption"))

    rows = records_as_mining_rows(records)
    split = mine(rows, estimator, cam_rule, weights,
                 k_c=config.k_challenging, k_nc=config.k_nonchallenging,
                 skel=skel, norm=config.mining_norm)
    by_id = {r.sample_id: r for r in records}
    captions = {s.sample_id: (by_id[s.sample_id].caption
                              or "a person holds a difficult pose")
                for s in split.challenging}

    pairings = _build_pairings(config, split, captions, cam_rule)

    def work(pairing):
        try:
            payload = _synthesize_pairing(pairing, config, vqvae, prior_model,
                                          estimator, provider, corruptor, skel)
            return pairing.index, payload, None
        except Exception as exc:  # collected, pipeline continues
            log.warning("pairing %d failed: %s", pairing.index, exc)
            return pairing.index, None, f"{type(exc).__name__}: {exc}"

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, pairings))
    else:
        results = [work(p) for p in pairings]
    results.sort(key=lambda r: r[0])

    all_records, failures = [], []
    total = passed = 0
    for index, payload, error in results:
        if error is not None:
            failures.append({"pairing": index, "error": error})
            continue
        recs, report = payload
        all_records.extend(recs)
        total += report.total
        passed += report.passed
    meta = {
        "pairings": len(pairings),
        "failures": failures,
        "filter_total": total,
        "filter_passed": passed,
        "challenging": [s.sample_id for s in split.challenging],
        "references": [s.sample_id for s in split.non_challenging],
    }
    return DatasetManifest(tuple(all_records), skeleton_ref="default-24",
                           config_hash=config.hash, meta=meta)


# ---------------------------------------------------------------------------
# Closed-loop experiment


@dataclass(frozen=True)
class PlantedFixture:
    """Sizes and composition of the planted populations.

    The hard family is under-represented in the exemplar set (a handful of
    poses versus dozens per easy family) but prominent in the mining pool and
    dominant in the test split."""

    easy_families: tuple = ("walk", "squat", "kick")
    hard_family: str = fixtures.HARD_FAMILY
    exemplars_per_easy_family: int = 60
    hard_exemplars: int = 2
    pool_size: int = 60
    pool_hard_fraction: float = 0.4
    test_size: int = 40
    test_hard_fraction: float = 0.7
    corpus_motions: int = 48
    corpus_length: int = 32
    # the generative corpus oversamples the hard family so the tokenizer
    # spends codes there
    corpus_families: tuple = ("walk", "squat", "kick",
                              "handstand", "handstand", "handstand")
    corpus_static_fraction: float = 0.5


def _planted_records(n, hard_fraction, fixture, rng, focal, prefix):
    records = []
    for i in range(n):
        hard = rng.random() < hard_fraction
        family = fixture.hard_family if hard else (
            fixture.easy_families[int(rng.integers(len(fixture.easy_families)))])
        pose = fixtures.sample_family_pose(family, rng)
        records.append(annotate_pose(pose, focal, f"{prefix}-{i:04d}",
                                     caption=fixtures.caption_for(family, rng),
                                     family=family))
    return records


def _exemplar_camera(pose: Pose3D, focal: float) -> CameraIntrinsics:
    probe = project(pose, CameraIntrinsics(np.array([focal, focal]), np.zeros(2)))
    return camera_for_bbox(_bbox_of(probe), focal=focal)


def _exemplar_samples(fixture, rng, focal):
    samples = []
    for family in fixture.easy_families:
        for _ in range(fixture.exemplars_per_easy_family):
            pose = fixtures.sample_family_pose(family, rng)
            samples.append((pose, _exemplar_camera(pose, focal)))
    for _ in range(fixture.hard_exemplars):
        pose = fixtures.sample_family_pose(fixture.hard_family, rng)
        samples.append((pose, _exemplar_camera(pose, focal)))
    return samples


def train_toy_models(config: PipelineConfig, corpus, seed: int):
    """Train the tokenizer on the corpus, then the prior on its token
    sequences (prefix = tokens of one tiled corpus frame)."""
    layout = default_layout()
    reprs = [encode_repr(m, layout) for m, _ in corpus]
    vq_cfg = VqTrainConfig(steps=config.vq_steps, batch_size=config.vq_batch,
                           lr=config.vq_lr,
                           commitment_weight=config.commitment_weight,
                           width=config.vq_width, codes=config.codes,
                           code_dim=config.code_dim,
                           downsample=config.downsample,
                           position_bias=config.vq_position_bias)
    vqvae, vq_losses = train_vqvae(reprs, vq_cfg, derive_seed(seed, "vqvae"),
                                   layout=layout)

    provider = HashedBagOfWordsEmbedder()
    codebook = vqvae.codebook_view()
    rng = np.random.default_rng(derive_seed(seed, "prior-prefix"))
    triples = []
    for (motion, caption), repr_ in zip(corpus, reprs):
        target = quantize(codebook, encode_latents(vqvae, repr_))
        frame = int(rng.integers(motion.length))
        prefix_pose = Pose3D.all_visible(motion.joints[frame])
        prefix_repr = make_initial_repr(prefix_pose, config.t_steps, layout)
        prefix = quantize(codebook, encode_latents(vqvae, prefix_repr))
        triples.append((embed_text(provider, caption), prefix, target))
    prior_cfg = PriorTrainConfig(steps=config.prior_steps,
                                 batch_size=config.prior_batch,
                                 lr=config.prior_lr, width=config.prior_width,
                                 heads=config.prior_heads,
                                 layers=config.prior_layers,
                                 max_len=config.context_len)
    prior_model, prior_losses = train_prior(triples, prior_cfg,
                                            derive_seed(seed, "prior"),
                                            codes=config.codes)
    return vqvae, prior_model, vq_losses, prior_losses


@dataclass
class ExperimentRow:
    seed: int
    arm: str
    hard_mpjpe_mm: float
    aug_count: int


@dataclass
class ExperimentReport:
    rows: list
    fixture: PlantedFixture

    def arm_values(self, arm: str) -> dict:
        return {r.seed: r.hard_mpjpe_mm for r in self.rows if r.arm == arm}

    @property
    def win_rate_vs_baseline(self) -> float:
        base, synth = self.arm_values("baseline"), self.arm_values("synth_aug")
        return float(np.mean([synth[s] < base[s] for s in sorted(base)]))

    @property
    def win_rate_vs_random(self) -> float:
        rand, synth = self.arm_values("random_aug"), self.arm_values("synth_aug")
        return float(np.mean([synth[s] < rand[s] for s in sorted(rand)]))

    def to_json_dict(self) -> dict:
        return {
            "rows": [{"seed": r.seed, "arm": r.arm,
                      "hard_mpjpe_mm": r.hard_mpjpe_mm,
                      "aug_count": r.aug_count} for r in self.rows],
            "win_rate_vs_baseline": self.win_rate_vs_baseline,
            "win_rate_vs_random": self.win_rate_vs_random,
        }


def _hard_split_mpjpe(estimator, test_records, hard_family, focal) -> float:
    errs = []
    cam_rule = CameraRule(focal=focal)
    for rec in test_records:
        if rec.family != hard_family:
            continue
        cam = cam_rule.for_sample(rec.gt2d, rec.bbox)
        pred = estimator.predict(rec.gt3d, cam)
        errs.append(mpjpe(pred, rec.gt3d))
    if not errs:
        raise DataError("test split contains no hard-family records")
    return float(np.mean(errs))


def run_closed_loop_experiment(config: PipelineConfig, seeds,
                               fixture: PlantedFixture | None = None,
                               progress=None) -> ExperimentReport:
    """Per seed: plant populations, train toy models, run the synthesis loop,
    retrain the estimator three ways (baseline / +random poses / +synthesized)
    and compare hard-split error."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise DataError("experiment needs at least 2 seeds")
    fixture = fixture or PlantedFixture()
    rows = []
    for seed in seeds:
        rng = np.random.default_rng(derive_seed(seed, "fixture"))
        exemplars = _exemplar_samples(fixture, rng, config.focal)
        base_estimator = ExemplarPoseEstimator.fit(
            exemplars, k=config.k_neighbors,
            noise_sigma_mm=config.noise_sigma_mm,
            seed=derive_seed(seed, "estimator"))
        pool = _planted_records(fixture.pool_size, fixture.pool_hard_fraction,
                                fixture, rng, config.focal, prefix=f"pool{seed}")
        test = _planted_records(fixture.test_size, fixture.test_hard_fraction,
                                fixture, rng, config.focal, prefix=f"test{seed}")

        corpus = fixtures.build_motion_corpus(
            fixture.corpus_motions, fixture.corpus_length,
            derive_seed(seed, "corpus"), families=fixture.corpus_families,
            static_fraction=fixture.corpus_static_fraction)
        vqvae, prior_model, _, _ = train_toy_models(config, corpus, seed)

        run_cfg = PipelineConfig(**{**config_kwargs(config),
                                    "seed": derive_seed(seed, "pipeline")})
        manifest = run_synthesis(run_cfg, pool, vqvae, prior_model,
                                 base_estimator)
        cam_rule = CameraRule(focal=config.focal)
        synth_samples = [(r.gt3d, cam_rule.for_sample(r.gt2d, r.bbox))
                         for r in manifest.records]

        aug_rng = np.random.default_rng(derive_seed(seed, "random-aug"))
        random_samples = []
        for _ in range(len(synth_samples)):
            pose = fixtures.random_pose(aug_rng)
            random_samples.append((pose, _exemplar_camera(pose, config.focal)))

        arms = {
            "baseline": base_estimator,
            "random_aug": base_estimator.with_added_exemplars(random_samples),
            "synth_aug": base_estimator.with_added_exemplars(synth_samples),
        }
        for arm, est in arms.items():
            err = _hard_split_mpjpe(est, test, fixture.hard_family, config.focal)
            rows.append(ExperimentRow(seed, arm, err, len(synth_samples)))
        if progress:
            vals = {r.arm: round(r.hard_mpjpe_mm, 1) for r in rows[-3:]}
            progress(f"seed {seed}: {vals} aug={len(synth_samples)}")
    return ExperimentReport(rows, fixture)
