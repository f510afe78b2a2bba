"""Command-line interface.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
All run outputs land under a run directory together with a config snapshot
and a log file.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import fixtures, pipeline
from .alignment import build_guidance, render_guidance_svg, save_guidance_jsonl
from .config import PipelineConfig, load_config_file
from .errors import ConfigError, DataError, NumericError, PoseforgeError
from .estimator import ExemplarPoseEstimator
from .filtering import FilterConfig, filter_batch, write_filter_csv
from .geometry import Pose3D
from .manifest import (DatasetManifest, load_manifest, manifest_hash,
                       save_manifest)
from .metrics import MetricReport, mpjpe, pa_mpjpe
from .mining import (CameraRule, default_weights, mine, save_mined_split,
                     write_error_histogram)
from .motion_repr import load_motion, save_motion
from .prior import (GenerationConfig, HashedBagOfWordsEmbedder, load_prior,
                    save_prior, synthesize_motion)
from .seeding import derive_seed
from .vq import load_vqvae, save_vqvae

log = logging.getLogger("poseforge")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _exit_code(exc: PoseforgeError) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_DATA


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PoseforgeError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_exit_code(exc))
    return wrapper


def _load_config(path, overrides) -> PipelineConfig:
    mapping = load_config_file(path) if path else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, val = item.split("=", 1)
        mapping[key.strip()] = val.strip()
    return PipelineConfig.from_mapping(mapping)


def _run_dir(path) -> Path:
    run = Path(path)
    run.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        filename=run / "run.log", level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s", force=True)
    return run


@click.group()
def main():
    """Hard-pose mining and motion-token synthesis of 3D pose data."""


config_option = click.option("--config", "config_path", type=click.Path(exists=True),
                             default=None, help="flat key=value config file")
set_option = click.option("--set", "overrides", multiple=True,
                          help="override a config key (key=value)")


@main.command()
@config_option
@set_option
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--estimator", "estimator_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@handle_errors
def mine_cmd(config_path, overrides, dataset_path, estimator_path, out_dir):
    """Rank a dataset by estimator error and write the mined split."""
    cfg = _load_config(config_path, overrides)
    run = _run_dir(out_dir)
    cfg.write_snapshot(run / "config.snapshot")
    manifest = load_manifest(dataset_path)
    est = ExemplarPoseEstimator.load(estimator_path)
    rows = pipeline.records_as_mining_rows(manifest.records)
    split = mine(rows, est, CameraRule(focal=cfg.focal), default_weights(),
                 k_c=cfg.k_challenging, k_nc=cfg.k_nonchallenging,
                 norm=cfg.mining_norm)
    save_mined_split(split, run / "mined_split.json")
    write_error_histogram(split, run / "error_histogram.csv")
    click.echo(f"mined {len(split.challenging)} challenging / "
               f"{len(split.non_challenging)} non-challenging -> {run}")


main.add_command(mine_cmd, name="mine")


@main.command("train-vqvae")
@config_option
@set_option
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--corpus-size", type=int, default=48)
@click.option("--corpus-length", type=int, default=32)
@handle_errors
def train_vqvae_cmd(config_path, overrides, seed, out_path, corpus_size,
                    corpus_length):
    """Train the motion tokenizer on the procedural corpus."""
    from .motion_repr import default_layout, encode_repr
    from .vq import VqTrainConfig, train_vqvae

    cfg = _load_config(config_path, overrides)
    corpus = fixtures.build_motion_corpus(corpus_size, corpus_length,
                                          derive_seed(seed, "corpus"))
    layout = default_layout()
    reprs = [encode_repr(m, layout) for m, _ in corpus]
    vq_cfg = VqTrainConfig(steps=cfg.vq_steps, batch_size=cfg.vq_batch,
                           lr=cfg.vq_lr, commitment_weight=cfg.commitment_weight,
                           width=cfg.vq_width, codes=cfg.codes,
                           code_dim=cfg.code_dim, downsample=cfg.downsample)
    model, losses = train_vqvae(reprs, vq_cfg, derive_seed(seed, "vqvae"),
                                layout=layout)
    save_vqvae(model, out_path, extra_meta={"final_loss": losses[-1]})
    click.echo(f"trained vqvae ({len(losses)} steps, final loss "
               f"{losses[-1]:.6f}) -> {out_path}")


@main.command("train-prior")
@config_option
@set_option
@click.option("--vqvae", "vqvae_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--corpus-size", type=int, default=48)
@click.option("--corpus-length", type=int, default=32)
@handle_errors
def train_prior_cmd(config_path, overrides, vqvae_path, seed, out_path,
                    corpus_size, corpus_length):
    """Train the token prior against a trained tokenizer."""
    from .motion_repr import encode_repr, make_initial_repr
    from .prior import PriorTrainConfig, embed_text, train_prior
    from .vq import encode_latents, quantize

    cfg = _load_config(config_path, overrides)
    vqvae = load_vqvae(vqvae_path)
    corpus = fixtures.build_motion_corpus(corpus_size, corpus_length,
                                          derive_seed(seed, "corpus"))
    provider = HashedBagOfWordsEmbedder()
    codebook = vqvae.codebook_view()
    rng = np.random.default_rng(derive_seed(seed, "prior-prefix"))
    triples = []
    for motion, caption in corpus:
        repr_ = encode_repr(motion, vqvae.layout)
        target = quantize(codebook, encode_latents(vqvae, repr_))
        frame = int(rng.integers(motion.length))
        prefix_repr = make_initial_repr(Pose3D.all_visible(motion.joints[frame]),
                                        cfg.t_steps, vqvae.layout)
        prefix = quantize(codebook, encode_latents(vqvae, prefix_repr))
        triples.append((embed_text(provider, caption), prefix, target))
    prior_cfg = PriorTrainConfig(steps=cfg.prior_steps, batch_size=cfg.prior_batch,
                                 lr=cfg.prior_lr, width=cfg.prior_width,
                                 heads=cfg.prior_heads, layers=cfg.prior_layers,
                                 max_len=cfg.context_len)
    model, losses = train_prior(triples, prior_cfg, derive_seed(seed, "prior"),
                                codes=cfg.codes)
    save_prior(model, out_path, extra_meta={"final_loss": losses[-1]})
    click.echo(f"trained prior ({len(losses)} steps, final loss "
               f"{losses[-1]:.6f}) -> {out_path}")


@main.command()
@config_option
@set_option
@click.option("--pose", "pose_path", required=True, type=click.Path(exists=True),
              help="JSON file with a 'joints' list")
@click.option("--caption", required=True)
@click.option("--vqvae", "vqvae_path", required=True, type=click.Path(exists=True))
@click.option("--prior", "prior_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", required=True, type=click.Path())
@handle_errors
def synthesize(config_path, overrides, pose_path, caption, vqvae_path,
               prior_path, seed, out_path):
    """Generate a motion around a pose under a caption."""
    cfg = _load_config(config_path, overrides)
    with open(pose_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if "joints" not in payload:
        raise DataError(f"{pose_path}: missing field 'joints'")
    pose = Pose3D.all_visible(np.array(payload["joints"], dtype=np.float64))
    vqvae = load_vqvae(vqvae_path)
    prior = load_prior(prior_path)
    gen_cfg = GenerationConfig(max_tokens=cfg.max_tokens,
                               temperature=cfg.temperature,
                               top_k=cfg.top_k or None, seed=seed)
    motion = synthesize_motion(vqvae, prior, pose, caption,
                               HashedBagOfWordsEmbedder(), gen_cfg,
                               t_steps=cfg.t_steps)
    save_motion(motion, out_path)
    click.echo(f"synthesized {motion.length} frames -> {out_path}")


@main.command()
@config_option
@set_option
@click.option("--motion", "motion_path", required=True, type=click.Path(exists=True))
@click.option("--reference", "reference_path", required=True,
              type=click.Path(exists=True),
              help="JSON file with orientation/translation/camera")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--svg-dir", type=click.Path(), default=None,
              help="also render per-frame stick figures")
@handle_errors
def align(config_path, overrides, motion_path, reference_path, out_path, svg_dir):
    """Align a motion to a reference orientation and emit guidance frames."""
    from .alignment import ReferenceContext
    from .geometry import CameraIntrinsics

    motion = load_motion(motion_path)
    with open(reference_path, "r", encoding="utf-8") as fh:
        ref_raw = json.load(fh)
    for key in ("global_orient", "translation", "focal", "principal"):
        if key not in ref_raw:
            raise DataError(f"{reference_path}: missing field '{key}'")
    ref = ReferenceContext(
        global_orient=np.array(ref_raw["global_orient"], dtype=np.float64),
        shape=float(ref_raw.get("shape", 1.0)),
        translation=np.array(ref_raw["translation"], dtype=np.float64),
        cam=CameraIntrinsics(np.array(ref_raw["focal"], dtype=np.float64),
                             np.array(ref_raw["principal"], dtype=np.float64)))
    frames = build_guidance(motion, ref)
    save_guidance_jsonl(frames, out_path)
    if svg_dir:
        svg_root = Path(svg_dir)
        svg_root.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(frames):
            render_guidance_svg(frame, svg_root / f"frame{i:03d}.svg")
    click.echo(f"wrote {len(frames)} guidance frames -> {out_path}")


@main.command("filter")
@click.option("--tau", type=float, default=120.0)
@click.option("--units", type=click.Choice(["mm", "m"]), default="mm")
@click.option("--norm", type=click.Choice(["l1", "l2"]), default="l1")
@click.option("--reduce", "reduce_", type=click.Choice(["sum", "mean"]),
              default="sum")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True),
              help="JSON-lines of {sample_id, gen, pred} joint arrays")
@click.option("--report", "report_path", required=True, type=click.Path())
@handle_errors
def filter_cmd(tau, units, norm, reduce_, in_path, report_path):
    """Filter (generated, predicted) pose pairs by 3D error."""
    cfg = FilterConfig(tau=tau, units=units, norm=norm, reduce=reduce_)
    pairs, ids = [], []
    with open(in_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                pairs.append((Pose3D.all_visible(np.array(row["gen"])),
                              Pose3D.all_visible(np.array(row["pred"]))))
                ids.append(str(row.get("sample_id", lineno)))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{in_path}:{lineno}: {exc}") from exc
    kept, report = filter_batch(pairs, cfg)
    write_filter_csv(report, cfg, report_path, sample_ids=ids)
    click.echo(f"kept {report.passed}/{report.total} "
               f"(pass rate {report.pass_rate:.3f}) -> {report_path}")


@main.command()
@config_option
@set_option
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--vqvae", "vqvae_path", required=True, type=click.Path(exists=True))
@click.option("--prior", "prior_path", required=True, type=click.Path(exists=True))
@click.option("--estimator", "estimator_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@handle_errors
def run(config_path, overrides, dataset_path, vqvae_path, prior_path,
        estimator_path, out_dir):
    """Run the full synthesis pipeline over a dataset manifest."""
    cfg = _load_config(config_path, overrides)
    run_dir = _run_dir(out_dir)
    cfg.write_snapshot(run_dir / "config.snapshot")
    dataset = load_manifest(dataset_path)
    vqvae = load_vqvae(vqvae_path)
    prior = load_prior(prior_path)
    est = ExemplarPoseEstimator.load(estimator_path)
    manifest = pipeline.run_synthesis(cfg, dataset.records, vqvae, prior, est)
    out_manifest = run_dir / "synthesized.jsonl"
    save_manifest(manifest, out_manifest)
    click.echo(f"synthesized {len(manifest)} records "
               f"(hash {manifest_hash(manifest)[:16]}) -> {out_manifest}")


@main.command()
@config_option
@set_option
@click.option("--seeds", default="0,1", help="comma-separated seed list")
@click.option("--out", "out_dir", required=True, type=click.Path())
@handle_errors
def experiment(config_path, overrides, seeds, out_dir):
    """Run the planted closed-loop experiment across seeds."""
    cfg = _load_config(config_path, overrides)
    run_dir = _run_dir(out_dir)
    cfg.write_snapshot(run_dir / "config.snapshot")
    seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    report = pipeline.run_closed_loop_experiment(
        cfg, seed_list, progress=lambda msg: click.echo(msg))
    payload = report.to_json_dict()
    with open(run_dir / "experiment.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"win rate vs baseline {payload['win_rate_vs_baseline']:.2f}, "
               f"vs random {payload['win_rate_vs_random']:.2f} -> {run_dir}")


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--estimator", "estimator_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--focal", type=float, default=5000.0)
@handle_errors
def evaluate(manifest_path, estimator_path, out_dir, focal):
    """Evaluate an estimator against a manifest's 3D ground truth."""
    run_dir = _run_dir(out_dir)
    dataset = load_manifest(manifest_path)
    est = ExemplarPoseEstimator.load(estimator_path)
    cam_rule = CameraRule(focal=focal)
    values, pa_values, ids = [], [], []
    for rec in dataset.records:
        if rec.gt3d is None:
            continue
        cam = cam_rule.for_sample(rec.gt2d, rec.bbox)
        pred = est.predict(rec.gt3d, cam)
        values.append(mpjpe(pred, rec.gt3d))
        pa_values.append(pa_mpjpe(pred, rec.gt3d))
        ids.append(rec.sample_id)
    if not values:
        raise DataError("manifest has no records with 3D ground truth")
    mp = MetricReport(values, sample_ids=list(ids))
    pa = MetricReport(pa_values, sample_ids=list(ids))
    mp.write_csv(run_dir / "mpjpe.csv")
    mp.write_json_summary(run_dir / "mpjpe.json")
    pa.write_csv(run_dir / "pa_mpjpe.csv")
    pa.write_json_summary(run_dir / "pa_mpjpe.json")
    click.echo(f"mpjpe mean {mp.mean:.2f} mm, pa-mpjpe mean {pa.mean:.2f} mm "
               f"over {mp.count} samples -> {run_dir}")


if __name__ == "__main__":
    main()
