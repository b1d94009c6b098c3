"""End-to-end orchestration behind the command-line interface.

Detection input is a JSON-lines manifest, one video per line::

    {"video_id": "v1",
     "frames": "v1.vid",            # raw blob, PGM/PPM file or directory
     "features": "v1_feat.bin",     # alternative to "frames"
     "categories": ["fighting", "fire"],
     "frame_labels": [0, 1, ...],   # optional ground truth
     "pixel_labels": [{"size": [H, W], "counts": [...]}, ...],  # optional
     "synthetic": {...}}            # scene record written by ``synth``

Relative paths are resolved against the manifest's directory. Every JSON
output carries a ``provenance`` block with the config hash, stage
versions and a sha256 of the rest of the document, so edits are
detectable with :func:`verify_provenance`.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig
from .decoder import DecoderWeights, ScoreBundle, decode, seg_loss
from .encoders import encode_text, encode_vision, load_vision_features
from .errors import ContractViolation, DataError, MetricUndefined, ProviderError, StageError
from .exposure_sampler import build_exposure_dataset, read_sources, write_exposure
from .masks import decode_video_rle, encode_video_rle
from .metrics import EvalRecord, average_precision, pixel_auc, roc_auc
from .numerics import Rng, string_seed
from .projector import ProjectorWeights, frame_cross_attention, project
from .semantic_provider import (FixtureProvider, SubprocessProvider, SyntheticProvider,
                                extract_semantic, render_prompt)
from .synthetic import generate_synthetic, synthetic_suite
from .tensor_io import (load_frames, read_matrix, read_tensor, sha256_file, sidecar_path, write_raw_video,
                        write_tensor)
from .token_compression import TokenSet, compress


STAGE_VERSIONS = {
    "package": __version__,
    "sampler": "1", "encode": "1", "compress": "1", "semantic": "1",
    "project": "1", "decode": "1", "metrics": "1",
}

RANDOM_WEIGHTS_NOTICE = (
    "notice: projector/decoder weights are untrained random initialisations; "
    "scores on real data carry no detection claim")


# -- provenance ---------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def with_provenance(doc: dict, cfg: PipelineConfig, extra: dict | None = None) -> dict:
    body = dict(doc)
    prov = {"config_hash": cfg.config_hash(), "stages": STAGE_VERSIONS}
    if extra:
        prov.update(extra)
    body["provenance"] = prov
    body["provenance"]["sha256"] = hashlib.sha256(_canonical(body).encode()).hexdigest()
    return body


def verify_provenance(path) -> bool:
    doc = json.loads(Path(path).read_text())
    prov = dict(doc.get("provenance", {}))
    claimed = prov.pop("sha256", None)
    doc["provenance"] = prov
    return claimed == hashlib.sha256(_canonical(doc).encode()).hexdigest()


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def array_digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


# -- manifests ----------------------------------------------------------------

def read_manifest(path) -> list[dict]:
    p = Path(path)
    try:
        lines = p.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {p}: {exc}") from exc
    entries = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            e = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{p}:{n}: {exc}") from exc
        if "video_id" not in e or not e.get("categories"):
            raise DataError(f"{p}:{n}: entries need video_id and non-empty categories")
        if "frames" not in e and "features" not in e:
            raise DataError(f"{p}:{n}: entry needs 'frames' or 'features'")
        e["_base"] = str(p.parent)
        entries.append(e)
    ids = [e["video_id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"{p}: duplicate video ids")
    return sorted(entries, key=lambda e: e["video_id"])


def _resolve(entry: dict, key: str) -> Path:
    p = Path(entry[key])
    return p if p.is_absolute() else Path(entry["_base"]) / p


def ground_truth(entry: dict):
    labels = entry.get("frame_labels")
    masks = decode_video_rle(entry["pixel_labels"]) if entry.get("pixel_labels") else None
    return (np.asarray(labels, dtype=np.int64) if labels is not None else None), masks


# -- providers and weights ----------------------------------------------------

class OracleProvider:
    """Verification-only provider for synthetic scenes.

    Returns a vector whose first entry is the largest brightness channel
    among the compressed tokens minus the scene's known background level;
    all other entries are zero.
    """

    provider_id = "oracle"

    def __init__(self, dim: int, background_level: float):
        self.dim = dim
        self.background_level = background_level

    def extract(self, visual, prompt, sample_id=None):
        v = np.zeros(self.dim)
        v[0] = visual.compressed[:, 0].max() - self.background_level
        return v


def oracle_decoder_weights(cfg: PipelineConfig, background_level: float,
                           pixel_gain: float = 10.0, frame_gain: float = 10.0,
                           sharpness: float = 200.0, margin: float = 0.05) -> DecoderWeights:
    """Hand-set decoder weights for synthetic scenes.

    The encoder's channel 0 is the patch mean intensity. This preset copies
    it into the patch embedding, makes pixel logits
    ``pixel_gain * (patch mean - background)``, and lets every token read a
    sharp softmax-max of patch brightness into channel 4, from which the
    object head forms ``frame_gain * (max brightness - background - margin)``.
    All other attention and MLP paths are zeroed, so they reduce to identity.
    """
    prompt_dim, vision_dim = cfg.projector.prompt_dim, cfg.encoder.vision_dim
    d = cfg.decoder
    w = DecoderWeights.init(cfg.run.seed, vision_dim, prompt_dim, d.pixel_dim, d.depth, d.mlp_dim)
    eye = np.eye(prompt_dim)
    w.w_img = np.zeros((vision_dim, prompt_dim))
    w.w_img[0, 0] = 1.0
    w.b_img = np.zeros(prompt_dim)
    w.mask_token, w.obj_token = eye[1].copy(), eye[2].copy()
    for block in w.blocks:
        for att in (block.cross, block.self_attn, block.back):
            for m in (att.wq, att.wk, att.wv, att.wo):
                m[:] = 0.0
        block.mlp.w1[:] = 0.0
        block.mlp.w2[:] = 0.0
    first = w.blocks[0]
    first.norm_cross.gain[:] = 0.0
    first.norm_cross.bias[:] = eye[3]
    first.cross.wq[3, 0] = sharpness * np.sqrt(first.cross.wq.shape[1])
    first.cross.wk[0, 0] = 1.0
    first.cross.wv[0, 0] = 1.0
    first.cross.wo[0, 4] = 1.0
    w.w_hyper = np.zeros_like(w.w_hyper)
    w.w_hyper[1, 0] = pixel_gain
    w.w_up = np.zeros_like(w.w_up)
    w.w_up[0, 0] = 1.0
    w.b_mask = np.asarray(-pixel_gain * background_level)
    w.w_obj = np.zeros(prompt_dim)
    w.w_obj[4] = frame_gain
    w.b_obj = np.asarray(-frame_gain * (background_level + margin))
    return w


def oracle_provider_wiring(entry: dict, cfg: PipelineConfig):
    """Provider and decoder preset that score a synthetic scene without training."""
    scene = entry.get("synthetic")
    if not scene:
        raise ProviderError(f"{entry.get('video_id')}: oracle provider refuses non-synthetic input")
    level = float(scene["background_level"])
    return OracleProvider(cfg.semantic.semantic_dim, level), oracle_decoder_weights(cfg, level)


def make_provider(cfg: PipelineConfig):
    s = cfg.semantic
    if s.provider == "synthetic":
        return SyntheticProvider(s.semantic_dim, cfg.run.seed)
    if s.provider == "fixture":
        return FixtureProvider.load(s.fixture_path, s.semantic_dim)
    if s.provider == "subprocess":
        return SubprocessProvider(s.command.split(), s.semantic_dim, s.timeout)
    return None  # oracle: built per video


def make_weights(cfg: PipelineConfig):
    p, d, e = cfg.projector, cfg.decoder, cfg.encoder
    proj = ProjectorWeights.init(cfg.run.seed, e.text_dim, e.vision_dim, cfg.semantic.semantic_dim, p.attn_dim,
                                 p.frame_dim, p.prompt_dim, p.num_queries, p.depth, p.mlp_dim)
    dec = DecoderWeights.init(cfg.run.seed, e.vision_dim, p.prompt_dim, d.pixel_dim, d.depth, d.mlp_dim)
    if cfg.run.weights_dir:
        root = Path(cfg.run.weights_dir)
        proj = ProjectorWeights.load(root / "projector", proj)
        dec = DecoderWeights.load(root / "decoder", dec)
    return proj, dec


# -- detection ------------------------------------------------------------------

def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ContractViolation, DataError, ProviderError, OSError) as exc:
        raise StageError(name, exc) from exc


def detect_video(entry: dict, cfg: PipelineConfig, weights, provider):
    """Run one video through every stage; returns ``(bundle, digests, loss, meta)``."""
    vid = entry["video_id"]
    proj_w, dec_w = weights
    if cfg.semantic.provider == "oracle":
        provider, dec_w = _stage("semantic_provider", oracle_provider_wiring, entry, cfg)

    if "features" in entry:
        vf = _stage("encoders", load_vision_features, _resolve(entry, "features"))
    else:
        frames = _stage("encoders", load_frames, _resolve(entry, "frames"))
        e = cfg.encoder
        vf = _stage("encoders", encode_vision, frames, e.patch_size, e.vision_dim, cfg.run.seed)
    tokens = TokenSet(vf.tokens(), (vf.frames,) + tuple(vf.patch_grid))
    comp = _stage("token_compression", compress, tokens, cfg.compression)

    rng = Rng(string_seed(cfg.run.seed, "prompt/" + vid))
    prompt = _stage("semantic_provider", render_prompt, entry["categories"], cfg.semantic.template, rng)
    sem = _stage("semantic_provider", extract_semantic, comp, prompt, provider, vid)

    cats = _stage("encoders", encode_text, entry["categories"], cfg.encoder.text_dim, cfg.run.seed)
    frame_features = _stage("projector", frame_cross_attention, cats, vf, proj_w)
    proj = _stage("projector", project, sem, frame_features, proj_w)
    bundle = _stage("decoder", decode, proj, vf, dec_w, cfg.decoder.upsample)

    digests = {
        "encode": array_digest(vf.features),
        "compress": array_digest(comp.compressed, comp.background_indices),
        "semantic": array_digest(sem.vector),
        "project": array_digest(proj.prompts),
        "decode": array_digest(bundle.frame_logits, bundle.pixel_logits),
    }
    labels, masks = ground_truth(entry)
    loss = None
    if labels is not None and masks is not None:
        value, _, parts = _stage("decoder", seg_loss, bundle.frame_logits, bundle.pixel_logits,
                                 labels, masks, cfg.loss)
        loss = {"total": value, **parts}
    meta = {"prompt": prompt.rendered, "tokens_in": len(tokens), "tokens_out": comp.num_tokens}
    return bundle, digests, loss, meta


_worker_cache: dict = {}


def _detect_worker(args):
    entry, cfg = args
    key = cfg.config_hash()
    if key not in _worker_cache:
        _worker_cache.clear()
        _worker_cache[key] = (make_weights(cfg), make_provider(cfg))
    weights, provider = _worker_cache[key]
    return detect_video(entry, cfg, weights, provider)


def write_video_outputs(out_dir: Path, entry: dict, bundle: ScoreBundle, digests, loss, meta,
                        cfg: PipelineConfig) -> None:
    vdir = out_dir / "videos" / entry["video_id"]
    vdir.mkdir(parents=True, exist_ok=True)
    write_tensor(vdir / "pixel_scores.bin", bundle.pixel_scores)
    labels, _ = ground_truth(entry)
    doc = {
        "video_id": entry["video_id"],
        "frame_scores": bundle.frame_scores.tolist(),
        "frame_logits": bundle.frame_logits.tolist(),
        "pixel_shape": list(bundle.pixel_scores.shape),
        "pixel_scores_sha256": json.loads((vdir / "pixel_scores.bin.json").read_text())["sha256"],
        "loss": loss,
        **meta,
    }
    write_json(vdir / "scores.json", with_provenance(doc, cfg, {"stage_digests": digests}))
    (vdir / "curve.csv").write_text(_curve_csv([(entry["video_id"], bundle.frame_scores, labels)]))


def _curve_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["video_id", "frame", "score", "label"])
    for vid, scores, labels in rows:
        for t, s in enumerate(scores):
            writer.writerow([vid, t, repr(float(s)), "" if labels is None else int(labels[t])])
    return buf.getvalue()


def _safe_metric(fn, *args):
    try:
        return fn(*args), None
    except MetricUndefined as exc:
        return None, str(exc)


def compute_metrics(results: list[dict]) -> dict:
    """Metrics over the labelled videos in ``results``.

    Each result is ``{"video_id", "frame_scores", "frame_labels", "pixel_scores", "pixel_labels"}``
    with labels set to ``None`` when ground truth is absent.
    """
    records = [EvalRecord(r["video_id"], r["frame_scores"], r["frame_labels"],
                          r["pixel_scores"], r["pixel_labels"])
               for r in results if r["frame_labels"] is not None]
    out = {"videos": len(results), "labelled_videos": len(records),
           "frames": int(sum(len(r["frame_scores"]) for r in results)),
           "frame_auc": None, "frame_ap": None, "pixel_auc": None, "notes": []}
    if records:
        scores = np.concatenate([r.frame_scores for r in records])
        labels = np.concatenate([r.frame_labels for r in records])
        for key, fn in (("frame_auc", roc_auc), ("frame_ap", average_precision)):
            out[key], note = _safe_metric(fn, scores, labels)
            if note:
                out["notes"].append(f"{key}: {note}")
    with_pixels = [r for r in records if r.pixel_labels is not None and r.pixel_scores is not None]
    if with_pixels:
        out["pixel_auc"], note = _safe_metric(pixel_auc, with_pixels)
        if note:
            out["notes"].append(f"pixel_auc: {note}")
    return out


def write_report(out_dir: Path, results: list[dict], cfg: PipelineConfig) -> dict:
    metrics = compute_metrics(results)
    write_json(out_dir / "metrics.json", with_provenance(metrics, cfg))
    rows = [(r["video_id"], r["frame_scores"], r["frame_labels"]) for r in results]
    (out_dir / "frame_scores.csv").write_text(_curve_csv(rows))
    return metrics


def _result(entry: dict, frame_scores, pixel_scores) -> dict:
    labels, masks = ground_truth(entry)
    return {"video_id": entry["video_id"], "frame_scores": np.asarray(frame_scores),
            "frame_labels": labels, "pixel_scores": pixel_scores, "pixel_labels": masks}


def run_detect(cfg: PipelineConfig, manifest_path, out_dir) -> dict:
    entries = read_manifest(manifest_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not entries:
        return write_report(out, [], cfg)
    if cfg.semantic.provider != "oracle" and not cfg.run.weights_dir and not all(
            e.get("synthetic") for e in entries):
        print(RANDOM_WEIGHTS_NOTICE, file=sys.stderr)
    jobs = [(e, cfg) for e in entries]
    if cfg.run.workers > 1:
        with ProcessPoolExecutor(cfg.run.workers) as pool:
            results = list(pool.map(_detect_worker, jobs))
    else:
        weights = make_weights(cfg)
        provider = make_provider(cfg)
        try:
            results = [detect_video(e, cfg, weights, provider) for e in entries]
        finally:
            if hasattr(provider, "close"):
                provider.close()
    records = []
    for entry, (bundle, digests, loss, meta) in zip(entries, results):
        write_video_outputs(out, entry, bundle, digests, loss, meta, cfg)
        records.append(_result(entry, bundle.frame_scores, bundle.pixel_scores))
    return write_report(out, records, cfg)


def run_eval(cfg: PipelineConfig, scores_dir, manifest_path, out_dir=None) -> dict:
    """Recompute metrics from the files written by :func:`run_detect`."""
    entries = read_manifest(manifest_path)
    sdir = Path(scores_dir)
    records = []
    for entry in entries:
        vdir = sdir / "videos" / entry["video_id"]
        try:
            doc = json.loads((vdir / "scores.json").read_text())
        except (OSError, ValueError) as exc:
            raise DataError(f"missing or unreadable scores for {entry['video_id']}: {exc}") from exc
        if not verify_provenance(vdir / "scores.json"):
            raise DataError(f"{vdir / 'scores.json'}: provenance digest mismatch")
        if sha256_file(vdir / "pixel_scores.bin") != doc["pixel_scores_sha256"]:
            raise DataError(f"{vdir / 'pixel_scores.bin'}: digest mismatch")
        pixels = read_tensor(vdir / "pixel_scores.bin")
        records.append(_result(entry, doc["frame_scores"], pixels))
    out = Path(out_dir) if out_dir else sdir
    out.mkdir(parents=True, exist_ok=True)
    return write_report(out, records, cfg)


# -- other subcommands --------------------------------------------------------------

def run_sampler(cfg: PipelineConfig, source_path, out_path) -> Path:
    sources = read_sources(source_path)
    samples = build_exposure_dataset(sources, cfg.sampler)
    write_exposure(out_path, samples)
    out = Path(out_path)
    doc = {"file": out.name, "sha256": sha256_file(out), "samples": len(samples),
           "anomalous": sum(s.is_anomalous for s in samples)}
    write_json(out.with_name(out.name + ".provenance.json"), with_provenance(doc, cfg))
    return out


def run_compress(cfg: PipelineConfig, tokens_path, out_path) -> Path:
    z = read_matrix(tokens_path)
    result = compress(TokenSet(z), cfg.compression)
    meta = {
        "background_indices": result.background_indices.tolist(),
        "assignment": result.assignment.tolist(),
        "densities": result.densities.tolist(),
        "attention": result.attention.tolist(),
        "tokens_in": int(z.shape[0]),
        "tokens_out": result.num_tokens,
        "k": cfg.compression.k,
        "ratio": cfg.compression.ratio,
        "epsilon": cfg.compression.epsilon,
    }
    write_tensor(out_path, result.compressed, meta)
    side = sidecar_path(out_path)
    write_json(side, with_provenance(json.loads(side.read_text()), cfg))
    return Path(out_path)


def run_synth(out_dir, count: int = 20, seed: int = 0, frames: int = 16, height: int = 64,
              width: int = 64, categories=("bright object", "intruder", "loitering")) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, scene in enumerate(synthetic_suite(count, seed, frames, height, width)):
        video, labels, masks = generate_synthetic(scene, Rng(string_seed(seed, "render/" + scene.video_id)))
        name = f"{scene.video_id}.vid"
        write_raw_video(out / name, video)
        lines.append(json.dumps({
            "video_id": scene.video_id,
            "frames": name,
            "categories": list(categories),
            "frame_labels": labels.tolist(),
            "pixel_labels": encode_video_rle(masks),
            "synthetic": scene.to_dict(),
        }, sort_keys=True))
    manifest = out / "manifest.jsonl"
    manifest.write_text("".join(line + "\n" for line in lines))
    return manifest
