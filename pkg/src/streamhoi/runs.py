"""Experiment cells shared by the command line and the test suite.

A cell is one (config, seed) training + evaluation run returning a flat
metrics dict. Everything in here is deterministic: datasets come from the
config's data_seed, model init and batching from the cell seed, and the
feature extractor used for distribution metrics is trained once per data
section and cached, so every cell of an ablation is scored by the same
frozen extractor.
"""

import copy
import dataclasses
import json
import os
import tempfile

import numpy as np
import torch

from .archive import save_generator, save_segmenter
from .config import RunConfig, config_to_json
from .datasets import (
    SynthMotionSpec,
    SynthPcdSpec,
    make_interaction_clips,
    make_motion_pairs,
)
from .exceptions import ConfigurationError
from .features import MotionFeatureExtractor
from .generation import OnlineMotionGenerator
from .metrics import (
    diversity,
    edit_score,
    f1_at_overlap,
    frame_accuracy,
    frechet_distance,
    recognition_accuracy,
)
from .perception import OnlineActionSegmenter
from .utils import derive_seed, stable_hash

_EXTRACTOR_CACHE = {}
_CELL_CACHE = {}


def clear_caches():
    _EXTRACTOR_CACHE.clear()
    _CELL_CACHE.clear()


# -- data ---------------------------------------------------------------------


def make_generation_data(cfg):
    """Train/val MotionPair lists from the config's data section."""
    d = cfg.data
    spec = SynthMotionSpec(
        n_sequences=d.n_train + d.n_val,
        seq_len=d.seq_len,
        pose_dim=d.pose_dim,
        actor_dim=d.actor_dim,
        n_classes=d.n_classes,
        n_object_points=d.n_object_points,
        lag=d.lag,
        ema_decay=d.ema_decay,
        ema_weight=d.ema_weight,
        lag_weight=d.lag_weight,
        object_weight=d.object_weight,
        noise_scale=d.noise_scale,
        long_range_weight=d.long_range_weight,
        long_range_start=d.long_range_start,
        fps=d.fps,
        seed=d.data_seed,
    )
    pairs = make_motion_pairs(spec)
    return pairs[: d.n_train], pairs[d.n_train :]


def make_perception_data(cfg):
    """Train/val PointCloudSequence lists from the config's data section."""
    d = cfg.data
    spec = SynthPcdSpec(
        n_sequences=d.n_train + d.n_val,
        seq_len=d.seq_len,
        n_points=d.n_points,
        n_classes=d.n_classes,
        segment_len_bounds=(d.segment_min, d.segment_max),
        context_mode=d.context_mode,
        context_len=d.context_len,
        jitter=d.jitter,
        seed=d.data_seed,
    )
    clips = make_interaction_clips(spec)
    return clips[: d.n_train], clips[d.n_train :]


# -- estimator factories ------------------------------------------------------


def generator_from_config(cfg, seed):
    a, t = cfg.arch, cfg.train
    return OnlineMotionGenerator(
        model_dim=a.model_dim,
        depth=a.depth,
        backbone=cfg.model,
        state_dim=a.state_dim,
        conv_width=a.conv_width,
        expansion=a.expansion,
        heads=a.heads,
        ffn_width=a.ffn_width or None,
        memory=cfg.memory,
        fusion=cfg.fusion,
        short_capacity=cfg.short_capacity,
        long_capacity=cfg.long_capacity,
        memory_mode=cfg.memory_mode,
        similarity=cfg.similarity,
        merge=cfg.merge,
        mode=cfg.mode,
        diffusion_steps=t.diffusion_steps,
        schedule=t.schedule,
        beta_start=t.beta_start,
        beta_end=t.beta_end,
        train_steps=t.steps,
        batch_size=t.batch_size,
        learning_rate=t.learning_rate,
        grad_clip=t.grad_clip,
        seed=seed,
    )


def segmenter_from_config(cfg, seed):
    a, t = cfg.arch, cfg.train
    return OnlineActionSegmenter(
        channels=a.channels,
        out_channels=a.out_channels,
        radius_base=a.radius_base,
        radius_growth=a.radius_growth,
        temporal_radius=a.temporal_radius,
        frame_dt=a.frame_dt,
        model_dim=a.model_dim,
        depth=a.depth,
        temporal_model=cfg.model,
        state_dim=a.state_dim,
        conv_width=a.conv_width,
        expansion=a.expansion,
        heads=a.heads,
        ffn_width=a.ffn_width or None,
        granularity=a.granularity,
        memory=cfg.memory,
        fusion=cfg.fusion,
        short_capacity=cfg.short_capacity,
        long_capacity=cfg.long_capacity,
        memory_mode=cfg.memory_mode,
        similarity=cfg.similarity,
        merge=cfg.merge,
        mode=cfg.mode,
        train_steps=t.steps,
        batch_size=t.batch_size,
        learning_rate=t.learning_rate,
        grad_clip=t.grad_clip,
        seed=seed,
    )


def estimator_from_config(cfg, seed):
    if cfg.task == "generation":
        return generator_from_config(cfg, seed)
    return segmenter_from_config(cfg, seed)


# -- distribution metrics helpers ----------------------------------------------


def feature_extractor_for(cfg, train_pairs):
    """One frozen extractor per data section, shared across an ablation.

    Trained on ground-truth reactors of the training split with the action
    class as target, seeded from data_seed only, so every model variant of
    an ablation is measured in exactly the same feature space.
    """
    e = cfg.eval
    key = stable_hash(
        {
            "data": dataclasses.asdict(cfg.data),
            "hidden": e.extractor_hidden,
            "features": e.extractor_features,
            "steps": e.extractor_steps,
            "lr": e.extractor_lr,
        }
    )
    if key not in _EXTRACTOR_CACHE:
        extractor = MotionFeatureExtractor(
            hidden=e.extractor_hidden,
            feature_dim=e.extractor_features,
            train_steps=e.extractor_steps,
            learning_rate=e.extractor_lr,
            seed=derive_seed(cfg.data.data_seed, "extractor"),
        )
        extractor.fit(
            [p.reactor for p in train_pairs],
            [p.action_class for p in train_pairs],
        )
        _EXTRACTOR_CACHE[key] = extractor
    return _EXTRACTOR_CACHE[key]


# -- causality probes -----------------------------------------------------------


def poison_pair(pair, start):
    """Copy of a motion pair with its conditioning NaN from `start` on."""
    poisoned = copy.deepcopy(pair)
    poisoned.actor.frames[start:] = np.nan
    poisoned.object_pose[start:] = np.nan
    return poisoned


def poison_clip(clip, start):
    """Copy of a clip whose geometry is NaN from frame `start` on."""
    poisoned = copy.deepcopy(clip)
    poisoned.points[start:] = np.nan
    poisoned.normals[start:] = np.nan
    return poisoned


def generation_causality_probe(gen, pair, probe_frame=0, seed=0):
    """True iff NaN-poisoning the conditioning after a frame leaves every
    earlier emitted frame bitwise unchanged while visibly corrupting the rest.

    Runs on the raw emitted tensors (the public sample() refuses non-finite
    output by design). Only meaningful for online mode; returns None offline.
    """
    if gen.mode != "online":
        return None
    length = pair.actor.n_frames
    k = probe_frame or length // 2
    if not 0 < k < length:
        raise ConfigurationError(f"probe frame must be inside (0, {length})")
    dirty = poison_pair(pair, k)
    with torch.no_grad():
        emitted_clean = gen._sample_online([pair], seed)
        emitted_dirty = gen._sample_online([dirty], seed)
    prefix_ok = torch.equal(emitted_clean[:, :k], emitted_dirty[:, :k])
    tail_poisoned = not torch.equal(emitted_clean[:, k:], emitted_dirty[:, k:])
    return bool(prefix_ok and tail_poisoned)


def perception_causality_probe(seg, clip, probe_frame=0):
    """Same contract as the generation probe, on per-frame logits."""
    if seg.mode != "online":
        return None
    length = clip.n_frames
    k = probe_frame or length // 2
    if not 0 < k < length:
        raise ConfigurationError(f"probe frame must be inside (0, {length})")
    dirty = poison_clip(clip, k)
    logits_clean = seg.predict_logits([clip])
    logits_dirty = seg.predict_logits([dirty])
    prefix_ok = torch.equal(logits_clean[:, :k], logits_dirty[:, :k])
    tail_poisoned = not torch.equal(logits_clean[:, k:], logits_dirty[:, k:])
    return bool(prefix_ok and tail_poisoned)


def causality_audit(cfg, seed=None):
    """Cheap streaming-causality check for a config: untrained weights,
    tiny data slice, one poisoned replay. Returns None for offline configs."""
    if cfg.mode != "online":
        return None
    seed = cfg.seeds[0] if seed is None else seed
    if cfg.task == "generation":
        train_pairs, _ = make_generation_data(cfg)
        gen = generator_from_config(cfg, seed).set_params(train_steps=0)
        gen.fit(train_pairs[:4])
        return generation_causality_probe(
            gen, train_pairs[0], cfg.eval.probe_frame, seed=cfg.eval.sample_seed
        )
    train_clips, _ = make_perception_data(cfg)
    seg = segmenter_from_config(cfg, seed).set_params(train_steps=0)
    seg.fit(train_clips[:2])
    return perception_causality_probe(seg, train_clips[0], cfg.eval.probe_frame)


# -- cells ----------------------------------------------------------------------


def _cell_key(cfg, seed):
    return (cfg.config_hash(), seed)


def evaluate_generation(cfg, gen, train_pairs, val_pairs):
    """Score a fitted generator on the validation split."""
    samples = gen.sample(val_pairs, seed=cfg.eval.sample_seed)
    recon = float(
        np.mean(
            [
                np.mean((s.frames - p.reactor.frames) ** 2)
                for s, p in zip(samples, val_pairs)
            ]
        )
    )
    extractor = feature_extractor_for(cfg, train_pairs)
    reference = extractor.transform(
        [p.reactor for p in train_pairs + val_pairs]
    )
    generated = extractor.transform(samples)
    n_pairs = cfg.eval.div_pairs or max(1, len(val_pairs) // 2)
    metrics = {
        "task": cfg.task,
        "mode": cfg.mode,
        "model": cfg.model,
        "memory": cfg.memory,
        "seed": gen.seed,
        "config_hash": cfg.config_hash(),
        "n_parameters": gen.n_parameters_,
        "matched_ffn_width": gen.matched_ffn_width_,
        "loss_first": gen.loss_history_[0] if gen.loss_history_ else None,
        "loss_final": gen.loss_history_[-1] if gen.loss_history_ else None,
        "recon": recon,
        "fid": frechet_distance(reference, generated),
        "div": diversity(generated, n_pairs=n_pairs, seed=0),
        "ra": recognition_accuracy(
            extractor.predict(samples), [p.action_class for p in val_pairs]
        ),
    }
    if cfg.eval.causality_probe and cfg.mode == "online":
        metrics["causality_ok"] = generation_causality_probe(
            gen, val_pairs[0], cfg.eval.probe_frame, seed=cfg.eval.sample_seed
        )
    return metrics


def run_generation_cell(cfg, seed, out_dir=None, use_cache=True):
    key = _cell_key(cfg, seed)
    if use_cache and out_dir is None and key in _CELL_CACHE:
        return dict(_CELL_CACHE[key])
    train_pairs, val_pairs = make_generation_data(cfg)
    gen = generator_from_config(cfg, seed).fit(train_pairs)
    metrics = evaluate_generation(cfg, gen, train_pairs, val_pairs)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_generator(
            os.path.join(out_dir, "checkpoint.npz"),
            gen,
            config_json=config_to_json(cfg),
        )
        write_json(os.path.join(out_dir, "metrics.json"), metrics)
    if use_cache:
        _CELL_CACHE[key] = dict(metrics)
    return metrics


def evaluate_perception(cfg, seg, train_clips, val_clips):
    """Score a fitted segmenter on the validation split."""
    predicted = seg.predict(val_clips)
    targets = [c.labels for c in val_clips]
    metrics = {
        "task": cfg.task,
        "mode": cfg.mode,
        "model": cfg.model,
        "memory": cfg.memory,
        "seed": seg.seed,
        "config_hash": cfg.config_hash(),
        "n_parameters": seg.n_parameters_,
        "matched_ffn_width": seg.matched_ffn_width_,
        "loss_first": seg.loss_history_[0] if seg.loss_history_ else None,
        "loss_final": seg.loss_history_[-1] if seg.loss_history_ else None,
        "acc": frame_accuracy(predicted, targets),
        "edit": edit_score(predicted, targets),
        "f1": f1_at_overlap(predicted, targets, cfg.eval.f1_overlap),
        "train_acc": 100.0 * seg.score(train_clips),
    }
    if cfg.eval.causality_probe and cfg.mode == "online":
        metrics["causality_ok"] = perception_causality_probe(
            seg, val_clips[0], cfg.eval.probe_frame
        )
    return metrics


def run_perception_cell(cfg, seed, out_dir=None, use_cache=True):
    key = _cell_key(cfg, seed)
    if use_cache and out_dir is None and key in _CELL_CACHE:
        return dict(_CELL_CACHE[key])
    train_clips, val_clips = make_perception_data(cfg)
    seg = segmenter_from_config(cfg, seed).fit(train_clips)
    metrics = evaluate_perception(cfg, seg, train_clips, val_clips)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_segmenter(
            os.path.join(out_dir, "checkpoint.npz"),
            seg,
            config_json=config_to_json(cfg),
        )
        write_json(os.path.join(out_dir, "metrics.json"), metrics)
    if use_cache:
        _CELL_CACHE[key] = dict(metrics)
    return metrics


def run_cell(cfg, seed, out_dir=None, use_cache=True):
    if cfg.task == "generation":
        return run_generation_cell(cfg, seed, out_dir=out_dir, use_cache=use_cache)
    return run_perception_cell(cfg, seed, out_dir=out_dir, use_cache=use_cache)


def evaluate_estimator(cfg, estimator):
    """Regenerate the config's data splits and score a fitted estimator."""
    if cfg.task == "generation":
        train_pairs, val_pairs = make_generation_data(cfg)
        return evaluate_generation(cfg, estimator, train_pairs, val_pairs)
    train_clips, val_clips = make_perception_data(cfg)
    return evaluate_perception(cfg, estimator, train_clips, val_clips)


def aggregate_metrics(rows):
    """Per-metric mean/min/max over numeric fields shared by all rows."""
    out = {}
    if not rows:
        return out
    for key in rows[0]:
        values = [r.get(key) for r in rows]
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            arr = np.asarray(values, dtype=np.float64)
            out[key] = {
                "mean": float(arr.mean()),
                "min": float(arr.min()),
                "max": float(arr.max()),
            }
    return out


def run_config(cfg, out_root=None, use_cache=True):
    """All seeds of one config; optionally writes per-seed artifact dirs."""
    rows = []
    for seed in cfg.seeds:
        cell_dir = (
            os.path.join(out_root, cfg.run_name(seed)) if out_root else None
        )
        rows.append(run_cell(cfg, seed, out_dir=cell_dir, use_cache=use_cache))
    result = {
        "config_hash": cfg.config_hash(),
        "cells": rows,
        "aggregate": aggregate_metrics(rows),
    }
    if out_root is not None:
        os.makedirs(out_root, exist_ok=True)
        write_json(os.path.join(out_root, "config.json"), cfg.to_mapping())
        write_json(os.path.join(out_root, "summary.json"), result)
    return result


def run_ablation(cfg, axes, out_root=None, use_cache=True):
    """Cross product over axes x seeds.

    axes: list of (top_level_field, [values]) pairs, e.g.
    [("memory", ["off", "me"])]. Returns all cell rows plus per-combo
    aggregates keyed by "field=value,..." strings.
    """
    for field, values in axes:
        if not values:
            raise ConfigurationError(f"axis {field!r} has no values")
    combos = [{}]
    for field, values in axes:
        combos = [dict(c, **{field: v}) for c in combos for v in values]
    rows = []
    groups = {}
    for combo in combos:
        sub = cfg.with_overrides(**combo)
        combo_key = ",".join(f"{k}={v}" for k, v in combo.items())
        for seed in sub.seeds:
            cell_dir = (
                os.path.join(out_root, sub.run_name(seed)) if out_root else None
            )
            row = run_cell(sub, seed, out_dir=cell_dir, use_cache=use_cache)
            row = dict(row, **combo)
            rows.append(row)
            groups.setdefault(combo_key, []).append(row)
    result = {
        "axes": [[field, list(values)] for field, values in axes],
        "rows": rows,
        "groups": {k: aggregate_metrics(v) for k, v in groups.items()},
    }
    if out_root is not None:
        os.makedirs(out_root, exist_ok=True)
        write_json(os.path.join(out_root, "config.json"), cfg.to_mapping())
        write_json(os.path.join(out_root, "ablation.json"), result)
    return result


def write_json(path, payload):
    """Atomic, key-sorted, timestamp-free JSON write."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".json.tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
