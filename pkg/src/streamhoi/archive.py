"""Checkpoint files.

A checkpoint is a single .npz holding weights, optimizer state, the noise
schedule, the estimator's constructor params and fitted attributes, plus a
digest of the weight arrays so a mangled file fails loudly instead of
producing quietly wrong numbers. Save/load round-trips exactly: a generator
restored from disk and rebound to its training set continues training
bitwise-identically to one that never stopped.
"""

import json
import os
import tempfile

import numpy as np
import torch

from .diffusion import schedule_from_arrays, schedule_to_arrays
from .exceptions import ConfigurationError, InvalidStateError
from .utils import tensor_digest

FORMAT_VERSION = 1


def _flatten_optimizer(state_dict):
    """Split an optimizer state_dict into (arrays, jsonable groups)."""
    arrays = {}
    for idx, slots in state_dict["state"].items():
        for key, value in slots.items():
            if isinstance(value, torch.Tensor):
                value = value.detach().cpu().numpy()
            arrays[f"opt/{idx}/{key}"] = np.asarray(value)
    return arrays, state_dict["param_groups"]


def _unflatten_optimizer(files, npz, param_groups):
    state = {}
    for name in files:
        if not name.startswith("opt/"):
            continue
        _, idx, key = name.split("/", 2)
        slot = state.setdefault(int(idx), {})
        value = npz[name]
        if key == "step":
            # Adam keeps step as a 0-d float tensor.
            slot[key] = torch.as_tensor(value.reshape(()))
        else:
            slot[key] = torch.as_tensor(value)
    return {"state": state, "param_groups": param_groups}


def _atomic_savez(path, arrays):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _save_estimator(path, kind, params, fitted, weights, optimizer, extra_arrays):
    weight_arrays = {
        f"weights/{k}": v.detach().cpu().numpy() for k, v in weights.items()
    }
    arrays = dict(weight_arrays)
    opt_groups = None
    if optimizer is not None:
        opt_arrays, opt_groups = _flatten_optimizer(optimizer.state_dict())
        arrays.update(opt_arrays)
    arrays.update(extra_arrays)
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "params": params,
        "fitted": fitted,
        "param_groups": opt_groups,
        "digest": tensor_digest(weight_arrays),
    }
    arrays["meta"] = np.asarray(json.dumps(meta, sort_keys=True))
    _atomic_savez(path, arrays)


def _load_raw(path, expected_kind):
    npz = np.load(path, allow_pickle=False)
    if "meta" not in npz.files:
        raise ConfigurationError(f"{path} is not a checkpoint file")
    meta = json.loads(str(npz["meta"]))
    if meta.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(
            f"{path}: unsupported checkpoint format {meta.get('format_version')}"
        )
    if meta["kind"] != expected_kind:
        raise ConfigurationError(
            f"{path} holds a {meta['kind']} checkpoint, expected {expected_kind}"
        )
    weights = {
        name[len("weights/"):]: torch.as_tensor(npz[name])
        for name in npz.files
        if name.startswith("weights/")
    }
    stored = {f"weights/{k}": v for k, v in weights.items()}
    if tensor_digest(stored) != meta["digest"]:
        raise InvalidStateError(f"{path}: weight digest mismatch, file is corrupt")
    return npz, meta, weights


# -- generator --------------------------------------------------------------


def save_generator(path, generator, config_json=None):
    """Write a fitted OnlineMotionGenerator to one .npz file."""
    generator._check_fitted()
    fitted = {
        "pose_dim": generator.pose_dim_,
        "actor_dim": generator.actor_dim_,
        "n_frames": generator.n_frames_,
        "fps": generator.fps_,
        "matched_ffn_width": generator.matched_ffn_width_,
        "n_parameters": generator.n_parameters_,
        "steps_done": generator.steps_done_,
        "config_json": config_json,
    }
    sched = schedule_to_arrays(generator.schedule_)
    extra = {
        "sched/betas": sched["betas"],
        "sched/kind": sched["kind"],
        "stats/reactor_mean": generator.reactor_mean_.numpy(),
        "stats/reactor_std": generator.reactor_std_.numpy(),
        "stats/actor_mean": generator.actor_mean_.numpy(),
        "stats/actor_std": generator.actor_std_.numpy(),
        "loss_history": np.asarray(generator.loss_history_, dtype=np.float64),
    }
    _save_estimator(
        path,
        "generator",
        generator.get_params(),
        fitted,
        generator.denoiser_.state_dict(),
        generator.optimizer_,
        extra,
    )


def load_generator(path, pairs=None):
    """Rebuild a generator from save_generator output.

    Pass the original training pairs to make continue_fit available again;
    sampling and scoring work without them.
    """
    from .generation import OnlineMotionGenerator, stack_pairs

    npz, meta, weights = _load_raw(path, "generator")
    gen = OnlineMotionGenerator(**meta["params"])
    fitted = meta["fitted"]
    gen.pose_dim_ = fitted["pose_dim"]
    gen.actor_dim_ = fitted["actor_dim"]
    gen.n_frames_ = fitted["n_frames"]
    gen.fps_ = fitted["fps"]
    gen.matched_ffn_width_ = fitted["matched_ffn_width"]
    gen.reactor_mean_ = torch.as_tensor(npz["stats/reactor_mean"])
    gen.reactor_std_ = torch.as_tensor(npz["stats/reactor_std"])
    gen.actor_mean_ = torch.as_tensor(npz["stats/actor_mean"])
    gen.actor_std_ = torch.as_tensor(npz["stats/actor_std"])
    gen.denoiser_ = gen._build_denoiser(
        gen.pose_dim_, gen.actor_dim_, gen.backbone, fitted["matched_ffn_width"]
    )
    gen.denoiser_.load_state_dict(weights)
    gen.n_parameters_ = fitted["n_parameters"]
    gen.schedule_ = schedule_from_arrays(
        {"betas": npz["sched/betas"], "kind": npz["sched/kind"]}
    )
    gen.optimizer_ = torch.optim.Adam(
        gen.denoiser_.parameters(), lr=gen.learning_rate
    )
    if meta["param_groups"] is not None:
        gen.optimizer_.load_state_dict(
            _unflatten_optimizer(npz.files, npz, meta["param_groups"])
        )
    gen.loss_history_ = [float(v) for v in npz["loss_history"]]
    gen.steps_done_ = fitted["steps_done"]
    if pairs is not None:
        gen._train_tensors_ = stack_pairs(pairs)
    return gen


def checkpoint_config_json(path):
    """The config echo stored in a checkpoint, or None."""
    _, meta, _ = _load_raw_any(path)
    return meta["fitted"].get("config_json")


def _load_raw_any(path):
    npz = np.load(path, allow_pickle=False)
    if "meta" not in npz.files:
        raise ConfigurationError(f"{path} is not a checkpoint file")
    meta = json.loads(str(npz["meta"]))
    return npz, meta, None


def checkpoint_kind(path):
    _, meta, _ = _load_raw_any(path)
    return meta["kind"]


# -- segmenter ----------------------------------------------------------------


def save_segmenter(path, segmenter, config_json=None):
    """Write a fitted OnlineActionSegmenter to one .npz file."""
    segmenter._check_fitted()
    fitted = {
        "n_classes": segmenter.n_classes_,
        "matched_ffn_width": segmenter.matched_ffn_width_,
        "n_parameters": segmenter.n_parameters_,
        "config_json": config_json,
    }
    weights = {}
    for name, value in segmenter.backbone_.state_dict().items():
        weights[f"backbone.{name}"] = value
    for name, value in segmenter.enhancer_.state_dict().items():
        weights[f"enhancer.{name}"] = value
    extra = {
        "loss_history": np.asarray(segmenter.loss_history_, dtype=np.float64),
    }
    _save_estimator(
        path,
        "segmenter",
        segmenter.get_params(),
        fitted,
        weights,
        segmenter.optimizer_,
        extra,
    )


def load_segmenter(path):
    from .perception import OnlineActionSegmenter

    npz, meta, weights = _load_raw(path, "segmenter")
    params = dict(meta["params"])
    if isinstance(params.get("channels"), list):
        params["channels"] = tuple(params["channels"])
    seg = OnlineActionSegmenter(**params)
    fitted = meta["fitted"]
    seg.n_classes_ = fitted["n_classes"]
    seg.matched_ffn_width_ = fitted["matched_ffn_width"]
    seg.n_parameters_ = fitted["n_parameters"]
    torch.manual_seed(0)
    seg.backbone_, seg.enhancer_ = seg._build(
        seg.n_classes_, seg.temporal_model, fitted["matched_ffn_width"]
    )
    seg.backbone_.load_state_dict(
        {k[len("backbone."):]: v for k, v in weights.items()
         if k.startswith("backbone.")}
    )
    seg.enhancer_.load_state_dict(
        {k[len("enhancer."):]: v for k, v in weights.items()
         if k.startswith("enhancer.")}
    )
    seg.backbone_.eval()
    seg.enhancer_.eval()
    params_list = list(seg.backbone_.parameters()) + list(seg.enhancer_.parameters())
    seg.optimizer_ = torch.optim.Adam(params_list, lr=seg.learning_rate)
    if meta["param_groups"] is not None:
        seg.optimizer_.load_state_dict(
            _unflatten_optimizer(npz.files, npz, meta["param_groups"])
        )
    seg.loss_history_ = [float(v) for v in npz["loss_history"]]
    return seg


def load_estimator(path, pairs=None):
    """Dispatch on the checkpoint's kind field."""
    kind = checkpoint_kind(path)
    if kind == "generator":
        return load_generator(path, pairs=pairs)
    if kind == "segmenter":
        return load_segmenter(path)
    raise ConfigurationError(f"unknown checkpoint kind {kind!r}")
