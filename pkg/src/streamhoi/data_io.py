"""On-disk layout for the synthetic datasets.

Everything is plain CSV plus one manifest.json, so exported data can be
inspected with standard tools and read back bit-exactly (floats are written
with %.17g, which round-trips IEEE doubles).

Generation pairs, under <root>/motions/:
    seq_<i>_actor.csv      frame,a0..a{Da-1}
    seq_<i>_reactor.csv    frame,p0..p{Dp-1}
    seq_<i>_object_pose.csv  frame,x,y,z,qw,qx,qy,qz
    seq_<i>_object_points.csv  point,x,y,z

Perception clips, under <root>/clips/:
    clip_<i>_points.csv    frame,point,x,y,z,nx,ny,nz
    clip_<i>_labels.csv    frame,label

manifest.json records the task, counts, fps, class labels and (for
generation) the per-sequence latent sign, which exists for oracle checks
only and must never be fed to a model.
"""

import csv
import json
import os

import numpy as np

from .datasets import MotionPair, MotionSequence, PointCloudSequence
from .exceptions import ConfigurationError

FLOAT_FMT = "%.17g"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _float_cells(values):
    return [FLOAT_FMT % v for v in values]


def _framewise_rows(array):
    return [[t] + _float_cells(row) for t, row in enumerate(array)]


def write_motion_pairs(root, pairs, extra_manifest=None):
    """Write MotionPair lists to <root>/motions/ plus a manifest."""
    motions = os.path.join(root, "motions")
    os.makedirs(motions, exist_ok=True)
    entries = []
    for i, pair in enumerate(pairs):
        actor_cols = [f"a{d}" for d in range(pair.actor.pose_dim)]
        react_cols = [f"p{d}" for d in range(pair.reactor.pose_dim)]
        _write_csv(
            os.path.join(motions, f"seq_{i}_actor.csv"),
            ["frame"] + actor_cols,
            _framewise_rows(pair.actor.frames),
        )
        _write_csv(
            os.path.join(motions, f"seq_{i}_reactor.csv"),
            ["frame"] + react_cols,
            _framewise_rows(pair.reactor.frames),
        )
        _write_csv(
            os.path.join(motions, f"seq_{i}_object_pose.csv"),
            ["frame", "x", "y", "z", "qw", "qx", "qy", "qz"],
            _framewise_rows(pair.object_pose),
        )
        _write_csv(
            os.path.join(motions, f"seq_{i}_object_points.csv"),
            ["point", "x", "y", "z"],
            [[p] + _float_cells(row) for p, row in enumerate(pair.object_points)],
        )
        entries.append(
            {
                "index": i,
                "action_class": int(pair.action_class),
                "latent": float(pair.latent),
                "n_frames": pair.actor.n_frames,
            }
        )
    manifest = {
        "task": "generation",
        "n_sequences": len(pairs),
        "fps": pairs[0].actor.fps if pairs else None,
        "sequences": entries,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    _write_manifest(root, manifest)
    return manifest


def read_motion_pairs(root):
    manifest = read_manifest(root)
    if manifest["task"] != "generation":
        raise ConfigurationError(f"{root} holds {manifest['task']} data")
    motions = os.path.join(root, "motions")
    pairs = []
    for entry in manifest["sequences"]:
        i = entry["index"]
        actor = _read_framewise(os.path.join(motions, f"seq_{i}_actor.csv"))
        reactor = _read_framewise(os.path.join(motions, f"seq_{i}_reactor.csv"))
        pose = _read_framewise(os.path.join(motions, f"seq_{i}_object_pose.csv"))
        points = _read_framewise(
            os.path.join(motions, f"seq_{i}_object_points.csv")
        )
        pairs.append(
            MotionPair(
                actor=MotionSequence(actor, fps=manifest["fps"]),
                object_points=points,
                object_pose=pose,
                reactor=MotionSequence(reactor, fps=manifest["fps"]),
                action_class=entry["action_class"],
                latent=entry["latent"],
            )
        )
    return pairs


def write_clips(root, clips, extra_manifest=None):
    """Write PointCloudSequence lists to <root>/clips/ plus a manifest."""
    clip_dir = os.path.join(root, "clips")
    os.makedirs(clip_dir, exist_ok=True)
    entries = []
    for i, clip in enumerate(clips):
        rows = []
        for t in range(clip.n_frames):
            for p in range(clip.n_points):
                rows.append(
                    [t, p]
                    + _float_cells(clip.points[t, p])
                    + _float_cells(clip.normals[t, p])
                )
        _write_csv(
            os.path.join(clip_dir, f"clip_{i}_points.csv"),
            ["frame", "point", "x", "y", "z", "nx", "ny", "nz"],
            rows,
        )
        _write_csv(
            os.path.join(clip_dir, f"clip_{i}_labels.csv"),
            ["frame", "label"],
            [[t, int(v)] for t, v in enumerate(clip.labels)],
        )
        entries.append(
            {
                "index": i,
                "n_frames": clip.n_frames,
                "n_points": clip.n_points,
            }
        )
    manifest = {
        "task": "perception",
        "n_sequences": len(clips),
        "n_classes": clips[0].n_classes if clips else 0,
        "sequences": entries,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    _write_manifest(root, manifest)
    return manifest


def read_clips(root):
    manifest = read_manifest(root)
    if manifest["task"] != "perception":
        raise ConfigurationError(f"{root} holds {manifest['task']} data")
    clip_dir = os.path.join(root, "clips")
    clips = []
    for entry in manifest["sequences"]:
        i = entry["index"]
        frames, points = entry["n_frames"], entry["n_points"]
        flat = _read_framewise(
            os.path.join(clip_dir, f"clip_{i}_points.csv"), skip_cols=2
        )
        geometry = flat.reshape(frames, points, 6)
        labels = np.loadtxt(
            os.path.join(clip_dir, f"clip_{i}_labels.csv"),
            delimiter=",",
            skiprows=1,
            dtype=np.int64,
            ndmin=2,
        )[:, 1]
        clips.append(
            PointCloudSequence(
                points=geometry[:, :, :3],
                normals=geometry[:, :, 3:],
                labels=labels,
                n_classes=manifest["n_classes"],
            )
        )
    return clips


def _read_framewise(path, skip_cols=1):
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    return data[:, skip_cols:]


def _write_manifest(root, manifest):
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_manifest(root):
    path = os.path.join(root, "manifest.json")
    if not os.path.exists(path):
        raise ConfigurationError(f"{root} has no manifest.json")
    with open(path) as fh:
        return json.load(fh)
