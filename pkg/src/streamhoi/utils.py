"""Seeding, hashing and small reproducibility helpers.

Every stochastic choice in the package is drawn from a generator whose seed is
derived from a root seed plus a string tag (and optional integers such as the
step or frame index). Derived seeds are stateless, so interrupting and
resuming a run cannot drift the random stream.
"""

import hashlib
import json

import numpy as np
import torch


def derive_seed(root_seed, *tags):
    """Derive a 63-bit seed from a root seed and a tag tuple.

    Parameters
    ----------
    root_seed : int
    *tags : str or int
        Arbitrary mix of labels and indices, e.g. ("noise", step).

    Returns
    -------
    int in [0, 2**63).
    """
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for tag in tags:
        h.update(b"/")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little") & ((1 << 63) - 1)


def torch_generator(root_seed, *tags):
    """CPU torch.Generator seeded with derive_seed(root_seed, *tags)."""
    g = torch.Generator(device="cpu")
    g.manual_seed(derive_seed(root_seed, *tags))
    return g


def numpy_generator(root_seed, *tags):
    """numpy Generator seeded with derive_seed(root_seed, *tags)."""
    return np.random.default_rng(derive_seed(root_seed, *tags))


def stable_hash(obj):
    """Short hex digest of a JSON-serializable object, stable across runs."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def tensor_digest(tensors):
    """Hex digest of an ordered mapping of arrays/tensors (for checkpoints)."""
    h = hashlib.sha256()
    for key in sorted(tensors):
        value = tensors[key]
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arr = np.ascontiguousarray(value)
        h.update(key.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()[:16]
