"""Learned motion-feature space for the generation metrics.

A small action classifier is trained on reference motions; its penultimate
activations define the feature space in which Frechet distance, diversity
and recognition accuracy are computed. Features from different trained
extractors are never comparable, so every transform is tagged with a digest
of the extractor weights.
"""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .datasets import MotionSequence
from .exceptions import ShapeError
from .metrics import FeatureSet
from .utils import derive_seed, stable_hash, tensor_digest
from .validation import check_label_array


class _FeatureNet(nn.Module):
    def __init__(self, pose_dim, hidden, feature_dim, n_classes):
        super().__init__()
        self.frame_mlp = nn.Sequential(
            nn.Linear(pose_dim, hidden), nn.SiLU(), nn.Linear(hidden, hidden)
        )
        self.feature = nn.Linear(2 * hidden, feature_dim)
        self.classify = nn.Linear(feature_dim, n_classes)

    def features(self, x):
        # x: (b, T, D) -> (b, feature_dim)
        h = self.frame_mlp(x)
        pooled = torch.cat([h.mean(dim=1), h.max(dim=1).values], dim=-1)
        return self.feature(pooled)

    def forward(self, x):
        return self.classify(F.silu(self.features(x)))


def _stack_motions(motions):
    """list[MotionSequence] | (n, T, D) array -> (n, T, D) float tensor."""
    if isinstance(motions, np.ndarray):
        arr = motions
    else:
        rows = []
        for m in motions:
            rows.append(m.frames if isinstance(m, MotionSequence) else np.asarray(m))
        shapes = {r.shape for r in rows}
        if len(shapes) != 1:
            raise ShapeError(f"motions must share one (T, D) shape, got {shapes}")
        arr = np.stack(rows)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"motions must be (n, T, D), got {arr.shape}")
    return torch.as_tensor(arr, dtype=torch.float32)


class MotionFeatureExtractor(TransformerMixin, BaseEstimator):
    """Action classifier whose penultimate layer defines the feature space.

    Parameters
    ----------
    hidden : width of the per-frame MLP.
    feature_dim : width of the output feature space.
    train_steps, learning_rate : optimization budget (full-batch Adam).
    seed : controls init and the whole optimization; fitting twice with the
        same data and seed yields identical weights.
    """

    def __init__(self, hidden=32, feature_dim=16, train_steps=300,
                 learning_rate=1e-2, seed=0):
        self.hidden = hidden
        self.feature_dim = feature_dim
        self.train_steps = train_steps
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y):
        X = _stack_motions(X)
        y = check_label_array(np.asarray(y), "y")
        if y.shape[0] != X.shape[0]:
            raise ShapeError("need one label per motion")
        n_classes = int(y.max()) + 1
        torch.manual_seed(derive_seed(self.seed, "feature-init"))
        net = _FeatureNet(X.shape[2], self.hidden, self.feature_dim, n_classes)
        opt = torch.optim.Adam(net.parameters(), lr=self.learning_rate)
        target = torch.as_tensor(y)
        losses = []
        for _ in range(self.train_steps):
            opt.zero_grad()
            loss = F.cross_entropy(net(X), target)
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        net.eval()
        self.net_ = net
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = X.shape[2]
        self.loss_history_ = np.asarray(losses)
        self.extractor_id_ = tensor_digest(
            {k: v.detach() for k, v in net.state_dict().items()}
        ) + "-" + stable_hash(
            {"hidden": self.hidden, "feature_dim": self.feature_dim}
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("this extractor has not been fitted yet")

    def transform(self, X):
        """Motions -> FeatureSet tagged with the extractor id."""
        self._check_fitted()
        X = _stack_motions(X)
        with torch.no_grad():
            feats = self.net_.features(X).numpy().astype(np.float64)
        return FeatureSet(features=feats, extractor_id=self.extractor_id_)

    def predict(self, X):
        self._check_fitted()
        X = _stack_motions(X)
        with torch.no_grad():
            logits = self.net_(X)
        return logits.argmax(dim=1).numpy()

    def score(self, X, y):
        y = check_label_array(np.asarray(y), "y")
        return float((self.predict(X) == y).mean())
