"""Evaluation metrics for generation and segmentation.

Generation quality is measured in a learned feature space (see features.py):
Frechet distance between feature Gaussians, diversity as the mean distance
over sampled disjoint pairs, and recognition accuracy against the
conditioning class. Segmentation uses framewise accuracy, the segmental edit
score, and segmental F1 at an IoU threshold.
"""

import dataclasses

import numpy as np

from .exceptions import ConfigurationError, NumericalError, ShapeError
from .utils import numpy_generator
from .validation import check_label_array


@dataclasses.dataclass
class FeatureSet:
    """Feature rows (n, F) tagged with the extractor that produced them.

    Distances between feature sets are only meaningful inside one feature
    space, so fid() refuses to compare sets from different extractors.
    """

    features: np.ndarray
    extractor_id: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError(
                f"features must be (n, F), got {self.features.shape}"
            )
        if not np.isfinite(self.features).all():
            raise NumericalError("features contain NaN or Inf")


def _sqrtm_psd(mat):
    """Symmetric PSD matrix square root via eigendecomposition."""
    sym = (mat + mat.T) / 2
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a, b, jitter=1e-6):
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with a small
    diagonal jitter added to both covariances for numerical stability. The
    cross term is computed as Tr sqrt(S_a^{1/2} S_b S_a^{1/2}), which equals
    Tr sqrt(S_a S_b) and stays symmetric and real.
    """
    if not isinstance(a, FeatureSet) or not isinstance(b, FeatureSet):
        raise TypeError("frechet_distance expects FeatureSet arguments")
    if a.extractor_id != b.extractor_id:
        raise ConfigurationError(
            "feature sets come from different extractors "
            f"({a.extractor_id} vs {b.extractor_id})"
        )
    if a.features.shape[1] != b.features.shape[1]:
        raise ShapeError("feature widths differ")
    if a.features.shape[0] < 2 or b.features.shape[0] < 2:
        raise ShapeError("need at least 2 rows per set to fit a covariance")
    mu_a, mu_b = a.features.mean(axis=0), b.features.mean(axis=0)
    dim = a.features.shape[1]
    cov_a = np.cov(a.features, rowvar=False) + jitter * np.eye(dim)
    cov_b = np.cov(b.features, rowvar=False) + jitter * np.eye(dim)
    root_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(root_a @ cov_b @ root_a)
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * np.trace(cross))
    if not np.isfinite(value):
        raise NumericalError("Frechet distance is not finite")
    return max(value, 0.0)


def diversity(features, n_pairs=500, seed=0, mode="pairs"):
    """Spread of a feature set.

    mode="pairs": mean Euclidean distance over n_pairs disjoint random pairs
    (each row used at most once), drawn with the given seed.
    mode="variance": sqrt(2 * Tr cov), the root-mean-square pair distance of
    the fitted Gaussian; an RNG-free alternative estimator of the same
    spread (upper-biased relative to the mean distance).
    """
    if isinstance(features, FeatureSet):
        features = features.features
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"features must be (n, F), got {features.shape}")
    n = features.shape[0]
    if mode == "variance":
        if n < 2:
            raise ShapeError("need at least 2 rows")
        cov = np.cov(features, rowvar=False)
        return float(np.sqrt(2.0 * np.trace(np.atleast_2d(cov))))
    if mode != "pairs":
        raise ConfigurationError(f"mode must be 'pairs' or 'variance', got {mode!r}")
    if n_pairs < 1:
        raise ConfigurationError("n_pairs must be >= 1")
    if 2 * n_pairs > n:
        raise ShapeError(
            f"need at least 2*n_pairs={2 * n_pairs} rows for disjoint pairs, got {n}"
        )
    rng = numpy_generator(seed, "diversity")
    idx = rng.permutation(n)[: 2 * n_pairs]
    left, right = features[idx[0::2]], features[idx[1::2]]
    return float(np.linalg.norm(left - right, axis=1).mean())


def recognition_accuracy(predicted, conditioned):
    """Percent of generated motions classified as their conditioning class."""
    predicted = check_label_array(predicted, "predicted")
    conditioned = check_label_array(conditioned, "conditioned")
    if predicted.shape != conditioned.shape:
        raise ShapeError("predicted and conditioned must align")
    if predicted.size == 0:
        raise ShapeError("need at least one sample")
    return 100.0 * float((predicted == conditioned).mean())


def _as_sequence_list(x):
    """Normalize input to a list of 1-d label sequences."""
    if isinstance(x, np.ndarray):
        if x.ndim == 1:
            return [x]
        if x.ndim == 2:
            return list(x)
        raise ShapeError(f"labels must be 1-d or a list of 1-d, got shape {x.shape}")
    if isinstance(x, (list, tuple)):
        if len(x) == 0:
            return [np.asarray(x, dtype=np.int64)]
        first = np.asarray(x[0])
        if first.ndim == 0:
            return [np.asarray(x)]
        return [np.asarray(item) for item in x]
    raise ShapeError("labels must be array-like")


def frame_accuracy(predicted, target):
    """Percent of frames whose predicted label matches, over all sequences."""
    predicted, target = _as_sequence_list(predicted), _as_sequence_list(target)
    if len(predicted) != len(target):
        raise ShapeError("need the same number of sequences")
    hits = total = 0
    for p, t in zip(predicted, target):
        p = check_label_array(p, "predicted")
        t = check_label_array(t, "target")
        if p.shape != t.shape:
            raise ShapeError("predicted and target lengths differ")
        hits += int((p == t).sum())
        total += p.size
    if total == 0:
        raise ShapeError("no frames to score")
    return 100.0 * hits / total


def segments_from_labels(labels):
    """Run-length encode a label sequence to (label, start, end_exclusive)."""
    labels = check_label_array(labels, "labels")
    segments = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            segments.append((int(labels[start]), start, i))
            start = i
    return segments


def _levenshtein(a, b):
    m, n = len(a), len(b)
    row = list(range(n + 1))
    for i in range(1, m + 1):
        prev_diag, row[0] = row[0], i
        for j in range(1, n + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            prev_diag, row[j] = row[j], min(
                row[j] + 1, row[j - 1] + 1, prev_diag + cost
            )
    return row[n]


def edit_score(predicted, target):
    """Segmental edit score in [0, 100], averaged over sequences.

    Per sequence: 100 * (1 - Levenshtein(segment labels) / max(#segments));
    insertions, deletions and substitutions all cost 1. Sequences with
    identical segment label strings score 100 regardless of boundary
    placement.
    """
    predicted, target = _as_sequence_list(predicted), _as_sequence_list(target)
    if len(predicted) != len(target):
        raise ShapeError("need the same number of sequences")
    scores = []
    for p, t in zip(predicted, target):
        seg_p = [s[0] for s in segments_from_labels(p)] if len(p) else []
        seg_t = [s[0] for s in segments_from_labels(t)] if len(t) else []
        denom = max(len(seg_p), len(seg_t))
        if denom == 0:
            scores.append(100.0)
            continue
        scores.append(100.0 * max(0.0, 1.0 - _levenshtein(seg_p, seg_t) / denom))
    return float(np.mean(scores))


def _interval_iou(a, b):
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def f1_counts_at_overlap(predicted, target, overlap):
    """(tp, fp, fn) for segmental F1 at one IoU threshold, one sequence.

    Each predicted segment greedily matches the unmatched target segment of
    the same label with the highest IoU; a match at or above the threshold is
    a true positive, anything else a false positive, and leftover target
    segments are false negatives.
    """
    if not (0.0 < overlap < 1.0):
        raise ConfigurationError(f"overlap must be in (0, 1), got {overlap}")
    pred_segs = segments_from_labels(predicted) if len(predicted) else []
    true_segs = segments_from_labels(target) if len(target) else []
    matched = [False] * len(true_segs)
    tp = fp = 0
    for label, start, end in pred_segs:
        best_iou, best_j = 0.0, -1
        for j, (t_label, t_start, t_end) in enumerate(true_segs):
            if matched[j] or t_label != label:
                continue
            iou = _interval_iou((start, end), (t_start, t_end))
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= overlap:
            matched[best_j] = True
            tp += 1
        else:
            fp += 1
    fn = matched.count(False)
    return tp, fp, fn


def f1_at_overlap(predicted, target, overlap=0.5):
    """Segmental F1 (percent) at an IoU threshold.

    Accepts single sequences or aligned lists (counts pool across sequences
    before the F1 is formed). Two empty sequences score 100; an empty
    prediction against a non-empty target (or vice versa) scores 0.
    """
    predicted, target = _as_sequence_list(predicted), _as_sequence_list(target)
    if len(predicted) != len(target):
        raise ShapeError("need the same number of sequences")
    tp = fp = fn = 0
    for p, t in zip(predicted, target):
        a, b, c = f1_counts_at_overlap(p, t, overlap)
        tp, fp, fn = tp + a, fp + b, fn + c
    if tp + fp + fn == 0:
        return 100.0
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 100.0 * 2 * precision * recall / (precision + recall)
