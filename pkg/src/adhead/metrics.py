"""Pixel-level AUROC and maximum-F1 evaluation of anomaly maps.

AUROC uses the Mann-Whitney formulation via average ranks (ties count 0.5),
which equals the trapezoidal ROC area. Max-F1 scans thresholds at every
distinct observed score with prediction = score >= threshold. Evaluation
pools all pixels of a split into one population.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import MetricUndefinedError, ValidationError
from .feature_io import read_bundle
from .head import baseline_map, infer


def pixel_auroc(scores, labels):
    """(#correctly ordered pos/neg pairs + 0.5 * #ties) / (#pos * #neg)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.size != labels.size:
        raise ValidationError(
            f"pixel_auroc: {scores.size} scores vs {labels.size} labels"
        )
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(
            f"pixel_auroc undefined: {n_pos} positives, {n_neg} negatives"
        )
    ranks = rankdata(scores, method="average")
    pos_rank_sum = ranks[labels == 1].sum()
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def max_f1(scores, labels):
    """Maximum F1 over thresholds at the distinct score values."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.size != labels.size:
        raise ValidationError(
            f"max_f1: {scores.size} scores vs {labels.size} labels"
        )
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricUndefinedError("max_f1 undefined: no positive labels")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    cum_tp = np.cumsum(labels[order])
    cum_pred = np.arange(1, scores.size + 1)
    # thresholding at a score includes every element tied with it, so only
    # positions at the end of a tie run are realizable operating points
    boundary = np.empty(scores.size, dtype=bool)
    boundary[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    boundary[-1] = True
    # F1 = 2PR/(P+R) = 2TP/(pred_pos + actual_pos); 0 when TP = 0
    f1 = 2.0 * cum_tp[boundary] / (cum_pred[boundary] + n_pos)
    return float(f1.max())


@dataclass
class ImageResult:
    path: str
    auroc: float = None  # None when the image has a single-class mask
    n_pixels: int = 0


@dataclass
class EvalReport:
    pixel_auroc: float
    max_f1: float
    n_images: int
    n_pixels: int
    per_image: list = field(default_factory=list)

    def kv_lines(self):
        lines = [
            f"pixel_auroc={self.pixel_auroc:.6f}",
            f"max_f1={self.max_f1:.6f}",
            f"n_images={self.n_images}",
            f"n_pixels={self.n_pixels}",
        ]
        for r in self.per_image:
            value = "undefined" if r.auroc is None else f"{r.auroc:.6f}"
            lines.append(f"image_auroc\t{r.path}\t{value}")
        return lines


def evaluate(manifest, stack, bank, cfg, split="test", baseline=False,
             layers=None, keep_pooled=False):
    """Pooled pixel-level evaluation over one manifest split.

    With baseline=True the training-free normalized-token map is scored and
    the stack/bank are not consulted. Returns an EvalReport, plus the pooled
    (scores, labels) arrays when keep_pooled is set.
    """
    entries = manifest.select(split)
    if not entries:
        raise ValidationError(f"manifest has no {split} entries")
    pooled_scores = []
    pooled_labels = []
    per_image = []
    for entry, path in zip(entries, manifest.paths(split)):
        bundle = read_bundle(path)
        if not bundle.mask_present:
            raise ValidationError(f"{entry.path}: evaluation requires a mask")
        if baseline:
            amap = baseline_map(bundle)
        else:
            amap, _ = infer(bundle, stack, bank, cfg, layers=layers)
        scores = amap.scores.ravel()
        labels = bundle.mask.ravel().astype(np.int64)
        pooled_scores.append(scores)
        pooled_labels.append(labels)
        try:
            image_auroc = pixel_auroc(scores, labels)
        except MetricUndefinedError:
            image_auroc = None
        per_image.append(
            ImageResult(path=entry.path, auroc=image_auroc, n_pixels=scores.size)
        )
    pooled_scores = np.concatenate(pooled_scores)
    pooled_labels = np.concatenate(pooled_labels)
    report = EvalReport(
        pixel_auroc=pixel_auroc(pooled_scores, pooled_labels),
        max_f1=max_f1(pooled_scores, pooled_labels),
        n_images=len(per_image),
        n_pixels=int(pooled_scores.size),
        per_image=per_image,
    )
    if keep_pooled:
        return report, pooled_scores, pooled_labels
    return report
