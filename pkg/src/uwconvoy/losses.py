"""Reference detection objectives and a numeric-gradient harness.

Two single-point losses are provided:

* ``vgg_loss`` - L1 box regression gated on target presence plus binary
  cross-entropy on the confidence.
* ``rrolo_loss`` - square-root coordinate regression plus (IOU - p)^2
  confidence terms weighted per presence, with tunable weights.

Closed-form gradients accompany both so they can be checked against
central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import Annotation, BoundingBox, iou, iou_gradient

# Confidence clamp for the cross-entropy logs; keeps the loss finite when a
# saturated confidence disagrees with the label.
BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Term weights for rrolo_loss (coordinate, object, no-object)."""

    alpha_coord: float = 5.0
    alpha_obj: float = 1.0
    alpha_no_obj: float = 0.5

    def __post_init__(self):
        for name in ("alpha_coord", "alpha_obj", "alpha_no_obj"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")


@dataclass(frozen=True)
class PredictionVector:
    """A detector output: the (x, y, w, h, p) vector wrapped as a box."""

    box: BoundingBox


def vgg_loss(pred: PredictionVector, truth: Annotation) -> float:
    """L1 localization error on present frames plus confidence cross-entropy.

    The log terms are exact when the confidence matches the label (so a
    perfect prediction scores 0) and clamped at BCE_EPS otherwise.
    """
    z = pred.box
    if truth.present:
        tb = truth.truth_box
        l1 = abs(z.x - tb.x) + abs(z.y - tb.y) + abs(z.w - tb.w) + abs(z.h - tb.h)
        bce = -math.log(max(z.p, BCE_EPS))
    else:
        l1 = 0.0
        bce = -math.log(max(1.0 - z.p, BCE_EPS))
    return l1 + bce


def vgg_gradient(pred: PredictionVector, truth: Annotation) -> np.ndarray:
    """Gradient of vgg_loss in (x, y, w, h, p).

    Undefined where a coordinate exactly matches the truth (L1 kink) or the
    confidence sits at the clamp; valid elsewhere.
    """
    z = pred.box
    g = np.zeros(5)
    if truth.present:
        tb = truth.truth_box
        g[0] = math.copysign(1.0, z.x - tb.x)
        g[1] = math.copysign(1.0, z.y - tb.y)
        g[2] = math.copysign(1.0, z.w - tb.w)
        g[3] = math.copysign(1.0, z.h - tb.h)
        g[4] = -1.0 / max(z.p, BCE_EPS)
    else:
        g[4] = 1.0 / max(1.0 - z.p, BCE_EPS)
    return g


def rrolo_loss(pred: PredictionVector, truth: Annotation, w: LossWeights = LossWeights()) -> float:
    """Square-root coordinate regression plus squared (IOU - p) confidence terms.

    On absent frames the overlap is defined as 0, so only the no-object term
    alpha_no_obj * p^2 remains and the box coordinates are irrelevant.
    """
    z = pred.box
    if truth.present:
        tb = truth.truth_box
        coord = (math.sqrt(tb.x) - math.sqrt(z.x)) ** 2 + (math.sqrt(tb.y) - math.sqrt(z.y)) ** 2
        size = (math.sqrt(tb.w) - math.sqrt(z.w)) ** 2 + (math.sqrt(tb.h) - math.sqrt(z.h)) ** 2
        overlap = iou(z, tb)
        return w.alpha_coord * (coord + size) + w.alpha_obj * (overlap - z.p) ** 2
    return w.alpha_no_obj * (0.0 - z.p) ** 2


def rrolo_gradient(
    pred: PredictionVector, truth: Annotation, w: LossWeights = LossWeights()
) -> np.ndarray:
    """Gradient of rrolo_loss in (x, y, w, h, p).

    Requires strictly positive coordinates on present frames (square roots)
    and an overlap configuration away from corner contact.
    """
    z = pred.box
    g = np.zeros(5)
    if not truth.present:
        g[4] = 2.0 * w.alpha_no_obj * z.p
        return g
    tb = truth.truth_box
    for i, (zv, tv) in enumerate(
        [(z.x, tb.x), (z.y, tb.y), (z.w, tb.w), (z.h, tb.h)]
    ):
        if zv <= 0.0:
            raise ValueError("rrolo gradient needs strictly positive coordinates")
        g[i] = w.alpha_coord * (1.0 - math.sqrt(tv) / math.sqrt(zv))
    overlap = iou(z, tb)
    g[:4] += 2.0 * w.alpha_obj * (overlap - z.p) * iou_gradient(z, tb)
    g[4] = -2.0 * w.alpha_obj * (overlap - z.p)
    return g


def numeric_gradient(
    f: Callable[[np.ndarray], float], point: Sequence[float], step: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient of a scalar function at a point."""
    x = np.asarray(point, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if step <= 0:
        raise ValueError("step must be positive")
    g = np.empty_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        fp, fm = f(hi), f(lo)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError(f"function not finite near component {i}")
        g[i] = (fp - fm) / (2.0 * step)
    return g
