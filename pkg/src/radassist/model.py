"""Toy multi-label detector: linear per-label saliency model.

Every other module treats this as the only model family. A model holds one
weight plane plus bias per label; inference produces a presence probability,
and, for detected labels with positive saliency, a thresholded saliency mask
and its tight bounding box. Gradients are exact and analytic so training is
fully checkable against finite differences.
"""

from __future__ import annotations

import base64
import binascii
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UnknownLabelError

DEFAULT_LABELS = ("lesion-a", "lesion-b", "lesion-c")

STATUS_READY = "ready"
STATUS_RETRAINING = "retraining"
STATUS_SWARM_LEARNED = "swarm-learned"
MODEL_STATUSES = (STATUS_READY, STATUS_RETRAINING, STATUS_SWARM_LEARNED)


@dataclass(frozen=True)
class ModelConfig:
    """Shared knobs: image geometry, label set, thresholds, training rates."""

    height: int = 64
    width: int = 64
    labels: tuple[str, ...] = DEFAULT_LABELS
    theta_det: float = 0.5
    tau: float = 0.5
    # calibrated: 0.05 oscillates on 64x64 batches, one halving settles it
    eta: float = 0.025
    lambda_loc: float = 1.0
    lambda_reg: float = 1e-4
    m_in: float = 0.0  # 0 means "use default 1/(height*width)"
    epochs_default: int = 20

    def __post_init__(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise InvalidInputError("image dimensions must be positive")
        if not self.labels:
            raise InvalidInputError("label list must be non-empty")
        if len(set(self.labels)) != len(self.labels):
            raise InvalidInputError("label list must be unique")
        if not 0.0 < self.theta_det < 1.0:
            raise InvalidInputError("theta_det must lie in (0, 1)")
        if not 0.0 < self.tau < 1.0:
            raise InvalidInputError("tau must lie in (0, 1)")
        if self.eta < 0.0:
            raise InvalidInputError("eta must be >= 0")
        if self.lambda_loc < 0.0 or self.lambda_reg < 0.0:
            raise InvalidInputError("loss weights must be >= 0")
        if self.epochs_default <= 0:
            raise InvalidInputError("epochs_default must be positive")
        if self.m_in == 0.0:
            object.__setattr__(self, "m_in", 1.0 / (self.height * self.width))
        elif self.m_in < 0.0:
            raise InvalidInputError("m_in must be > 0")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class ImagePayload:
    """Fixed-size 8-bit grayscale raster, row-major bytes."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self) -> None:
        if not (8 <= self.width <= 1024 and 8 <= self.height <= 1024):
            raise InvalidInputError(
                f"image dimensions {self.width}x{self.height} outside allowed range 8..1024"
            )
        if len(self.pixels) != self.width * self.height:
            raise InvalidInputError(
                f"pixel count {len(self.pixels)} does not match {self.width}x{self.height}"
            )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImagePayload":
        a = np.asarray(arr)
        if a.ndim != 2:
            raise InvalidInputError("image array must be 2-D")
        h, w = a.shape
        return cls(width=int(w), height=int(h), pixels=a.astype(np.uint8).tobytes())

    @classmethod
    def from_base64(cls, data: str, width: int, height: int) -> "ImagePayload":
        try:
            raw = base64.b64decode(data, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise InvalidInputError(f"image is not valid Base64: {exc}") from exc
        return cls(width=width, height=height, pixels=raw)

    def to_base64(self) -> str:
        return base64.b64encode(self.pixels).decode("ascii")

    def as_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width)

    def checksum(self) -> int:
        return binascii.crc32(self.pixels)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle, corners TL, TR, BR, BL in inclusive pixel units.

    x is the column index, y the row index; a 1x1 box has all four corners
    on the same pixel.
    """

    x1: int
    y1: int
    x2: int
    y2: int
    x3: int
    y3: int
    x4: int
    y4: int

    def __post_init__(self) -> None:
        if not (self.x1 == self.x4 and self.x2 == self.x3):
            raise InvalidInputError("box corners are not an axis-aligned rectangle (x)")
        if not (self.y1 == self.y2 and self.y3 == self.y4):
            raise InvalidInputError("box corners are not an axis-aligned rectangle (y)")
        if self.x1 > self.x2 or self.y1 > self.y3:
            raise InvalidInputError("box corners are not ordered TL, TR, BR, BL")

    @classmethod
    def from_extent(cls, x_min: int, y_min: int, x_max: int, y_max: int) -> "BoundingBox":
        return cls(
            x1=int(x_min), y1=int(y_min),
            x2=int(x_max), y2=int(y_min),
            x3=int(x_max), y3=int(y_max),
            x4=int(x_min), y4=int(y_max),
        )

    @property
    def x_min(self) -> int:
        return self.x1

    @property
    def x_max(self) -> int:
        return self.x2

    @property
    def y_min(self) -> int:
        return self.y1

    @property
    def y_max(self) -> int:
        return self.y3

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)

    def within_bounds(self, width: int, height: int) -> bool:
        return 0 <= self.x_min and self.x_max < width and 0 <= self.y_min and self.y_max < height

    def iou(self, other: "BoundingBox") -> float:
        ix = min(self.x_max, other.x_max) - max(self.x_min, other.x_min) + 1
        iy = min(self.y_max, other.y_max) - max(self.y_min, other.y_min) + 1
        if ix <= 0 or iy <= 0:
            return 0.0
        inter = ix * iy
        return inter / (self.area + other.area - inter)

    def to_fields(self) -> dict[str, int]:
        return {
            "x1": self.x1, "y1": self.y1, "x2": self.x2, "y2": self.y2,
            "x3": self.x3, "y3": self.y3, "x4": self.x4, "y4": self.y4,
        }

    @classmethod
    def from_fields(cls, fields: dict) -> "BoundingBox":
        return cls(**{k: int(fields[k]) for k in ("x1", "y1", "x2", "y2", "x3", "y3", "x4", "y4")})


def encode_mask(mask: np.ndarray) -> tuple[int, ...]:
    """Run-length encode a binary mask, row-major, zero-run first."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return ()
    changes = np.flatnonzero(np.diff(flat.view(np.int8))) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(bounds)
    if flat[0]:
        counts = np.concatenate(([0], counts))
    return tuple(int(c) for c in counts)


def decode_mask(runs: tuple[int, ...], height: int, width: int) -> np.ndarray:
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    value = False
    for count in runs:
        if value:
            flat[pos:pos + count] = True
        pos += count
        value = not value
    if pos != height * width:
        raise InvalidInputError(f"run lengths sum to {pos}, expected {height * width}")
    return flat.reshape(height, width)


@dataclass(frozen=True)
class LabelFinding:
    label: str
    probability: float
    box: BoundingBox | None = None
    mask: tuple[int, ...] | None = None


@dataclass(frozen=True)
class InferenceResult:
    model: str
    model_version: int
    status: str
    findings: tuple[LabelFinding, ...]

    def finding(self, label: str) -> LabelFinding:
        for f in self.findings:
            if f.label == label:
                return f
        raise UnknownLabelError(f"no finding for label {label!r}")


@dataclass(frozen=True)
class TrainingExample:
    image: ImagePayload
    label: str
    y: int
    box: BoundingBox | None = None

    def __post_init__(self) -> None:
        if self.y not in (0, 1):
            raise InvalidInputError("ground truth y must be 0 or 1")
        if self.box is not None:
            if self.y != 1:
                raise InvalidInputError("a supervision box requires y = 1")
            if not self.box.within_bounds(self.image.width, self.image.height):
                raise InvalidInputError("supervision box exceeds image bounds")


class ModelWeights:
    """Per-label weight planes plus biases; value semantics for training steps."""

    def __init__(self, planes: dict[str, np.ndarray], biases: dict[str, float]):
        self.planes = {label: np.asarray(p, dtype=np.float64) for label, p in planes.items()}
        self.biases = {label: float(b) for label, b in biases.items()}

    @classmethod
    def zeros(cls, cfg: ModelConfig) -> "ModelWeights":
        return cls(
            planes={label: np.zeros(cfg.shape) for label in cfg.labels},
            biases={label: 0.0 for label in cfg.labels},
        )

    def copy(self) -> "ModelWeights":
        return ModelWeights(
            planes={l: p.copy() for l, p in self.planes.items()},
            biases=dict(self.biases),
        )

    def validate(self, cfg: ModelConfig) -> None:
        if set(self.planes) != set(cfg.labels) or set(self.biases) != set(cfg.labels):
            raise InvalidInputError("weight labels do not match configuration")
        for label in cfg.labels:
            plane = self.planes[label]
            if plane.shape != cfg.shape:
                raise InvalidInputError(
                    f"plane {label!r} has shape {plane.shape}, expected {cfg.shape}"
                )
            if not np.all(np.isfinite(plane)) or not math.isfinite(self.biases[label]):
                raise InvalidInputError(f"non-finite weight values for label {label!r}")

    def equals(self, other: "ModelWeights") -> bool:
        if set(self.planes) != set(other.planes):
            return False
        return all(
            np.array_equal(self.planes[l], other.planes[l]) and self.biases[l] == other.biases[l]
            for l in self.planes
        )

    def to_dict(self) -> dict:
        return {
            "labels": list(self.planes),
            "planes": {l: p.tolist() for l, p in self.planes.items()},
            "biases": dict(self.biases),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelWeights":
        return cls(
            planes={l: np.array(data["planes"][l], dtype=np.float64) for l in data["labels"]},
            biases={l: float(data["biases"][l]) for l in data["labels"]},
        )


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _bce(z: float, y: int) -> float:
    # softplus(z) - y*z, stable for large |z|
    return max(z, 0.0) - y * z + math.log1p(math.exp(-abs(z)))


def _normalized(image: ImagePayload) -> np.ndarray:
    return image.as_array().astype(np.float64) / 255.0


def _box_mask(box: BoundingBox, shape: tuple[int, int]) -> np.ndarray:
    inside = np.zeros(shape, dtype=bool)
    inside[box.y_min:box.y_max + 1, box.x_min:box.x_max + 1] = True
    return inside


def extract_box(saliency: np.ndarray, tau: float) -> BoundingBox | None:
    """Tight bounding rectangle of cells at or above tau times the max.

    Returns None when the map has no positive cell.
    """
    s = np.asarray(saliency, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("saliency map contains non-finite values")
    if not 0.0 < tau < 1.0:
        raise InvalidInputError("tau must lie in (0, 1)")
    peak = float(s.max())
    if peak <= 0.0:
        return None
    hot = s >= tau * peak
    rows = np.flatnonzero(hot.any(axis=1))
    cols = np.flatnonzero(hot.any(axis=0))
    return BoundingBox.from_extent(int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


def infer(
    weights: ModelWeights,
    image: ImagePayload,
    cfg: ModelConfig,
    *,
    model: str = "",
    model_version: int = 0,
    status: str = STATUS_READY,
) -> InferenceResult:
    """Run the detector over one image.

    Per label: probability through the sigmoid of the weighted pixel sum, and,
    when the label is detected (p >= theta_det) and the saliency map has a
    positive peak, a thresholded saliency mask plus its tight bounding box.
    Pure and deterministic.
    """
    if (image.height, image.width) != cfg.shape:
        raise InvalidInputError(
            f"image is {image.width}x{image.height}, model expects {cfg.width}x{cfg.height}"
        )
    x = _normalized(image)
    findings = []
    for label in cfg.labels:
        w = weights.planes[label]
        z = float(np.vdot(w, x)) + weights.biases[label]
        p = sigmoid(z)
        saliency = w * x
        box = None
        mask = None
        if p >= cfg.theta_det:
            peak = float(saliency.max())
            if peak > 0.0:
                hot = saliency >= cfg.tau * peak
                mask = encode_mask(hot)
                rows = np.flatnonzero(hot.any(axis=1))
                cols = np.flatnonzero(hot.any(axis=0))
                box = BoundingBox.from_extent(int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))
        findings.append(LabelFinding(label=label, probability=p, box=box, mask=mask))
    return InferenceResult(
        model=model, model_version=model_version, status=status, findings=tuple(findings)
    )


def _single_grad(
    weights: ModelWeights, ex: TrainingExample, cfg: ModelConfig
) -> tuple[float, np.ndarray, float]:
    """Loss plus gradient w.r.t. the example's own label plane and bias."""
    if ex.label not in cfg.labels:
        raise UnknownLabelError(f"label {ex.label!r} not in model configuration")
    if (ex.image.height, ex.image.width) != cfg.shape:
        raise InvalidInputError(
            f"example image is {ex.image.width}x{ex.image.height}, expected {cfg.width}x{cfg.height}"
        )
    x = _normalized(ex.image)
    w = weights.planes[ex.label]
    b = weights.biases[ex.label]
    z = float(np.vdot(w, x)) + b
    p = sigmoid(z)

    loss = _bce(z, ex.y)
    d_w = (p - ex.y) * x
    d_b = p - ex.y

    if ex.box is not None and cfg.lambda_loc > 0.0:
        saliency = w * x
        inside = _box_mask(ex.box, cfg.shape)
        n_in = int(inside.sum())
        n_out = saliency.size - n_in
        in_hinge = np.maximum(0.0, cfg.m_in - saliency[inside])
        loc = float(in_hinge.mean())
        d_w -= cfg.lambda_loc / n_in * (x * inside * (saliency < cfg.m_in))
        if n_out > 0:
            out_hinge = np.maximum(0.0, saliency[~inside])
            loc += float(out_hinge.sum()) / n_out
            d_w += cfg.lambda_loc / n_out * (x * ~inside * (saliency > 0.0))
        loss += cfg.lambda_loc * loc

    if cfg.lambda_reg > 0.0:
        loss += cfg.lambda_reg * float(np.sum(w * w))
        d_w += 2.0 * cfg.lambda_reg * w

    return loss, d_w, d_b


def loss_and_grad(
    weights: ModelWeights, ex: TrainingExample, cfg: ModelConfig
) -> tuple[float, ModelWeights]:
    """Loss and its exact analytic gradient, shaped like the full weight set.

    Loss is cross-entropy on the example's label, plus (when a supervision
    box is present) a hinge pressure pushing saliency above m_in inside the
    box and below zero outside, plus an L2 penalty on that label's plane.
    Planes of other labels carry zero gradient.
    """
    loss, d_w, d_b = _single_grad(weights, ex, cfg)
    grad = ModelWeights.zeros(cfg)
    grad.planes[ex.label] = d_w
    grad.biases[ex.label] = d_b
    return loss, grad


def sgd_step(
    weights: ModelWeights, examples: list[TrainingExample], cfg: ModelConfig
) -> ModelWeights:
    """One step: weights minus eta times the mean gradient over the batch.

    The input weight set is left untouched.
    """
    if not examples:
        raise InvalidInputError("sgd_step requires a non-empty example list")
    acc_w: dict[str, np.ndarray] = {}
    acc_b: dict[str, float] = {}
    for ex in examples:
        _, d_w, d_b = _single_grad(weights, ex, cfg)
        if ex.label in acc_w:
            acc_w[ex.label] += d_w
            acc_b[ex.label] += d_b
        else:
            acc_w[ex.label] = d_w
            acc_b[ex.label] = d_b
    out = weights.copy()
    scale = cfg.eta / len(examples)
    for label, d_w in acc_w.items():
        out.planes[label] -= scale * d_w
        out.biases[label] -= scale * acc_b[label]
    return out


def batch_loss(weights: ModelWeights, examples: list[TrainingExample], cfg: ModelConfig) -> float:
    """Mean loss over a batch, evaluated without touching the weights."""
    if not examples:
        raise InvalidInputError("batch_loss requires a non-empty example list")
    return sum(_single_grad(weights, ex, cfg)[0] for ex in examples) / len(examples)
