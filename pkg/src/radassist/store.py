"""Durable annotation layer: correction records, SR-lite annotations, reference pool.

Everything is newline-delimited JSON under a data directory, one log per user
(or one document per study for annotations). Logs are append-only: a
consumption mark re-appends the full record with its single nullable field
set, and replay keeps the latest line per correction id. Appends are flushed
and fsynced before they are acknowledged. Image pixel data is never written
to by any operation here.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .errors import InvalidInputError
from .model import BoundingBox, ImagePayload, InferenceResult, LabelFinding, TrainingExample

DISPOSITIONS = ("disabled", "relabeled", "box-adjusted", "added")

POOL_TRUE_POSITIVE = "TP"
POOL_TRUE_NEGATIVE = "TN"


# ---------------------------------------------------------------------------
# JSON codecs (wire-facing field spellings live here and in the service)

def image_to_json(img: ImagePayload) -> dict:
    return {"width": img.width, "height": img.height, "image": img.to_base64()}


def image_from_json(data: dict) -> ImagePayload:
    return ImagePayload.from_base64(data["image"], int(data["width"]), int(data["height"]))


def box_to_json(box: BoundingBox | None) -> dict | None:
    return None if box is None else box.to_fields()


def box_from_json(data: dict | None) -> BoundingBox | None:
    return None if data is None else BoundingBox.from_fields(data)


def finding_to_json(finding: LabelFinding | None) -> dict | None:
    if finding is None:
        return None
    return {
        "label": finding.label,
        "probability": finding.probability,
        "box": box_to_json(finding.box),
        "mask": list(finding.mask) if finding.mask is not None else None,
    }


def finding_from_json(data: dict | None) -> LabelFinding | None:
    if data is None:
        return None
    return LabelFinding(
        label=data["label"],
        probability=float(data["probability"]),
        box=box_from_json(data.get("box")),
        mask=tuple(data["mask"]) if data.get("mask") is not None else None,
    )


def example_to_json(ex: TrainingExample) -> dict:
    return {
        "image": image_to_json(ex.image),
        "label": ex.label,
        "y": ex.y,
        "box": box_to_json(ex.box),
    }


def example_from_json(data: dict) -> TrainingExample:
    return TrainingExample(
        image=image_from_json(data["image"]),
        label=data["label"],
        y=int(data["y"]),
        box=box_from_json(data.get("box")),
    )


# ---------------------------------------------------------------------------
# Domain records

@dataclass(frozen=True)
class SrLiteAnnotation:
    """One finding annotation in the overlay layer, human- or model-authored."""

    annotation_id: str
    study_id: str
    author: str  # "user:<id>" or "model:<name>@<version>"
    label: str
    box: BoundingBox
    annotation_text: str
    created_at: float
    enabled: bool = True

    def __post_init__(self) -> None:
        if not (self.author.startswith("user:") or self.author.startswith("model:")):
            raise InvalidInputError("author must identify a human user or a model version")

    def to_json(self) -> dict:
        return {
            "annotation_id": self.annotation_id,
            "study_id": self.study_id,
            "author": self.author,
            "label": self.label,
            "box": box_to_json(self.box),
            "annotationText": self.annotation_text,
            "created_at": self.created_at,
            "enabled": self.enabled,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SrLiteAnnotation":
        return cls(
            annotation_id=data["annotation_id"],
            study_id=data["study_id"],
            author=data["author"],
            label=data["label"],
            box=BoundingBox.from_fields(data["box"]),
            annotation_text=data["annotationText"],
            created_at=float(data["created_at"]),
            enabled=bool(data["enabled"]),
        )


@dataclass
class CorrectionRecord:
    """One radiologist action against one inference; the unit of retraining."""

    correction_id: str
    user_id: str
    model: str
    model_version: int
    study_id: str
    label: str
    disposition: str
    image: ImagePayload
    corrected_box: BoundingBox | None = None
    original_finding: LabelFinding | None = None
    received_at: float = 0.0
    consumed_by_version: int | None = None

    def validate(self) -> None:
        if self.disposition not in DISPOSITIONS:
            raise InvalidInputError(
                f"disposition: {self.disposition!r} not one of {DISPOSITIONS}"
            )
        if self.disposition == "disabled" and self.corrected_box is not None:
            raise InvalidInputError("corrected_box: must be absent when disposition is disabled")
        if self.disposition in ("box-adjusted", "added") and self.corrected_box is None:
            raise InvalidInputError(
                f"corrected_box: required for disposition {self.disposition!r}"
            )
        if self.disposition == "relabeled":
            relabel = self.original_finding is not None and self.original_finding.label != self.label
            if self.corrected_box is None and not relabel:
                raise InvalidInputError(
                    "corrected_box: relabel needs a corrected box or a changed label"
                )
        if self.corrected_box is not None and not self.corrected_box.within_bounds(
            self.image.width, self.image.height
        ):
            raise InvalidInputError("corrected_box: exceeds image bounds")

    def to_json(self) -> dict:
        return {
            "correction_id": self.correction_id,
            "user_id": self.user_id,
            "model": self.model,
            "modelVersion": self.model_version,
            "study_id": self.study_id,
            "label": self.label,
            "disposition": self.disposition,
            "corrected_box": box_to_json(self.corrected_box),
            "original_finding": finding_to_json(self.original_finding),
            "image": image_to_json(self.image),
            "received_at": self.received_at,
            "consumed_by_version": self.consumed_by_version,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CorrectionRecord":
        return cls(
            correction_id=data["correction_id"],
            user_id=data["user_id"],
            model=data["model"],
            model_version=int(data["modelVersion"]),
            study_id=data["study_id"],
            label=data["label"],
            disposition=data["disposition"],
            image=image_from_json(data["image"]),
            corrected_box=box_from_json(data.get("corrected_box")),
            original_finding=finding_from_json(data.get("original_finding")),
            received_at=float(data.get("received_at", 0.0)),
            consumed_by_version=data.get("consumed_by_version"),
        )


def _append_line(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(payload) + "\n")
        f.flush()
        os.fsync(f.fileno())


def _read_lines(path: Path) -> Iterable[dict]:
    if not path.exists():
        return
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


class AnnotationStore:
    """File-backed store for corrections, annotations, and the reference pool."""

    def __init__(self, root: str | Path, clock: Callable[[], float] = time.time):
        self.root = Path(root)
        self.clock = clock
        self._lock = threading.RLock()
        # correction_id -> record, per user in arrival order
        self._corrections: dict[str, dict[str, CorrectionRecord]] = {}
        self._by_id: dict[str, str] = {}  # correction_id -> user_id
        self._pool: dict[str, list[dict]] = {}  # user_id -> pool lines in arrival order
        self._load()

    # -- persistence ---------------------------------------------------------

    def _corrections_path(self, user_id: str) -> Path:
        return self.root / "corrections" / f"{user_id}.jsonl"

    def _pool_path(self, user_id: str) -> Path:
        return self.root / "pool" / f"{user_id}.jsonl"

    def _annotations_path(self, study_id: str) -> Path:
        return self.root / "annotations" / f"{study_id}.json"

    def _load(self) -> None:
        corrections_dir = self.root / "corrections"
        if corrections_dir.is_dir():
            for path in sorted(corrections_dir.glob("*.jsonl")):
                user_id = path.stem
                log: dict[str, CorrectionRecord] = {}
                for data in _read_lines(path):
                    rec = CorrectionRecord.from_json(data)
                    log[rec.correction_id] = rec  # later lines supersede
                self._corrections[user_id] = log
                for cid in log:
                    self._by_id[cid] = user_id
        pool_dir = self.root / "pool"
        if pool_dir.is_dir():
            for path in sorted(pool_dir.glob("*.jsonl")):
                self._pool[path.stem] = list(_read_lines(path))

    # -- corrections ---------------------------------------------------------

    def append_correction(self, rec: CorrectionRecord) -> str:
        """Durably append one correction; idempotent on correction_id."""
        rec.validate()
        with self._lock:
            if rec.correction_id in self._by_id:
                return rec.correction_id
            _append_line(self._corrections_path(rec.user_id), rec.to_json())
            self._corrections.setdefault(rec.user_id, {})[rec.correction_id] = rec
            self._by_id[rec.correction_id] = rec.user_id
        return rec.correction_id

    def pending_corrections(self, user_id: str, model: str) -> list[CorrectionRecord]:
        """Unconsumed records for (user, model) in arrival order."""
        with self._lock:
            return [
                rec
                for rec in self._corrections.get(user_id, {}).values()
                if rec.model == model and rec.consumed_by_version is None
            ]

    def corrections_for_study(self, user_id: str, study_id: str) -> list[CorrectionRecord]:
        """All of one user's corrections against one study, consumed or not."""
        with self._lock:
            return [
                rec
                for rec in self._corrections.get(user_id, {}).values()
                if rec.study_id == study_id
            ]

    def oldest_pending_age(self, user_id: str, model: str) -> float | None:
        pending = self.pending_corrections(user_id, model)
        if not pending:
            return None
        return self.clock() - min(rec.received_at for rec in pending)

    def mark_consumed(self, ids: Iterable[str], version: int) -> int:
        """Set consumed_by_version on each id; returns the number newly marked.

        Already-consumed or unknown ids are skipped, never an error.
        """
        marked = 0
        with self._lock:
            for cid in ids:
                user_id = self._by_id.get(cid)
                if user_id is None:
                    continue
                rec = self._corrections[user_id][cid]
                if rec.consumed_by_version is not None:
                    continue
                rec.consumed_by_version = version
                _append_line(self._corrections_path(user_id), rec.to_json())
                marked += 1
        return marked

    # -- reference pool ------------------------------------------------------

    def pool_add(self, user_id: str, example: TrainingExample, kind: str) -> None:
        if kind not in (POOL_TRUE_POSITIVE, POOL_TRUE_NEGATIVE):
            raise InvalidInputError(f"pool kind must be TP or TN, got {kind!r}")
        if kind == POOL_TRUE_POSITIVE and example.y != 1:
            raise InvalidInputError("TP pool entries must carry y = 1")
        if kind == POOL_TRUE_NEGATIVE and example.y != 0:
            raise InvalidInputError("TN pool entries must carry y = 0")
        line = {"kind": kind, **example_to_json(example)}
        with self._lock:
            _append_line(self._pool_path(user_id), line)
            self._pool.setdefault(user_id, []).append(line)

    def pool_lookup(self, user_id: str, label: str, kind: str) -> TrainingExample | None:
        """Most recently added pooled example of that kind, or None."""
        with self._lock:
            for line in reversed(self._pool.get(user_id, [])):
                if line["kind"] == kind and line["label"] == label:
                    return example_from_json(line)
        return None

    def admit_untouched(
        self,
        user_id: str,
        result: InferenceResult,
        image: ImagePayload,
        corrected_labels: set[str],
    ) -> int:
        """Admission rule: findings the user left untouched enter the pool.

        Detected (box emitted) -> true positive with the model's own box;
        not detected and not added -> true negative. Returns admitted count.
        """
        admitted = 0
        for finding in result.findings:
            if finding.label in corrected_labels:
                continue
            if finding.box is not None:
                ex = TrainingExample(image=image, label=finding.label, y=1, box=finding.box)
                self.pool_add(user_id, ex, POOL_TRUE_POSITIVE)
            else:
                ex = TrainingExample(image=image, label=finding.label, y=0)
                self.pool_add(user_id, ex, POOL_TRUE_NEGATIVE)
            admitted += 1
        return admitted

    # -- SR-lite annotations ---------------------------------------------------

    def add_annotation(self, ann: SrLiteAnnotation) -> str:
        path = self._annotations_path(ann.study_id)
        with self._lock:
            existing = self.annotations_for(ann.study_id)
            if any(a.annotation_id == ann.annotation_id for a in existing):
                return ann.annotation_id
            payload = [a.to_json() for a in existing] + [ann.to_json()]
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(payload), encoding="utf-8")
            os.replace(tmp, path)
        return ann.annotation_id

    def annotations_for(self, study_id: str) -> list[SrLiteAnnotation]:
        path = self._annotations_path(study_id)
        if not path.exists():
            return []
        return [SrLiteAnnotation.from_json(d) for d in json.loads(path.read_text(encoding="utf-8"))]
