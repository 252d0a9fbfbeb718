"""Batch few-shot retraining from radiologist corrections.

Each pending correction is classified as a false positive, false negative, or
box fix against the model version it was made on. False positives and false
negatives train as triplets (the erroneous image plus a confirmed true
positive and true negative drawn from the user's reference pool); box fixes
train directly as localization examples. A batch runs a fixed number of
epochs and publishes exactly one new version per lineage, with the consumed
correction ids as provenance.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidInputError
from .model import (
    STATUS_READY,
    STATUS_RETRAINING,
    ModelConfig,
    TrainingExample,
    batch_loss,
    infer,
    sgd_step,
)
from .registry import ModelRegistry
from .store import (
    POOL_TRUE_NEGATIVE,
    POOL_TRUE_POSITIVE,
    AnnotationStore,
    CorrectionRecord,
)

log = logging.getLogger(__name__)

KIND_FALSE_POSITIVE = "FP"
KIND_FALSE_NEGATIVE = "FN"
KIND_BOX_FIX = "BOX_FIX"

DEFER_POOL_MISS = "pool-miss"
DEFER_BAD_PAYLOAD = "bad-payload"


@dataclass(frozen=True)
class Triplet:
    """One erroneous example anchored by a confirmed positive and negative."""

    erroneous: TrainingExample
    tp: TrainingExample
    tn: TrainingExample
    label: str
    correction_id: str

    def __post_init__(self) -> None:
        if self.tp.y != 1 or self.tn.y != 0:
            raise InvalidInputError("triplet anchors must be a TP (y=1) and a TN (y=0)")
        if not (self.erroneous.label == self.tp.label == self.tn.label == self.label):
            raise InvalidInputError("triplet members must share one label")


@dataclass(frozen=True)
class RetrainReport:
    model: str
    owner: str
    new_version: int | None
    consumed: tuple[str, ...]
    deferred: tuple[tuple[str, str], ...]  # (correction_id, reason)
    epochs: int
    loss_start: float | None
    loss_end: float | None

    @property
    def loss_regressed(self) -> bool:
        return (
            self.loss_start is not None
            and self.loss_end is not None
            and self.loss_end > self.loss_start
        )

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "owner": self.owner,
            "new_version": self.new_version,
            "consumed": list(self.consumed),
            "deferred": [list(pair) for pair in self.deferred],
            "epochs": self.epochs,
            "loss_start": self.loss_start,
            "loss_end": self.loss_end,
            "loss_regressed": self.loss_regressed,
        }


def classify_correction(
    rec: CorrectionRecord, cfg: ModelConfig, scores: dict[str, float] | None = None
) -> str:
    """Sort a correction into FP, FN, or BOX_FIX.

    Disabling a displayed finding marks a false positive; adding a box the
    model missed marks a false negative; moving a box keeps the detection and
    fixes localization. A relabel counts as a false negative on the new label
    unless the model already detected it (scores, when given, are the model's
    per-label probabilities for the correction's image).
    """
    if rec.disposition == "disabled":
        return KIND_FALSE_POSITIVE
    if rec.disposition == "added":
        return KIND_FALSE_NEGATIVE
    if rec.disposition == "box-adjusted":
        return KIND_BOX_FIX
    # relabeled
    new_label_p = scores.get(rec.label) if scores else None
    if new_label_p is not None and new_label_p >= cfg.theta_det:
        old_detected = (
            rec.original_finding is not None
            and rec.original_finding.probability >= cfg.theta_det
        )
        if old_detected:
            log.info(
                "relabel %s: old and new labels both detected; treating as box fix on %r",
                rec.correction_id,
                rec.label,
            )
        return KIND_BOX_FIX
    return KIND_FALSE_NEGATIVE


def erroneous_example(rec: CorrectionRecord, kind: str) -> TrainingExample:
    """The training example a correction contributes."""
    if kind == KIND_FALSE_POSITIVE:
        return TrainingExample(image=rec.image, label=rec.label, y=0)
    # FN and BOX_FIX both affirm presence; corrected_box supervises when given
    return TrainingExample(image=rec.image, label=rec.label, y=1, box=rec.corrected_box)


@dataclass(frozen=True)
class TripletAssembly:
    triplets: tuple[Triplet, ...]
    box_fixes: tuple[tuple[str, TrainingExample], ...]  # (correction_id, example)
    deferred: tuple[tuple[str, str], ...]  # (correction_id, reason)

    @property
    def examples(self) -> list[TrainingExample]:
        out: list[TrainingExample] = []
        for t in self.triplets:
            out.extend((t.erroneous, t.tp, t.tn))
        out.extend(ex for _, ex in self.box_fixes)
        return out

    @property
    def consumed_ids(self) -> tuple[str, ...]:
        return tuple(t.correction_id for t in self.triplets) + tuple(
            cid for cid, _ in self.box_fixes
        )


def assemble_triplets(
    records: list[CorrectionRecord],
    pool: AnnotationStore,
    cfg: ModelConfig,
    scores_for: dict[str, dict[str, float]] | None = None,
) -> TripletAssembly:
    """Pair FP/FN corrections with pool anchors; box fixes pass through alone.

    A record whose label has no TP or TN companion in its user's pool is
    deferred with reason "pool-miss" (a result, not an error); it stays
    pending for the next batch.
    """
    triplets: list[Triplet] = []
    box_fixes: list[tuple[str, TrainingExample]] = []
    deferred: list[tuple[str, str]] = []
    for rec in records:
        scores = (scores_for or {}).get(rec.correction_id)
        kind = classify_correction(rec, cfg, scores)
        example = erroneous_example(rec, kind)
        if kind == KIND_BOX_FIX:
            box_fixes.append((rec.correction_id, example))
            continue
        tp = pool.pool_lookup(rec.user_id, rec.label, POOL_TRUE_POSITIVE)
        tn = pool.pool_lookup(rec.user_id, rec.label, POOL_TRUE_NEGATIVE)
        if tp is None or tn is None:
            deferred.append((rec.correction_id, DEFER_POOL_MISS))
            continue
        triplets.append(
            Triplet(
                erroneous=example,
                tp=tp,
                tn=tn,
                label=rec.label,
                correction_id=rec.correction_id,
            )
        )
    return TripletAssembly(
        triplets=tuple(triplets), box_fixes=tuple(box_fixes), deferred=tuple(deferred)
    )


@dataclass(frozen=True)
class BatchTriggerPolicy:
    """When a lineage's pending corrections become a training batch.

    t_max of 0 disables the age trigger entirely (simulation step mode runs
    without timers, so only the count threshold can fire).
    """

    n_batch: int = 4
    t_max: float = 600.0

    def decide(self, pending_count: int, oldest_age: float | None) -> bool:
        if pending_count >= self.n_batch:
            return True
        if (
            pending_count > 0
            and self.t_max > 0
            and oldest_age is not None
            and oldest_age >= self.t_max
        ):
            return True
        return False


def batch_trigger_policy(
    pending_count: int, oldest_age: float | None, policy: BatchTriggerPolicy
) -> str:
    return "fire" if policy.decide(pending_count, oldest_age) else "wait"


class RetrainingEngine:
    """Turns pending corrections into new personalized versions, one lineage at a time."""

    def __init__(
        self,
        registry: ModelRegistry,
        store: AnnotationStore,
        cfg: ModelConfig,
        report_dir: str | Path | None = None,
    ):
        self.registry = registry
        self.store = store
        self.cfg = cfg
        self.report_dir = Path(report_dir) if report_dir else None

    def pending_for(self, model: str, owner: str, users: list[str] | None = None) -> list[CorrectionRecord]:
        names = users if users is not None else [owner]
        records: list[CorrectionRecord] = []
        for user in names:
            records.extend(self.store.pending_corrections(user, model))
        records.sort(key=lambda r: (r.received_at, r.correction_id))
        return records

    def retrain_batch(
        self,
        model: str,
        owner: str,
        epochs: int | None = None,
        users: list[str] | None = None,
    ) -> RetrainReport | None:
        """Consume the pending queue into one new version for (model, owner).

        `users` names the correction queues feeding this lineage; the default
        is the owner's own queue (the centralized arm feeds one lineage from
        every user's queue). No pending corrections makes the call a no-op.
        Inference against the current snapshot continues while this runs.
        """
        pending = self.pending_for(model, owner, users)
        if not pending:
            return None
        epochs = epochs if epochs is not None else self.cfg.epochs_default

        self.registry.set_status(model, owner, STATUS_RETRAINING)
        try:
            current_rec, weights = self.registry.resolve(model, owner)

            usable: list[CorrectionRecord] = []
            scores_for: dict[str, dict[str, float]] = {}
            bad: list[tuple[str, str]] = []
            for rec in pending:
                if (
                    (rec.image.height, rec.image.width) != self.cfg.shape
                    or rec.label not in self.cfg.labels
                ):
                    bad.append((rec.correction_id, DEFER_BAD_PAYLOAD))
                    continue
                if rec.disposition == "relabeled":
                    # only relabels need the model's current view to classify
                    result = infer(weights, rec.image, self.cfg)
                    scores_for[rec.correction_id] = {
                        f.label: f.probability for f in result.findings
                    }
                usable.append(rec)

            assembly = assemble_triplets(usable, self.store, self.cfg, scores_for)
            deferred = bad + list(assembly.deferred)
            examples = assembly.examples
            if not examples:
                return RetrainReport(
                    model=model,
                    owner=owner,
                    new_version=None,
                    consumed=(),
                    deferred=tuple(deferred),
                    epochs=0,
                    loss_start=None,
                    loss_end=None,
                )

            loss_start = batch_loss(weights, examples, self.cfg)
            for _ in range(epochs):
                weights = sgd_step(weights, examples, self.cfg)
            loss_end = batch_loss(weights, examples, self.cfg)

            consumed = assembly.consumed_ids
            published = self.registry.publish(
                model,
                owner,
                weights,
                status=STATUS_READY,
                parent=(current_rec.owner, current_rec.version),
                provenance=consumed,
            )
            self.store.mark_consumed(consumed, published.version)

            report = RetrainReport(
                model=model,
                owner=owner,
                new_version=published.version,
                consumed=consumed,
                deferred=tuple(deferred),
                epochs=epochs,
                loss_start=loss_start,
                loss_end=loss_end,
            )
            if report.loss_regressed:
                log.warning(
                    "batch for %s/%s v%d regressed: %.6f -> %.6f",
                    model, owner, published.version, loss_start, loss_end,
                )
            self._persist(report)
            return report
        finally:
            if self.registry.status(model, owner) == STATUS_RETRAINING:
                self.registry.set_status(model, owner, STATUS_READY)

    def _persist(self, report: RetrainReport) -> None:
        if self.report_dir is None or report.new_version is None:
            return
        out_dir = self.report_dir / "retrain" / report.model / report.owner
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{report.new_version}.json"
        path.write_text(json.dumps(report.to_json(), indent=2), encoding="utf-8")
