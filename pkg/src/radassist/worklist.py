"""Study worklist: scoring, triage ordering, round-robin assignment."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import InvalidInputError, NotFoundError
from .model import InferenceResult

STATE_UNREAD = "unread"
STATE_ASSIGNED = "assigned"
STATE_READ = "read"

_STATE_ORDER = (STATE_UNREAD, STATE_ASSIGNED, STATE_READ)


@dataclass(frozen=True)
class ScorePolicy:
    """How findings become one urgency number. Default: worst label wins."""

    kind: str = "max"
    weights: dict[str, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("max", "weighted"):
            raise InvalidInputError(f"unknown score policy {self.kind!r}")
        if self.kind == "weighted":
            if not self.weights:
                raise InvalidInputError("weighted policy requires per-label weights")
            if abs(sum(self.weights.values()) - 1.0) > 1e-9:
                raise InvalidInputError("per-label weights must sum to 1")


@dataclass(frozen=True)
class WorklistEntry:
    study_id: str
    accession_order: int
    modality: str = "CR"
    priority: float | None = None
    assigned_to: str | None = None
    state: str = STATE_UNREAD

    def __post_init__(self) -> None:
        if self.priority is not None and not 0.0 <= self.priority <= 1.0:
            raise InvalidInputError("priority must lie in [0, 1]")
        if self.state not in _STATE_ORDER:
            raise InvalidInputError(f"unknown worklist state {self.state!r}")

    def to_json(self) -> dict:
        return {
            "study_id": self.study_id,
            "accession_order": self.accession_order,
            "modality": self.modality,
            "priority": self.priority,
            "assigned_to": self.assigned_to,
            "state": self.state,
        }

    @classmethod
    def from_json(cls, data: dict) -> "WorklistEntry":
        return cls(
            study_id=data["study_id"],
            accession_order=int(data["accession_order"]),
            modality=data.get("modality", "CR"),
            priority=data.get("priority"),
            assigned_to=data.get("assigned_to"),
            state=data.get("state", STATE_UNREAD),
        )


def score(result: InferenceResult, policy: ScorePolicy = ScorePolicy()) -> float:
    """Urgency of one study from its inference result."""
    probs = {f.label: f.probability for f in result.findings}
    if policy.kind == "max":
        return max(probs.values())
    return sum(policy.weights.get(label, 0.0) * p for label, p in probs.items())


def prioritize(entries: list[WorklistEntry]) -> list[WorklistEntry]:
    """Scored entries first, descending priority; accession order breaks ties.

    Unscored entries trail in accession order. Pure permutation, idempotent.
    """
    scored = [e for e in entries if e.priority is not None]
    unscored = [e for e in entries if e.priority is None]
    scored.sort(key=lambda e: (-e.priority, e.accession_order))
    unscored.sort(key=lambda e: e.accession_order)
    return scored + unscored


def assign(entries: list[WorklistEntry], users: dict[str, int]) -> dict[str, str]:
    """Round-robin assignment down the prioritized order.

    `users` maps user id to current load; the rotation starts with the least
    loaded user (ties broken by user id) so work spreads deterministically.
    Returns study_id -> user_id.
    """
    if not users:
        raise InvalidInputError("assignment needs at least one user")
    rotation = sorted(users, key=lambda u: (users[u], u))
    assignments: dict[str, str] = {}
    for i, entry in enumerate(prioritize(entries)):
        assignments[entry.study_id] = rotation[i % len(rotation)]
    return assignments


class Worklist:
    """Single-writer worklist with a JSON snapshot on disk."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.RLock()
        self._entries: dict[str, WorklistEntry] = {}
        self._load()

    def _snapshot_path(self) -> Path:
        return self.root / "worklist.json"

    def _load(self) -> None:
        path = self._snapshot_path()
        if path.exists():
            for data in json.loads(path.read_text(encoding="utf-8")):
                entry = WorklistEntry.from_json(data)
                self._entries[entry.study_id] = entry

    def _flush(self) -> None:
        path = self._snapshot_path()
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(
            json.dumps([e.to_json() for e in self._entries.values()]), encoding="utf-8"
        )
        os.replace(tmp, path)

    def register(self, study_id: str, modality: str = "CR", priority: float | None = None) -> WorklistEntry:
        with self._lock:
            if study_id in self._entries:
                raise InvalidInputError(f"study {study_id!r} is already registered")
            entry = WorklistEntry(
                study_id=study_id,
                accession_order=len(self._entries) + 1,
                modality=modality,
                priority=priority,
            )
            self._entries[study_id] = entry
            self._flush()
            return entry

    def get(self, study_id: str) -> WorklistEntry:
        with self._lock:
            entry = self._entries.get(study_id)
            if entry is None:
                raise NotFoundError(f"study {study_id!r} is not on the worklist")
            return entry

    def set_priority(self, study_id: str, priority: float) -> WorklistEntry:
        with self._lock:
            entry = replace(self.get(study_id), priority=priority)
            self._entries[study_id] = entry
            self._flush()
            return entry

    def advance_state(self, study_id: str, state: str, assigned_to: str | None = None) -> WorklistEntry:
        with self._lock:
            entry = self.get(study_id)
            if _STATE_ORDER.index(state) < _STATE_ORDER.index(entry.state):
                raise InvalidInputError(
                    f"cannot move study {study_id!r} from {entry.state!r} back to {state!r}"
                )
            entry = replace(entry, state=state, assigned_to=assigned_to or entry.assigned_to)
            self._entries[study_id] = entry
            self._flush()
            return entry

    def entries(self) -> list[WorklistEntry]:
        with self._lock:
            return list(self._entries.values())

    def prioritized(self) -> list[WorklistEntry]:
        return prioritize(self.entries())

    def assign_all(self, users: dict[str, int]) -> dict[str, str]:
        """Assign every unread entry; returns study_id -> user_id."""
        with self._lock:
            unread = [e for e in self._entries.values() if e.state == STATE_UNREAD]
            assignments = assign(unread, users)
            for study_id, user_id in assignments.items():
                self._entries[study_id] = replace(
                    self._entries[study_id], state=STATE_ASSIGNED, assigned_to=user_id
                )
            if assignments:
                self._flush()
            return assignments
