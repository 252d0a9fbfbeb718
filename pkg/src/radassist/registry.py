"""Versioned model catalog: per-owner lineages, status transitions, atomic publish.

Weight files live at data/models/<model>/<owner>/<version>.json and are
written (tmp + rename) before the catalog line that references them, so a
reader can never resolve a version whose weights are missing. The catalog is
an append-only JSONL; the current per-lineage status is in-memory state,
re-derived from the newest record on reload.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .errors import ConflictError, InvalidInputError, NotFoundError
from .model import (
    STATUS_READY,
    STATUS_RETRAINING,
    STATUS_SWARM_LEARNED,
    ModelConfig,
    ModelWeights,
)

BASE_OWNER = "base"

# legal set_status moves; same-status calls are a no-op
_TRANSITIONS = {
    (STATUS_READY, STATUS_RETRAINING),
    (STATUS_RETRAINING, STATUS_READY),
    (STATUS_READY, STATUS_SWARM_LEARNED),
    (STATUS_SWARM_LEARNED, STATUS_RETRAINING),
}


@dataclass(frozen=True)
class ModelVersionRecord:
    model: str
    owner: str
    version: int
    status: str
    parent: tuple[str, int] | None
    provenance: tuple[str, ...]
    created_at: float
    weights_ref: str

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "owner": self.owner,
            "version": self.version,
            "status": self.status,
            "parent": list(self.parent) if self.parent else None,
            "provenance": list(self.provenance),
            "created_at": self.created_at,
            "weights_ref": self.weights_ref,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ModelVersionRecord":
        parent = data.get("parent")
        return cls(
            model=data["model"],
            owner=data["owner"],
            version=int(data["version"]),
            status=data["status"],
            parent=(parent[0], int(parent[1])) if parent else None,
            provenance=tuple(data.get("provenance", ())),
            created_at=float(data.get("created_at", 0.0)),
            weights_ref=data["weights_ref"],
        )


class ModelRegistry:
    def __init__(self, root: str | Path, cfg: ModelConfig, clock: Callable[[], float] = time.time):
        self.root = Path(root)
        self.cfg = cfg
        self.clock = clock
        self._lock = threading.RLock()
        self._lineages: dict[tuple[str, str], list[ModelVersionRecord]] = {}
        self._status: dict[tuple[str, str], str] = {}
        self._weight_cache: dict[str, ModelWeights] = {}
        self._load()

    # -- paths / persistence ---------------------------------------------------

    def _catalog_path(self) -> Path:
        return self.root / "models" / "catalog.jsonl"

    def _weights_path(self, model: str, owner: str, version: int) -> Path:
        return self.root / "models" / model / owner / f"{version}.json"

    def _load(self) -> None:
        path = self._catalog_path()
        if not path.exists():
            return
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = ModelVersionRecord.from_json(json.loads(line))
                key = (rec.model, rec.owner)
                self._lineages.setdefault(key, []).append(rec)
                self._status[key] = rec.status

    def _append_catalog(self, rec: ModelVersionRecord) -> None:
        path = self._catalog_path()
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as f:
            f.write(json.dumps(rec.to_json()) + "\n")
            f.flush()
            os.fsync(f.fileno())

    def _write_weights(self, model: str, owner: str, version: int, weights: ModelWeights) -> str:
        path = self._weights_path(model, owner, version)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "model": model,
            "owner": owner,
            "version": version,
            "height": self.cfg.height,
            "width": self.cfg.width,
            **weights.to_dict(),
        }
        tmp = path.with_suffix(".json.tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            # dumps drives the C encoder; dump would stream through the Python one
            f.write(json.dumps(payload))
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
        ref = str(path.relative_to(self.root))
        with self._lock:
            self._weight_cache[ref] = weights.copy()
        return ref

    def _read_weights(self, rec: ModelVersionRecord) -> ModelWeights:
        cached = self._weight_cache.get(rec.weights_ref)
        if cached is None:
            payload = json.loads((self.root / rec.weights_ref).read_text(encoding="utf-8"))
            cached = ModelWeights.from_dict(payload)
            with self._lock:
                self._weight_cache[rec.weights_ref] = cached
        # copies keep cache entries immutable under caller mutation
        return cached.copy()

    # -- queries ---------------------------------------------------------------

    def models(self) -> list[str]:
        with self._lock:
            return sorted({model for model, _ in self._lineages})

    def owners(self, model: str) -> list[str]:
        with self._lock:
            return sorted(owner for m, owner in self._lineages if m == model)

    def lineage(self, model: str, owner: str) -> list[ModelVersionRecord]:
        with self._lock:
            records = self._lineages.get((model, owner))
            if records is None:
                raise NotFoundError(f"no lineage for model {model!r}, owner {owner!r}")
            return list(records)

    def has_lineage(self, model: str, owner: str) -> bool:
        with self._lock:
            return (model, owner) in self._lineages

    def status(self, model: str, owner: str) -> str:
        with self._lock:
            if (model, owner) in self._status:
                return self._status[(model, owner)]
            return self._status[self._records_key(model, owner)]

    def _records_key(self, model: str, owner: str) -> tuple[str, str]:
        """Owner lineage if it has published versions, else the shared base lineage."""
        if (model, owner) in self._lineages:
            return (model, owner)
        if (model, BASE_OWNER) in self._lineages:
            return (model, BASE_OWNER)
        raise NotFoundError(f"unknown model {model!r}")

    # -- commands ----------------------------------------------------------------

    def seed_base(self, model: str, init: ModelWeights | None = None) -> ModelVersionRecord:
        """Create version 0 of the shared base lineage."""
        with self._lock:
            if (model, BASE_OWNER) in self._lineages:
                raise ConflictError(f"model {model!r} is already seeded")
            weights = init if init is not None else ModelWeights.zeros(self.cfg)
            weights.validate(self.cfg)
            ref = self._write_weights(model, BASE_OWNER, 0, weights)
            rec = ModelVersionRecord(
                model=model,
                owner=BASE_OWNER,
                version=0,
                status=STATUS_READY,
                parent=None,
                provenance=(),
                created_at=self.clock(),
                weights_ref=ref,
            )
            self._append_catalog(rec)
            self._lineages[(model, BASE_OWNER)] = [rec]
            self._status[(model, BASE_OWNER)] = STATUS_READY
            return rec

    def publish(
        self,
        model: str,
        owner: str,
        weights: ModelWeights,
        status: str = STATUS_READY,
        parent: tuple[str, int] | None = None,
        provenance: tuple[str, ...] = (),
    ) -> ModelVersionRecord:
        """Append the next version for (model, owner); weights hit disk first."""
        if status not in (STATUS_READY, STATUS_SWARM_LEARNED):
            raise InvalidInputError(f"cannot publish a version with status {status!r}")
        weights.validate(self.cfg)
        with self._lock:
            if not self.has_lineage(model, BASE_OWNER) and not self.has_lineage(model, owner):
                raise NotFoundError(f"unknown model {model!r}")
            current = self._status.get((model, owner), STATUS_READY)
            if status == STATUS_SWARM_LEARNED and current == STATUS_RETRAINING:
                raise ConflictError("cannot publish a swarm-learned version mid-retraining")
            records = self._lineages.get((model, owner), [])
            if records:
                version = records[-1].version + 1
                default_parent = (owner, records[-1].version)
            elif owner != BASE_OWNER and self.has_lineage(model, BASE_OWNER):
                # a fresh personalized lineage continues the base numbering it forks from
                base_latest = self._lineages[(model, BASE_OWNER)][-1].version
                version = base_latest + 1
                default_parent = (BASE_OWNER, base_latest)
            else:
                version = 1
                default_parent = None
            if parent is None:
                parent = default_parent
            ref = self._write_weights(model, owner, version, weights)
            rec = ModelVersionRecord(
                model=model,
                owner=owner,
                version=version,
                status=status,
                parent=parent,
                provenance=tuple(provenance),
                created_at=self.clock(),
                weights_ref=ref,
            )
            self._append_catalog(rec)
            self._lineages.setdefault((model, owner), []).append(rec)
            self._status[(model, owner)] = status
            return rec

    def resolve(
        self, model: str, owner: str, version: int | None = None
    ) -> tuple[ModelVersionRecord, ModelWeights]:
        """Latest (or explicit) version with its weights.

        An owner with no personalized lineage resolves through the base
        lineage. The latest version is always a fully published snapshot;
        a lineage mid-retraining keeps serving its previous version.
        """
        with self._lock:
            key = self._records_key(model, owner)
            records = self._lineages[key]
            if version is None:
                rec = records[-1]
            else:
                matches = [r for r in records if r.version == version]
                if not matches and key[1] != BASE_OWNER:
                    # stale reference into the shared base lineage
                    base = self._lineages.get((model, BASE_OWNER), [])
                    matches = [r for r in base if r.version == version]
                if not matches:
                    raise NotFoundError(
                        f"model {model!r} owner {key[1]!r} has no version {version}"
                    )
                rec = matches[0]
        return rec, self._read_weights(rec)

    def set_status(self, model: str, owner: str, status: str) -> str:
        """Move the lineage status; returns the previous status."""
        if status not in (STATUS_READY, STATUS_RETRAINING, STATUS_SWARM_LEARNED):
            raise InvalidInputError(f"unknown status {status!r}")
        with self._lock:
            effective = self._records_key(model, owner)
            key = (model, owner)
            if key not in self._status:
                # a fresh owner's status starts from the lineage it resolves through
                self._status[key] = self._status[effective]
            previous = self._status[key]
            if previous != status and (previous, status) not in _TRANSITIONS:
                raise ConflictError(f"illegal status transition {previous!r} -> {status!r}")
            self._status[key] = status
            return previous
