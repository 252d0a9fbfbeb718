"""Swarm weight merging across user nodes.

Only weights cross node boundaries: a round reads each participant's latest
published version from the registry, merges selected label layers under
convex coefficients, and publishes the result back to every participant as a
new swarm-learned version. Raw corrections and images are never read here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ConflictError, InvalidInputError
from .model import STATUS_RETRAINING, STATUS_SWARM_LEARNED, ModelWeights
from .registry import ModelRegistry, ModelVersionRecord

METHOD_ADDITIVE = "additive"
METHOD_WEIGHTED = "weighted"


@dataclass
class SwarmNode:
    """One user node's view: its lineage position and batch volume since last merge."""

    node_id: str
    model: str
    local_version: int
    n_local: int = 0

    def __post_init__(self) -> None:
        if self.n_local < 0:
            raise InvalidInputError("n_local must be >= 0")


@dataclass(frozen=True)
class MergeSpec:
    method: str = METHOD_ADDITIVE
    coefficients: tuple[float, ...] | None = None
    layer_selector: tuple[str, ...] | None = None  # None means every label
    include_bias: bool = True
    allow_raw_sum: bool = False  # escape hatch: skip the sum-to-one check

    def __post_init__(self) -> None:
        if self.method not in (METHOD_ADDITIVE, METHOD_WEIGHTED):
            raise InvalidInputError(f"merge method must be additive or weighted, got {self.method!r}")
        if self.layer_selector is not None and not self.layer_selector:
            raise InvalidInputError("layer_selector must be non-empty when given")
        if self.coefficients is not None:
            if any(a < 0 for a in self.coefficients):
                raise InvalidInputError("merge coefficients must be non-negative")
            if not self.allow_raw_sum and abs(sum(self.coefficients) - 1.0) > 1e-9:
                raise InvalidInputError("merge coefficients must sum to 1")


def resolve_coefficients(nodes: list[SwarmNode], spec: MergeSpec) -> list[float]:
    """Per-node convex coefficients: uniform, explicit, or batch-volume weighted."""
    k = len(nodes)
    if k == 0:
        raise InvalidInputError("at least one node is required")
    if spec.coefficients is not None:
        if len(spec.coefficients) != k:
            raise InvalidInputError(
                f"{len(spec.coefficients)} coefficients for {k} nodes"
            )
        return list(spec.coefficients)
    if spec.method == METHOD_ADDITIVE:
        return [1.0 / k] * k
    total = sum(node.n_local for node in nodes)
    if total == 0:
        return [1.0 / k] * k
    return [node.n_local / total for node in nodes]


def merge(weight_sets: list[ModelWeights], spec: MergeSpec) -> ModelWeights:
    """Convex combination of the selected label layers; the rest copies the base.

    weight_sets[0] is the designated base for labels outside the selector.
    Weighted merges need explicit coefficients (run_swarm_round resolves them
    from node volumes first).
    """
    if not weight_sets:
        raise InvalidInputError("merge requires at least one weight set")
    labels = list(weight_sets[0].planes)
    shape = weight_sets[0].planes[labels[0]].shape
    for ws in weight_sets[1:]:
        if list(ws.planes) != labels:
            raise InvalidInputError("weight sets carry different label sets")
        if any(ws.planes[l].shape != shape for l in labels):
            raise InvalidInputError("weight sets have mismatched plane dimensions")

    if spec.coefficients is not None:
        if len(spec.coefficients) != len(weight_sets):
            raise InvalidInputError(
                f"{len(spec.coefficients)} coefficients for {len(weight_sets)} weight sets"
            )
        alphas = list(spec.coefficients)
    elif spec.method == METHOD_ADDITIVE:
        alphas = [1.0 / len(weight_sets)] * len(weight_sets)
    else:
        raise InvalidInputError("weighted merge requires explicit coefficients")

    selected = set(spec.layer_selector) if spec.layer_selector is not None else set(labels)
    unknown = selected - set(labels)
    if unknown:
        raise InvalidInputError(f"layer_selector names unknown labels: {sorted(unknown)}")

    out = weight_sets[0].copy()
    for label in labels:
        if label not in selected:
            continue
        plane = alphas[0] * weight_sets[0].planes[label]
        for alpha, ws in zip(alphas[1:], weight_sets[1:]):
            plane = plane + alpha * ws.planes[label]
        out.planes[label] = plane
        if spec.include_bias:
            out.biases[label] = math.fsum(
                alpha * ws.biases[label] for alpha, ws in zip(alphas, weight_sets)
            )
    return out


def run_swarm_round(
    registry: ModelRegistry,
    nodes: list[SwarmNode],
    spec: MergeSpec,
    report_dir: str | Path | None = None,
) -> list[ModelVersionRecord]:
    """One merge round: all-or-nothing publish of the merged weights to every node.

    Nodes are processed in ascending node_id so merges are bit-reproducible.
    Any participant mid-retraining rejects the whole round.
    """
    if not nodes:
        raise InvalidInputError("a swarm round needs at least one node")
    models = {node.model for node in nodes}
    if len(models) > 1:
        raise InvalidInputError(f"nodes span multiple models: {sorted(models)}")
    model = nodes[0].model

    ordered = sorted(nodes, key=lambda n: n.node_id)
    if len({n.node_id for n in ordered}) != len(ordered):
        raise InvalidInputError("duplicate node ids in a swarm round")

    for node in ordered:
        if registry.status(model, node.node_id) == STATUS_RETRAINING:
            raise ConflictError(
                f"node {node.node_id!r} is mid-retraining; merge round rejected"
            )

    sources: list[tuple[str, int]] = []
    weight_sets: list[ModelWeights] = []
    for node in ordered:
        rec, weights = registry.resolve(model, node.node_id, node.local_version)
        sources.append((rec.owner, rec.version))
        weight_sets.append(weights)

    alphas = resolve_coefficients(ordered, spec)
    merged = merge(weight_sets, replace(spec, coefficients=tuple(alphas), allow_raw_sum=True))

    provenance = tuple(f"merge:{owner}:{version}" for owner, version in sources)
    published = []
    for node in ordered:
        rec = registry.publish(
            model,
            node.node_id,
            merged.copy(),
            status=STATUS_SWARM_LEARNED,
            provenance=provenance,
        )
        published.append(rec)
    for node in ordered:
        node.n_local = 0

    if report_dir is not None:
        _write_round_report(Path(report_dir), model, spec, alphas, sources, published)
    return published


def _write_round_report(
    report_dir: Path,
    model: str,
    spec: MergeSpec,
    alphas: list[float],
    sources: list[tuple[str, int]],
    published: list[ModelVersionRecord],
) -> None:
    out_dir = report_dir / "swarm" / model
    out_dir.mkdir(parents=True, exist_ok=True)
    round_no = len(list(out_dir.glob("round-*.json"))) + 1
    payload = {
        "round": round_no,
        "method": spec.method,
        "coefficients": alphas,
        "layer_selector": list(spec.layer_selector) if spec.layer_selector else None,
        "include_bias": spec.include_bias,
        "sources": [[owner, version] for owner, version in sources],
        "results": [[rec.owner, rec.version] for rec in published],
    }
    (out_dir / f"round-{round_no}.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
