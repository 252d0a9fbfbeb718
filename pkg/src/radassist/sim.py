"""Simulation harness: synthetic studies, simulated radiologists, experiment arms.

The generator plants at most one bright rectangle per label, each label in its
own image quadrant, so the per-pixel linear model can both classify and
localize it. This is an honest toy: labels are linearly separable by
construction, and nothing here resembles clinical image statistics.

The experiment runs three arms over identical seeded data: `isolated`
(per-node personalization only), `swarm` (same plus a weight merge every R
batches), and `centralized` (one model consuming every node's corrections),
then evaluates all final models on a shared held-out test set. Everything is
driven by one master seed; two runs produce byte-identical reports.
"""

from __future__ import annotations

import csv
import io
import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, UndefinedMetricError
from .model import (
    BoundingBox,
    ImagePayload,
    InferenceResult,
    ModelConfig,
    ModelWeights,
    TrainingExample,
    infer,
    sgd_step,
)
from .registry import ModelRegistry
from .retraining import RetrainingEngine
from .store import AnnotationStore, CorrectionRecord
from .swarm import MergeSpec, SwarmNode, run_swarm_round

ARM_ISOLATED = "isolated"
ARM_SWARM = "swarm"
ARM_CENTRALIZED = "centralized"
ARMS = (ARM_ISOLATED, ARM_SWARM, ARM_CENTRALIZED)

CENTRAL_OWNER = "central"

# seed stream tags, so independent draws never share a stream
_STREAM_PRETRAIN = 1
_STREAM_NODE_STUDIES = 2
_STREAM_TEST_STUDIES = 3
_STREAM_RADIOLOGIST = 4


def derive_seed(master: int, *parts: int) -> int:
    return int(np.random.SeedSequence((master, *parts)).generate_state(1)[0])


class Ticker:
    """Deterministic clock stand-in: each call returns the next integer."""

    def __init__(self) -> None:
        self._now = 0.0

    def __call__(self) -> float:
        self._now += 1.0
        return self._now


@dataclass(frozen=True)
class StudyTruth:
    image: ImagePayload
    present: dict[str, bool]
    boxes: dict[str, BoundingBox]
    seed: int


def quadrant_bounds(index: int, cfg: ModelConfig) -> tuple[int, int, int, int]:
    """(row0, row1, col0, col1) of quadrant `index` (TL, TR, BL, BR), half-open."""
    mid_r, mid_c = cfg.height // 2, cfg.width // 2
    rows = (0, mid_r) if index % 4 in (0, 1) else (mid_r, cfg.height)
    cols = (0, mid_c) if index % 4 in (0, 2) else (mid_c, cfg.width)
    return rows[0], rows[1], cols[0], cols[1]


def gen_synthetic_study(seed: int, cfg: ModelConfig) -> StudyTruth:
    """One study: Gaussian background, one bright rectangle per present label.

    Each label is present independently with probability 0.5 and draws its
    rectangle (sides uniform in 8..20 px) inside its own quadrant, adding +80
    intensity. Deterministic in the seed.
    """
    rng = np.random.default_rng(seed)
    arr = np.clip(rng.normal(64.0, 16.0, cfg.shape), 0, 255)
    present: dict[str, bool] = {}
    boxes: dict[str, BoundingBox] = {}
    for idx, label in enumerate(cfg.labels):
        present[label] = bool(rng.random() < 0.5)
        if not present[label]:
            continue
        r0, r1, c0, c1 = quadrant_bounds(idx, cfg)
        max_h, max_w = r1 - r0, c1 - c0
        rect_h = int(rng.integers(8, 21))
        rect_w = int(rng.integers(8, 21))
        rect_h, rect_w = min(rect_h, max_h), min(rect_w, max_w)
        top = int(rng.integers(r0, r1 - rect_h + 1))
        left = int(rng.integers(c0, c1 - rect_w + 1))
        arr[top:top + rect_h, left:left + rect_w] = np.clip(
            arr[top:top + rect_h, left:left + rect_w] + 80.0, 0, 255
        )
        boxes[label] = BoundingBox.from_extent(left, top, left + rect_w - 1, top + rect_h - 1)
    image = ImagePayload.from_array(arr.astype(np.uint8))
    return StudyTruth(image=image, present=present, boxes=boxes, seed=seed)


@dataclass(frozen=True)
class RadiologistProfile:
    user_id: str
    correction_rate: float = 1.0
    box_jitter_sigma: float = 1.0
    blind_spot: frozenset[str] = frozenset()
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.correction_rate <= 1.0:
            raise InvalidInputError("correction_rate must lie in [0, 1]")
        if self.box_jitter_sigma < 0:
            raise InvalidInputError("box_jitter_sigma must be >= 0")


def warranted_corrections(
    result: InferenceResult, truth: StudyTruth, iou_accept: float = 0.5
) -> list[tuple[str, str, BoundingBox | None]]:
    """What a perfectly attentive reader would fix: (label, disposition, truth box)."""
    out = []
    for finding in result.findings:
        label = finding.label
        detected = finding.box is not None
        actual = truth.present.get(label, False)
        if detected and not actual:
            out.append((label, "disabled", None))
        elif not detected and actual:
            out.append((label, "added", truth.boxes[label]))
        elif detected and actual and finding.box.iou(truth.boxes[label]) < iou_accept:
            out.append((label, "box-adjusted", truth.boxes[label]))
    return out


def _jitter_box(
    box: BoundingBox, sigma: float, rng: np.random.Generator, width: int, height: int
) -> BoundingBox:
    if sigma == 0:
        return box
    jit = rng.normal(0.0, sigma, 4)
    x_min = int(np.clip(round(box.x_min + jit[0]), 0, width - 1))
    y_min = int(np.clip(round(box.y_min + jit[1]), 0, height - 1))
    x_max = int(np.clip(round(box.x_max + jit[2]), 0, width - 1))
    y_max = int(np.clip(round(box.y_max + jit[3]), 0, height - 1))
    return BoundingBox.from_extent(
        min(x_min, x_max), min(y_min, y_max), max(x_min, x_max), max(y_min, y_max)
    )


def simulate_radiologist(
    profile: RadiologistProfile,
    result: InferenceResult,
    truth: StudyTruth,
    rng: np.random.Generator,
    study_id: str,
    received_at: float = 0.0,
) -> list[CorrectionRecord]:
    """Corrections this reader actually submits for one study.

    Warranted fixes are dropped for blind-spot labels and, independently,
    with probability 1 - correction_rate. Boxes the reader draws are the
    truth boxes under Gaussian corner jitter, clipped to the image.
    """
    records = []
    for label, disposition, truth_box in warranted_corrections(result, truth):
        if label in profile.blind_spot:
            continue
        if rng.random() >= profile.correction_rate:
            continue
        corrected = None
        if truth_box is not None:
            corrected = _jitter_box(
                truth_box, profile.box_jitter_sigma, rng,
                truth.image.width, truth.image.height,
            )
        records.append(CorrectionRecord(
            correction_id=f"{study_id}:{label}:{profile.user_id}",
            user_id=profile.user_id,
            model=result.model,
            model_version=result.model_version,
            study_id=study_id,
            label=label,
            disposition=disposition,
            image=truth.image,
            corrected_box=corrected,
            original_finding=result.finding(label),
            received_at=received_at,
        ))
    return records


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: share of positive/negative pairs ranked correctly, ties half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)
    return float(wins / (len(pos) * len(neg)))


# ---------------------------------------------------------------------------
# Experiment


@dataclass(frozen=True)
class ExperimentConfig:
    nodes: int = 4
    studies_per_node: int = 200
    test_studies: int = 200
    swarm_period: int = 5  # merge after every R completed batches
    arms: tuple[str, ...] = ARMS
    master_seed: int = 20260301
    n_batch: int = 4
    model_name: str = "lesion-detector"
    # calibrated: weak enough that corrections matter, strong enough to bootstrap
    pretrain_studies: int = 12
    pretrain_epochs: int = 30
    correction_rate: float = 1.0
    box_jitter_sigma: float = 1.0
    blind_spots: tuple[tuple[str, tuple[str, ...]], ...] = (
        ("radiologist-4", ("lesion-c",)),
    )

    def __post_init__(self) -> None:
        unknown = set(self.arms) - set(ARMS)
        if unknown:
            raise InvalidInputError(f"unknown arm names: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        kw = dict(data)
        if "arms" in kw:
            kw["arms"] = tuple(kw["arms"])
        if "blind_spots" in kw:
            kw["blind_spots"] = tuple(
                (user, tuple(labels)) for user, labels in kw["blind_spots"]
            )
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes,
            "studies_per_node": self.studies_per_node,
            "test_studies": self.test_studies,
            "swarm_period": self.swarm_period,
            "arms": list(self.arms),
            "master_seed": self.master_seed,
            "n_batch": self.n_batch,
            "model_name": self.model_name,
            "pretrain_studies": self.pretrain_studies,
            "pretrain_epochs": self.pretrain_epochs,
            "correction_rate": self.correction_rate,
            "box_jitter_sigma": self.box_jitter_sigma,
            "blind_spots": [[user, list(labels)] for user, labels in self.blind_spots],
        }


def default_profiles(exp: ExperimentConfig) -> list[RadiologistProfile]:
    blind = dict(exp.blind_spots)
    profiles = []
    for i in range(exp.nodes):
        user = f"radiologist-{i + 1}"
        profiles.append(RadiologistProfile(
            user_id=user,
            correction_rate=exp.correction_rate,
            box_jitter_sigma=exp.box_jitter_sigma,
            blind_spot=frozenset(blind.get(user, ())),
            rng_seed=derive_seed(exp.master_seed, _STREAM_RADIOLOGIST, i),
        ))
    return profiles


def pretrain_weights(exp: ExperimentConfig, cfg: ModelConfig) -> ModelWeights:
    """Supervised warm start on a small synthetic base set (the 'pretrained' model)."""
    examples: list[TrainingExample] = []
    for i in range(exp.pretrain_studies):
        truth = gen_synthetic_study(derive_seed(exp.master_seed, _STREAM_PRETRAIN, i), cfg)
        for label in cfg.labels:
            examples.append(TrainingExample(
                image=truth.image,
                label=label,
                y=1 if truth.present[label] else 0,
                box=truth.boxes.get(label),
            ))
    weights = ModelWeights.zeros(cfg)
    for _ in range(exp.pretrain_epochs):
        weights = sgd_step(weights, examples, cfg)
    return weights


def node_studies(exp: ExperimentConfig, cfg: ModelConfig) -> list[list[StudyTruth]]:
    return [
        [
            gen_synthetic_study(derive_seed(exp.master_seed, _STREAM_NODE_STUDIES, n, i), cfg)
            for i in range(exp.studies_per_node)
        ]
        for n in range(exp.nodes)
    ]


def test_studies(exp: ExperimentConfig, cfg: ModelConfig) -> list[StudyTruth]:
    return [
        gen_synthetic_study(derive_seed(exp.master_seed, _STREAM_TEST_STUDIES, i), cfg)
        for i in range(exp.test_studies)
    ]


def evaluate_weights(
    weights: ModelWeights, cfg: ModelConfig, studies: list[StudyTruth]
) -> dict[str, dict]:
    """Per-label AUC over presence plus mean IoU on truth-present studies."""
    results = [infer(weights, s.image, cfg) for s in studies]
    out: dict[str, dict] = {}
    for label in cfg.labels:
        scores = [r.finding(label).probability for r in results]
        labels01 = [1 if s.present[label] else 0 for s in studies]
        ious = []
        for r, s in zip(results, studies):
            if not s.present[label]:
                continue
            box = r.finding(label).box
            ious.append(box.iou(s.boxes[label]) if box is not None else 0.0)
        out[label] = {
            "auc": auc(scores, labels01),
            "mean_iou": float(np.mean(ious)) if ious else 0.0,
            "n_pos": int(sum(labels01)),
            "n_neg": int(len(labels01) - sum(labels01)),
        }
    return out


def _mean_auc(per_label: dict[str, dict]) -> float:
    return float(np.mean([m["auc"] for m in per_label.values()]))


@dataclass
class ArmOutcome:
    name: str
    per_node: dict[str, dict[str, dict]]  # user -> label -> metrics
    correction_counts: dict[str, dict[str, dict]]  # user -> label -> emitted/suppressed
    batches: int
    rounds: int
    deferred: int

    @property
    def mean_auc(self) -> float:
        return float(np.mean([_mean_auc(per_label) for per_label in self.per_node.values()]))

    def to_dict(self) -> dict:
        return {
            "per_node": self.per_node,
            "mean_auc": self.mean_auc,
            "correction_counts": self.correction_counts,
            "batches": self.batches,
            "rounds": self.rounds,
            "deferred": self.deferred,
        }


def _run_arm(
    arm: str,
    exp: ExperimentConfig,
    cfg: ModelConfig,
    state_dir: Path,
    base_weights: ModelWeights,
    studies: list[list[StudyTruth]],
    held_out: list[StudyTruth],
    profiles: list[RadiologistProfile],
) -> ArmOutcome:
    clock = Ticker()
    arm_dir = state_dir / arm
    registry = ModelRegistry(arm_dir, cfg, clock=clock)
    store = AnnotationStore(arm_dir, clock=clock)
    engine = RetrainingEngine(registry, store, cfg, report_dir=arm_dir / "reports")
    registry.seed_base(exp.model_name, init=base_weights.copy())

    arm_tag = zlib.crc32(arm.encode("utf-8"))
    rngs = [
        np.random.default_rng(derive_seed(profile.rng_seed, arm_tag))
        for profile in profiles
    ]
    all_users = [p.user_id for p in profiles]
    nodes = {
        p.user_id: SwarmNode(node_id=p.user_id, model=exp.model_name, local_version=0)
        for p in profiles
    }
    counts = {
        p.user_id: {label: {"emitted": 0, "suppressed": 0} for label in cfg.labels}
        for p in profiles
    }
    batches = rounds = deferred = 0

    for study_idx in range(exp.studies_per_node):
        for node_idx, profile in enumerate(profiles):
            truth = studies[node_idx][study_idx]
            owner = CENTRAL_OWNER if arm == ARM_CENTRALIZED else profile.user_id
            rec, weights = registry.resolve(exp.model_name, owner)
            result = infer(
                weights, truth.image, cfg,
                model=exp.model_name, model_version=rec.version,
            )
            study_id = f"{arm}-n{node_idx}-s{study_idx}"
            warranted = warranted_corrections(result, truth)
            records = simulate_radiologist(
                profile, result, truth, rngs[node_idx], study_id, received_at=clock()
            )
            emitted_labels = {r.label for r in records}
            for label, _, _ in warranted:
                bucket = counts[profile.user_id][label]
                if label in emitted_labels:
                    bucket["emitted"] += 1
                else:
                    bucket["suppressed"] += 1
            for record in records:
                store.append_correction(record)
            store.admit_untouched(profile.user_id, result, truth.image, emitted_labels)

            queue_users = all_users if arm == ARM_CENTRALIZED else [profile.user_id]
            pending = sum(
                len(store.pending_corrections(u, exp.model_name)) for u in queue_users
            )
            if pending >= exp.n_batch:
                report = engine.retrain_batch(exp.model_name, owner, users=queue_users)
                if report is not None:
                    deferred += len(report.deferred)
                    if report.new_version is not None:
                        batches += 1
                        if arm == ARM_SWARM:
                            nodes[profile.user_id].n_local += len(report.consumed)
                            node = nodes[profile.user_id]
                            node.local_version = report.new_version
                            if batches % exp.swarm_period == 0:
                                _sync_node_versions(registry, exp.model_name, nodes)
                                run_swarm_round(
                                    registry,
                                    list(nodes.values()),
                                    MergeSpec(),
                                    report_dir=arm_dir / "reports",
                                )
                                rounds += 1

    per_node: dict[str, dict[str, dict]] = {}
    for profile in profiles:
        owner = CENTRAL_OWNER if arm == ARM_CENTRALIZED else profile.user_id
        _, weights = registry.resolve(exp.model_name, owner)
        per_node[profile.user_id] = evaluate_weights(weights, cfg, held_out)
    return ArmOutcome(
        name=arm,
        per_node=per_node,
        correction_counts=counts,
        batches=batches,
        rounds=rounds,
        deferred=deferred,
    )


def _sync_node_versions(registry: ModelRegistry, model: str, nodes: dict[str, SwarmNode]) -> None:
    for node in nodes.values():
        rec, _ = registry.resolve(model, node.node_id)
        node.local_version = rec.version


@dataclass
class ExperimentReport:
    config: dict
    base_metrics: dict[str, dict]
    arms: dict[str, ArmOutcome]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "base_metrics": self.base_metrics,
            "arms": {name: outcome.to_dict() for name, outcome in self.arms.items()},
        }


def run_experiment(
    exp: ExperimentConfig,
    cfg: ModelConfig | None = None,
    state_dir: str | Path = "experiment-state",
) -> ExperimentReport:
    cfg = cfg or ModelConfig()
    state_dir = Path(state_dir)
    profiles = default_profiles(exp)
    base = pretrain_weights(exp, cfg)
    studies = node_studies(exp, cfg)
    held_out = test_studies(exp, cfg)
    base_metrics = evaluate_weights(base, cfg, held_out)
    arms = {
        arm: _run_arm(arm, exp, cfg, state_dir, base, studies, held_out, profiles)
        for arm in exp.arms
    }
    return ExperimentReport(config=exp.to_dict(), base_metrics=base_metrics, arms=arms)


# ---------------------------------------------------------------------------
# Report artifacts


def blind_spot_matrix(report: ExperimentReport, arm: str | None = None) -> dict[str, dict[str, dict]]:
    """Per (node, label) emitted vs suppressed correction counts for one arm."""
    name = arm or (ARM_SWARM if ARM_SWARM in report.arms else next(iter(report.arms)))
    if name not in report.arms:
        raise InvalidInputError(f"arm {name!r} not present in report")
    return report.arms[name].correction_counts


def summary_table(report: ExperimentReport) -> str:
    """Plain-text table: per-arm mean AUC and per-node per-label detail."""
    lines = []
    lines.append(f"{'arm':<14}{'mean AUC':>10}{'batches':>9}{'rounds':>8}{'deferred':>10}")
    for name, outcome in report.arms.items():
        lines.append(
            f"{name:<14}{outcome.mean_auc:>10.4f}{outcome.batches:>9}"
            f"{outcome.rounds:>8}{outcome.deferred:>10}"
        )
    lines.append("")
    header = f"{'arm':<14}{'node':<16}{'label':<12}{'AUC':>8}{'meanIoU':>9}"
    lines.append(header)
    for name, outcome in report.arms.items():
        for user, per_label in outcome.per_node.items():
            for label, metrics in per_label.items():
                lines.append(
                    f"{name:<14}{user:<16}{label:<12}"
                    f"{metrics['auc']:>8.4f}{metrics['mean_iou']:>9.4f}"
                )
    lines.append("")
    lines.append(f"{'base':<14}{'(pretrained)':<16}")
    for label, metrics in report.base_metrics.items():
        lines.append(
            f"{'base':<14}{'':<16}{label:<12}{metrics['auc']:>8.4f}{metrics['mean_iou']:>9.4f}"
        )
    return "\n".join(lines) + "\n"


def metrics_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["arm", "node", "label", "auc", "mean_iou", "n_pos", "n_neg"])
    for name, outcome in report.arms.items():
        for user, per_label in outcome.per_node.items():
            for label, metrics in per_label.items():
                writer.writerow([
                    name, user, label,
                    repr(metrics["auc"]), repr(metrics["mean_iou"]),
                    metrics["n_pos"], metrics["n_neg"],
                ])
    for label, metrics in report.base_metrics.items():
        writer.writerow([
            "base", "", label,
            repr(metrics["auc"]), repr(metrics["mean_iou"]),
            metrics["n_pos"], metrics["n_neg"],
        ])
    return buf.getvalue()


def write_run_artifacts(report: ExperimentReport, out_dir: str | Path) -> dict[str, Path]:
    """report.json + summary.txt + metrics.csv (+ figures) under one run directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.json",
        "summary": out / "summary.txt",
        "csv": out / "metrics.csv",
    }
    paths["report"].write_text(
        json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    paths["summary"].write_text(summary_table(report), encoding="utf-8")
    paths["csv"].write_text(metrics_csv(report), encoding="utf-8")
    from .figures import render_experiment_figures  # deferred: pulls in matplotlib

    for name, path in render_experiment_figures(report, out / "figures").items():
        paths[name] = path
    return paths
