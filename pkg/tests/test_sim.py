from __future__ import annotations

import numpy as np
import pytest

from radassist.errors import InvalidInputError, UndefinedMetricError
from radassist.model import (
    BoundingBox,
    InferenceResult,
    LabelFinding,
    ModelConfig,
    ModelWeights,
    TrainingExample,
    infer,
    sgd_step,
)
from radassist.retraining import RetrainingEngine
from radassist.sim import (
    ExperimentConfig,
    RadiologistProfile,
    StudyTruth,
    auc,
    blind_spot_matrix,
    derive_seed,
    gen_synthetic_study,
    quadrant_bounds,
    run_experiment,
    simulate_radiologist,
    warranted_corrections,
)

CFG = ModelConfig()


class TestGenerator:
    def test_same_seed_byte_identical(self):
        a = gen_synthetic_study(42, CFG)
        b = gen_synthetic_study(42, CFG)
        assert a.image.pixels == b.image.pixels
        assert a.present == b.present
        assert a.boxes == b.boxes

    def test_absent_label_records_no_box(self):
        for seed in range(30):
            truth = gen_synthetic_study(seed, CFG)
            for label in CFG.labels:
                assert (label in truth.boxes) == truth.present[label]

    def test_present_box_inside_its_quadrant(self):
        for seed in range(30):
            truth = gen_synthetic_study(seed, CFG)
            for idx, label in enumerate(CFG.labels):
                if not truth.present[label]:
                    continue
                r0, r1, c0, c1 = quadrant_bounds(idx, CFG)
                box = truth.boxes[label]
                assert r0 <= box.y_min and box.y_max < r1
                assert c0 <= box.x_min and box.x_max < c1

    def test_rect_side_lengths_in_range(self):
        seen = set()
        for seed in range(60):
            truth = gen_synthetic_study(seed, CFG)
            for box in truth.boxes.values():
                w = box.x_max - box.x_min + 1
                h = box.y_max - box.y_min + 1
                assert 8 <= w <= 20 and 8 <= h <= 20
                seen.add((w, h))
        assert len(seen) > 10  # actually varies


def result_for(findings: dict[str, tuple[float, BoundingBox | None]]) -> InferenceResult:
    out = []
    for label, (p, box) in findings.items():
        mask = (0, 1, CFG.height * CFG.width - 1) if box else None
        out.append(LabelFinding(label=label, probability=p, box=box, mask=mask))
    return InferenceResult(model="m", model_version=1, status="ready", findings=tuple(out))


def truth_for(boxes: dict[str, BoundingBox], seed: int = 3) -> StudyTruth:
    study = gen_synthetic_study(seed, CFG)
    present = {label: label in boxes for label in CFG.labels}
    return StudyTruth(image=study.image, present=present, boxes=boxes, seed=seed)


class TestSimulatedRadiologist:
    def test_blind_spot_suppresses_false_positive(self):
        result = result_for({
            "lesion-a": (0.3, None),
            "lesion-b": (0.9, BoundingBox.from_extent(40, 5, 50, 15)),
            "lesion-c": (0.2, None),
        })
        truth = truth_for({})  # nothing actually present
        profile = RadiologistProfile(user_id="u", blind_spot=frozenset({"lesion-b"}))
        records = simulate_radiologist(profile, result, truth, np.random.default_rng(0), "s1")
        assert records == []

    def test_zero_jitter_reproduces_truth_box(self):
        truth_box = BoundingBox.from_extent(5, 5, 15, 15)
        result = result_for({l: (0.3, None) for l in CFG.labels})
        truth = truth_for({"lesion-a": truth_box})
        profile = RadiologistProfile(user_id="u", box_jitter_sigma=0.0)
        records = simulate_radiologist(profile, result, truth, np.random.default_rng(0), "s1")
        assert len(records) == 1
        assert records[0].disposition == "added"
        assert records[0].corrected_box == truth_box

    def test_high_iou_box_accepted(self):
        truth_box = BoundingBox.from_extent(5, 5, 15, 15)
        near = BoundingBox.from_extent(5, 5, 15, 16)  # IoU ~0.92
        result = result_for({
            "lesion-a": (0.9, near),
            "lesion-b": (0.3, None),
            "lesion-c": (0.3, None),
        })
        truth = truth_for({"lesion-a": truth_box})
        profile = RadiologistProfile(user_id="u")
        records = simulate_radiologist(profile, result, truth, np.random.default_rng(0), "s1")
        assert records == []

    def test_low_iou_box_adjusted_toward_truth(self):
        truth_box = BoundingBox.from_extent(5, 5, 15, 15)
        offset = BoundingBox.from_extent(20, 20, 30, 30)
        result = result_for({
            "lesion-a": (0.9, offset),
            "lesion-b": (0.3, None),
            "lesion-c": (0.3, None),
        })
        truth = truth_for({"lesion-a": truth_box})
        profile = RadiologistProfile(user_id="u", box_jitter_sigma=0.0)
        records = simulate_radiologist(profile, result, truth, np.random.default_rng(0), "s1")
        assert len(records) == 1
        assert records[0].disposition == "box-adjusted"
        assert records[0].corrected_box == truth_box

    def test_detected_on_absent_truth_disabled(self):
        result = result_for({
            "lesion-a": (0.9, BoundingBox.from_extent(2, 2, 10, 10)),
            "lesion-b": (0.3, None),
            "lesion-c": (0.3, None),
        })
        truth = truth_for({})
        profile = RadiologistProfile(user_id="u")
        records = simulate_radiologist(profile, result, truth, np.random.default_rng(0), "s1")
        assert [r.disposition for r in records] == ["disabled"]
        assert records[0].corrected_box is None

    def test_correction_rate_zero_emits_nothing(self):
        result = result_for({
            "lesion-a": (0.9, BoundingBox.from_extent(2, 2, 10, 10)),
            "lesion-b": (0.3, None),
            "lesion-c": (0.3, None),
        })
        truth = truth_for({})
        profile = RadiologistProfile(user_id="u", correction_rate=0.0)
        records = simulate_radiologist(profile, result, truth, np.random.default_rng(0), "s1")
        assert records == []
        assert len(warranted_corrections(result, truth)) == 1


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties_half(self):
        assert auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_pair_count_oracle_case(self):
        # brute force over the 4 pos/neg pairs: wins (0.35>0.1), (0.8>0.1), (0.8>0.4); loss (0.35<0.4)
        assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2], [1, 1])

    def test_matches_brute_force_on_random_data(self):
        rng = np.random.default_rng(8)
        scores = rng.random(40)
        labels = rng.integers(0, 2, 40)
        if labels.sum() in (0, 40):
            labels[0] = 1 - labels[0]
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        wins = sum(
            1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg
        )
        assert auc(scores, labels) == pytest.approx(wins / (len(pos) * len(neg)))


class TestLocalizationAfterTraining:
    def test_trained_boxes_align_with_truth(self):
        # localization-weighted few-shot run; committed seed; every trained
        # lesion-a study must localize with IoU >= 0.5
        cfg = ModelConfig(lambda_loc=100.0, m_in=0.02)
        examples, studies = [], []
        for i in range(8):
            truth = gen_synthetic_study(derive_seed(411, 1, i), cfg)
            studies.append(truth)
            for label in cfg.labels:
                examples.append(TrainingExample(
                    image=truth.image, label=label,
                    y=1 if truth.present[label] else 0,
                    box=truth.boxes.get(label),
                ))
        weights = ModelWeights.zeros(cfg)
        for _ in range(300):
            weights = sgd_step(weights, examples, cfg)
        checked = 0
        for truth in studies:
            if not truth.present["lesion-a"]:
                continue
            finding = infer(weights, truth.image, cfg).finding("lesion-a")
            assert finding.box is not None
            assert finding.box.iou(truth.boxes["lesion-a"]) >= 0.5
            checked += 1
        assert checked >= 3


SMALL = dict(nodes=2, studies_per_node=12, test_studies=30, blind_spots=(), master_seed=7)


class TestExperiment:
    def test_unknown_arm_rejected(self):
        with pytest.raises(InvalidInputError):
            ExperimentConfig(arms=("isolated", "bogus"))

    def test_single_node_swarm_equals_isolated_bitwise(self, tmp_path):
        exp = ExperimentConfig(nodes=1, studies_per_node=20, test_studies=30,
                               blind_spots=(), master_seed=7,
                               arms=("isolated", "swarm"))
        report = run_experiment(exp, CFG, state_dir=tmp_path)
        assert report.arms["swarm"].per_node == report.arms["isolated"].per_node
        assert report.arms["swarm"].rounds > 0

    def test_zero_correction_rate_all_arms_equal_base(self, tmp_path):
        exp = ExperimentConfig(correction_rate=0.0, **SMALL)
        report = run_experiment(exp, CFG, state_dir=tmp_path)
        for outcome in report.arms.values():
            assert outcome.batches == 0
            for per_label in outcome.per_node.values():
                assert per_label == report.base_metrics

    def test_deterministic_reports(self, tmp_path):
        exp = ExperimentConfig(**SMALL)
        first = run_experiment(exp, CFG, state_dir=tmp_path / "a")
        second = run_experiment(exp, CFG, state_dir=tmp_path / "b")
        assert first.to_dict() == second.to_dict()

    def test_isolated_arm_reads_only_own_queues(self, tmp_path, monkeypatch):
        calls: list[tuple[str, tuple[str, ...]]] = []
        original = RetrainingEngine.retrain_batch

        def spy(self, model, owner, epochs=None, users=None):
            calls.append((owner, tuple(users if users is not None else [owner])))
            return original(self, model, owner, epochs=epochs, users=users)

        monkeypatch.setattr(RetrainingEngine, "retrain_batch", spy)
        exp = ExperimentConfig(arms=("isolated",), **SMALL)
        run_experiment(exp, CFG, state_dir=tmp_path)
        assert calls, "no batches fired"
        for owner, users in calls:
            assert users == (owner,)


class TestBlindSpotMatrix:
    def test_blind_node_shows_zero_emissions(self, tmp_path):
        exp = ExperimentConfig(
            nodes=2, studies_per_node=12, test_studies=30, master_seed=7,
            arms=("swarm",),
            blind_spots=(("radiologist-2", ("lesion-c",)),),
        )
        report = run_experiment(exp, CFG, state_dir=tmp_path)
        matrix = blind_spot_matrix(report)
        assert matrix["radiologist-2"]["lesion-c"]["emitted"] == 0
        assert matrix["radiologist-2"]["lesion-c"]["suppressed"] > 0

    def test_no_blind_spots_no_zero_rows(self, tmp_path):
        exp = ExperimentConfig(
            nodes=2, studies_per_node=25, test_studies=20, master_seed=7,
            arms=("isolated",), blind_spots=(),
        )
        report = run_experiment(exp, CFG, state_dir=tmp_path)
        for row in blind_spot_matrix(report).values():
            for cell in row.values():
                assert cell["emitted"] > 0

    def test_all_blind_profile_all_zero(self, tmp_path):
        exp = ExperimentConfig(
            nodes=1, studies_per_node=10, test_studies=20, master_seed=7,
            arms=("isolated",),
            blind_spots=(("radiologist-1", ("lesion-a", "lesion-b", "lesion-c")),),
        )
        report = run_experiment(exp, CFG, state_dir=tmp_path)
        matrix = blind_spot_matrix(report)
        for row in matrix.values():
            for cell in row.values():
                assert cell["emitted"] == 0
