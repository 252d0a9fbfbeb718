from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radassist.errors import ConflictError, InvalidInputError
from radassist.model import ModelConfig, ModelWeights
from radassist.registry import ModelRegistry
from radassist.swarm import MergeSpec, SwarmNode, merge, resolve_coefficients, run_swarm_round

CFG = ModelConfig(height=8, width=8)
MODEL = "lesion-detector"


def weights_from_seed(seed: int, cfg: ModelConfig = CFG) -> ModelWeights:
    rng = np.random.default_rng(seed)
    w = ModelWeights.zeros(cfg)
    for label in cfg.labels:
        w.planes[label] = rng.normal(0, 1, cfg.shape)
        w.biases[label] = float(rng.normal())
    return w


class TestResolveCoefficients:
    def test_additive_uniform(self):
        nodes = [SwarmNode(node_id=f"n{i}", model=MODEL, local_version=1) for i in range(4)]
        assert resolve_coefficients(nodes, MergeSpec()) == [0.25] * 4

    def test_weighted_proportional_to_volume(self):
        nodes = [
            SwarmNode(node_id="a", model=MODEL, local_version=1, n_local=1),
            SwarmNode(node_id="b", model=MODEL, local_version=1, n_local=3),
        ]
        assert resolve_coefficients(nodes, MergeSpec(method="weighted")) == [0.25, 0.75]

    def test_weighted_zero_volume_falls_back_to_uniform(self):
        nodes = [
            SwarmNode(node_id="a", model=MODEL, local_version=1, n_local=0),
            SwarmNode(node_id="b", model=MODEL, local_version=1, n_local=0),
        ]
        assert resolve_coefficients(nodes, MergeSpec(method="weighted")) == [0.5, 0.5]

    def test_explicit_coefficients_pass_through(self):
        nodes = [SwarmNode(node_id=c, model=MODEL, local_version=1) for c in "ab"]
        spec = MergeSpec(method="weighted", coefficients=(0.25, 0.75))
        assert resolve_coefficients(nodes, spec) == [0.25, 0.75]

    def test_bad_coefficient_sum_rejected(self):
        with pytest.raises(InvalidInputError):
            MergeSpec(coefficients=(0.5, 0.6))

    def test_negative_coefficient_rejected(self):
        with pytest.raises(InvalidInputError):
            MergeSpec(coefficients=(-0.5, 1.5))


class TestMerge:
    def test_identical_inputs_additive_is_identity(self):
        w = weights_from_seed(1)
        merged = merge([w.copy(), w.copy(), w.copy()], MergeSpec())
        for label in CFG.labels:
            assert np.allclose(merged.planes[label], w.planes[label], atol=1e-15)
            assert merged.biases[label] == pytest.approx(w.biases[label], abs=1e-15)

    def test_weighted_cell_arithmetic(self):
        a = ModelWeights.zeros(CFG)
        b = ModelWeights.zeros(CFG)
        b.planes["lesion-a"][2, 2] = 4.0
        spec = MergeSpec(method="weighted", coefficients=(0.25, 0.75))
        merged = merge([a, b], spec)
        assert merged.planes["lesion-a"][2, 2] == 3.0

    def test_layer_selector_copies_base_elsewhere(self):
        a = weights_from_seed(1)
        b = weights_from_seed(2)
        merged = merge([a, b], MergeSpec(layer_selector=("lesion-a",)))
        assert np.array_equal(merged.planes["lesion-b"], a.planes["lesion-b"])
        assert merged.biases["lesion-b"] == a.biases["lesion-b"]
        assert not np.array_equal(merged.planes["lesion-a"], a.planes["lesion-a"])

    def test_include_bias_false_keeps_base_bias(self):
        a = weights_from_seed(1)
        b = weights_from_seed(2)
        merged = merge([a, b], MergeSpec(include_bias=False))
        for label in CFG.labels:
            assert merged.biases[label] == a.biases[label]

    def test_empty_list_rejected(self):
        with pytest.raises(InvalidInputError):
            merge([], MergeSpec())

    def test_dimension_mismatch_rejected(self):
        other_cfg = ModelConfig(height=16, width=16)
        with pytest.raises(InvalidInputError):
            merge([weights_from_seed(1), weights_from_seed(1, other_cfg)], MergeSpec())

    def test_unknown_selector_label_rejected(self):
        with pytest.raises(InvalidInputError):
            merge([weights_from_seed(1)], MergeSpec(layer_selector=("nope",)))

    @given(seeds=st.lists(st.integers(0, 2**16), min_size=1, max_size=5))
    @settings(deadline=None, max_examples=40)
    def test_convexity_every_cell_in_hull(self, seeds: list[int]):
        sets = [weights_from_seed(s) for s in seeds]
        merged = merge(sets, MergeSpec())
        for label in CFG.labels:
            stack = np.stack([w.planes[label] for w in sets])
            assert np.all(merged.planes[label] >= stack.min(axis=0) - 1e-12)
            assert np.all(merged.planes[label] <= stack.max(axis=0) + 1e-12)

    def test_idempotent_fixed_point(self):
        sets = [weights_from_seed(s) for s in (1, 2, 3)]
        merged = merge(sets, MergeSpec())
        again = merge([merged.copy(), merged.copy(), merged.copy()], MergeSpec())
        for label in CFG.labels:
            assert np.allclose(again.planes[label], merged.planes[label], atol=1e-15)


@pytest.fixture
def registry(tmp_path) -> ModelRegistry:
    reg = ModelRegistry(tmp_path, CFG)
    reg.seed_base(MODEL)
    return reg


def publish_node(registry: ModelRegistry, node_id: str, seed: int) -> SwarmNode:
    rec = registry.publish(MODEL, node_id, weights_from_seed(seed))
    return SwarmNode(node_id=node_id, model=MODEL, local_version=rec.version, n_local=1)


class TestRunSwarmRound:
    def test_single_node_round_republishes_own_weights(self, registry):
        node = publish_node(registry, "alice", 1)
        published = run_swarm_round(registry, [node], MergeSpec())
        assert len(published) == 1
        assert published[0].status == "swarm-learned"
        assert published[0].version == 2
        _, weights = registry.resolve(MODEL, "alice")
        assert weights.equals(weights_from_seed(1))

    def test_two_nodes_additive_mean_everywhere(self, registry):
        a = publish_node(registry, "alice", 1)
        b = publish_node(registry, "bob", 2)
        run_swarm_round(registry, [a, b], MergeSpec())
        expected_a = weights_from_seed(1)
        expected_b = weights_from_seed(2)
        for owner in ("alice", "bob"):
            _, merged = registry.resolve(MODEL, owner)
            for label in CFG.labels:
                assert np.allclose(
                    merged.planes[label],
                    (expected_a.planes[label] + expected_b.planes[label]) / 2,
                )

    def test_round_rejected_while_any_node_retrains(self, registry):
        a = publish_node(registry, "alice", 1)
        b = publish_node(registry, "bob", 2)
        registry.set_status(MODEL, "bob", "retraining")
        with pytest.raises(ConflictError):
            run_swarm_round(registry, [a, b], MergeSpec())
        assert registry.resolve(MODEL, "alice")[0].version == 1
        assert registry.lineage(MODEL, "bob")[-1].version == 1

    def test_node_order_does_not_change_result(self, registry):
        a = publish_node(registry, "alice", 1)
        b = publish_node(registry, "bob", 2)
        c = publish_node(registry, "carol", 3)
        run_swarm_round(registry, [c, a, b], MergeSpec())
        merged_1 = registry.resolve(MODEL, "alice")[1]

        registry2 = ModelRegistry(registry.root.parent / "again", CFG)
        registry2.seed_base(MODEL)
        a2 = publish_node(registry2, "alice", 1)
        b2 = publish_node(registry2, "bob", 2)
        c2 = publish_node(registry2, "carol", 3)
        run_swarm_round(registry2, [b2, c2, a2], MergeSpec())
        merged_2 = registry2.resolve(MODEL, "alice")[1]
        assert merged_1.equals(merged_2)

    def test_round_resets_local_counts(self, registry):
        a = publish_node(registry, "alice", 1)
        b = publish_node(registry, "bob", 2)
        run_swarm_round(registry, [a, b], MergeSpec(method="weighted"))
        assert a.n_local == 0 and b.n_local == 0

    def test_round_report_written(self, registry, tmp_path):
        node = publish_node(registry, "alice", 1)
        report_dir = tmp_path / "reports"
        run_swarm_round(registry, [node], MergeSpec(), report_dir=report_dir)
        files = list((report_dir / "swarm" / MODEL).glob("round-*.json"))
        assert len(files) == 1

    def test_provenance_lists_all_sources(self, registry):
        a = publish_node(registry, "alice", 1)
        b = publish_node(registry, "bob", 2)
        published = run_swarm_round(registry, [a, b], MergeSpec())
        for rec in published:
            assert rec.provenance == ("merge:alice:1", "merge:bob:1")
