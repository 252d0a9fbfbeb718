from __future__ import annotations

import threading

import numpy as np
import pytest

from radassist.errors import ConflictError, InvalidInputError, NotFoundError
from radassist.model import ModelConfig, ModelWeights
from radassist.registry import BASE_OWNER, ModelRegistry

CFG = ModelConfig()
MODEL = "lesion-detector"


def random_weights(seed: int) -> ModelWeights:
    rng = np.random.default_rng(seed)
    w = ModelWeights.zeros(CFG)
    for label in CFG.labels:
        w.planes[label] = rng.normal(0, 1, CFG.shape)
        w.biases[label] = float(rng.normal())
    return w


@pytest.fixture
def registry(tmp_path) -> ModelRegistry:
    return ModelRegistry(tmp_path, CFG)


class TestSeedBase:
    def test_zero_init_default(self, registry):
        rec = registry.seed_base(MODEL)
        assert rec.version == 0
        assert rec.owner == BASE_OWNER
        assert rec.status == "ready"
        _, weights = registry.resolve(MODEL, BASE_OWNER)
        assert weights.equals(ModelWeights.zeros(CFG))

    def test_double_seed_conflicts(self, registry):
        registry.seed_base(MODEL)
        with pytest.raises(ConflictError):
            registry.seed_base(MODEL)

    def test_seed_survives_restart(self, tmp_path):
        ModelRegistry(tmp_path, CFG).seed_base(MODEL, init=random_weights(1))
        reloaded = ModelRegistry(tmp_path, CFG)
        rec, weights = reloaded.resolve(MODEL, BASE_OWNER)
        assert rec.version == 0
        assert weights.equals(random_weights(1))


class TestPublish:
    def test_versions_increment(self, registry):
        registry.seed_base(MODEL)
        r1 = registry.publish(MODEL, BASE_OWNER, random_weights(1))
        r2 = registry.publish(MODEL, BASE_OWNER, random_weights(2))
        assert (r1.version, r2.version) == (1, 2)
        assert r1.parent == (BASE_OWNER, 0)
        assert r2.parent == (BASE_OWNER, 1)

    def test_owner_lineage_parents_off_base(self, registry):
        registry.seed_base(MODEL)
        rec = registry.publish(MODEL, "alice", random_weights(3))
        assert rec.version == 1
        assert rec.parent == (BASE_OWNER, 0)

    def test_non_finite_weights_rejected(self, registry):
        registry.seed_base(MODEL)
        bad = random_weights(1)
        bad.planes["lesion-a"][0, 0] = np.inf
        with pytest.raises(InvalidInputError):
            registry.publish(MODEL, BASE_OWNER, bad)
        assert registry.resolve(MODEL, BASE_OWNER)[0].version == 0

    def test_unknown_model_rejected(self, registry):
        with pytest.raises(NotFoundError):
            registry.publish(MODEL, "alice", random_weights(1))

    def test_lineage_terminates_at_version_zero(self, registry):
        registry.seed_base(MODEL)
        registry.publish(MODEL, "alice", random_weights(1))
        rec = registry.publish(MODEL, "alice", random_weights(2))
        hops = 0
        while rec.parent is not None:
            owner, version = rec.parent
            rec = registry.resolve(MODEL, owner, version)[0]
            hops += 1
            assert hops < 10
        assert rec.version == 0


class TestResolve:
    def test_latest_after_two_publishes(self, registry):
        registry.seed_base(MODEL)
        registry.publish(MODEL, BASE_OWNER, random_weights(1))
        registry.publish(MODEL, BASE_OWNER, random_weights(2))
        rec, _ = registry.resolve(MODEL, BASE_OWNER)
        assert rec.version == 2

    def test_explicit_version_bit_exact(self, registry):
        registry.seed_base(MODEL)
        expected = random_weights(42)
        registry.publish(MODEL, BASE_OWNER, expected)
        registry.publish(MODEL, BASE_OWNER, random_weights(43))
        _, weights = registry.resolve(MODEL, BASE_OWNER, version=1)
        assert weights.equals(expected)
        # the same floats must survive an actual reload from disk
        reloaded = ModelRegistry(registry.root, CFG)
        _, from_disk = reloaded.resolve(MODEL, BASE_OWNER, version=1)
        assert from_disk.equals(expected)

    def test_resolved_weights_not_aliased(self, registry):
        registry.seed_base(MODEL)
        _, first = registry.resolve(MODEL, BASE_OWNER)
        first.planes["lesion-a"][0, 0] = 99.0
        _, second = registry.resolve(MODEL, BASE_OWNER)
        assert second.planes["lesion-a"][0, 0] == 0.0

    def test_unknown_model_not_found(self, registry):
        with pytest.raises(NotFoundError):
            registry.resolve("nope", BASE_OWNER)

    def test_unknown_version_not_found(self, registry):
        registry.seed_base(MODEL)
        with pytest.raises(NotFoundError):
            registry.resolve(MODEL, BASE_OWNER, version=9)

    def test_owner_without_lineage_falls_back_to_base(self, registry):
        registry.seed_base(MODEL, init=random_weights(7))
        rec, weights = registry.resolve(MODEL, "alice")
        assert rec.owner == BASE_OWNER
        assert weights.equals(random_weights(7))


class TestSetStatus:
    def test_ready_to_retraining_and_back(self, registry):
        registry.seed_base(MODEL)
        assert registry.set_status(MODEL, BASE_OWNER, "retraining") == "ready"
        assert registry.set_status(MODEL, BASE_OWNER, "ready") == "retraining"

    def test_retraining_to_swarm_learned_rejected(self, registry):
        registry.seed_base(MODEL)
        registry.set_status(MODEL, BASE_OWNER, "retraining")
        with pytest.raises(ConflictError, match="retraining.*swarm-learned"):
            registry.set_status(MODEL, BASE_OWNER, "swarm-learned")

    def test_resolve_serves_snapshot_during_retraining(self, registry):
        registry.seed_base(MODEL)
        registry.publish(MODEL, BASE_OWNER, random_weights(1))
        registry.set_status(MODEL, BASE_OWNER, "retraining")
        rec, _ = registry.resolve(MODEL, BASE_OWNER)
        assert rec.version == 1
        assert rec.status == "ready"
        assert registry.status(MODEL, BASE_OWNER) == "retraining"

    def test_same_status_is_noop(self, registry):
        registry.seed_base(MODEL)
        assert registry.set_status(MODEL, BASE_OWNER, "ready") == "ready"

    def test_swarm_publish_mid_retraining_conflicts(self, registry):
        registry.seed_base(MODEL)
        registry.set_status(MODEL, BASE_OWNER, "retraining")
        with pytest.raises(ConflictError):
            registry.publish(MODEL, BASE_OWNER, random_weights(1), status="swarm-learned")


class TestAtomicity:
    def test_concurrent_resolve_never_torn(self, registry):
        registry.seed_base(MODEL)
        stop = threading.Event()
        failures: list[str] = []

        def hammer():
            while not stop.is_set():
                rec, weights = registry.resolve(MODEL, BASE_OWNER)
                expected = random_weights(rec.version) if rec.version else ModelWeights.zeros(CFG)
                if not weights.equals(expected):
                    failures.append(f"torn read at version {rec.version}")
                    return

        reader = threading.Thread(target=hammer)
        reader.start()
        for v in range(1, 15):
            registry.publish(MODEL, BASE_OWNER, random_weights(v))
        stop.set()
        reader.join()
        assert failures == []

    def test_catalog_replay_matches_memory(self, tmp_path):
        registry = ModelRegistry(tmp_path, CFG)
        registry.seed_base(MODEL)
        registry.publish(MODEL, "alice", random_weights(1))
        registry.publish(MODEL, "alice", random_weights(2), provenance=("c1", "c2"))
        reloaded = ModelRegistry(tmp_path, CFG)
        assert [r.version for r in reloaded.lineage(MODEL, "alice")] == [1, 2]
        assert reloaded.lineage(MODEL, "alice")[1].provenance == ("c1", "c2")
