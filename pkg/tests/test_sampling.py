"""Tests for class-imbalance subset sampling."""

import pytest
from pydantic import ValidationError

from schemas.dataset import DatasetManifest, PartitionPlan
from scripts.sampling import (
    SamplingError,
    build_model_trainset,
    load_plan,
    partition_fakes,
    partition_ids,
    save_plan,
)


def ids(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(n)]


class TestPartition:
    """Fake partitioning across backbones."""

    def test_published_arithmetic(self):
        """219,470 fakes over three models, plus 12,200 shared generated fakes."""
        reals = ids("r", 42_690 + 21_335)
        plan = partition_ids(reals, ids("f", 219_470), ids("g", 12_200), n_models=3, seed=0)
        assert sorted(len(s) for s in plan.fake_subsets) == [73_156, 73_157, 73_157]
        counts = [plan.trainset_counts(k) for k in range(3)]
        assert [c["real"] for c in counts] == [64_025] * 3
        assert sorted(c["fake"] for c in counts) == [85_356, 85_357, 85_357]

    def test_nine_fakes_three_models(self):
        """Nine fakes split three ways, disjoint and complete."""
        plan = partition_ids(ids("r", 2), ids("f", 9), [], n_models=3, seed=4)
        subsets = [set(s) for s in plan.fake_subsets]
        assert [len(s) for s in subsets] == [3, 3, 3]
        assert set().union(*subsets) == set(ids("f", 9))
        assert sum(len(s) for s in subsets) == 9

    def test_sizes_differ_by_at_most_one(self):
        """Subset sizes never differ by more than one."""
        for n in range(3, 40):
            plan = partition_ids([], ids("f", n), [], n_models=3, seed=n)
            sizes = [len(s) for s in plan.fake_subsets]
            assert max(sizes) - min(sizes) <= 1
            assert sum(sizes) == n

    def test_deterministic_per_seed(self):
        """Same seed, same subsets; another seed reshuffles but keeps the invariants."""
        fakes = ids("f", 30)
        a = partition_ids([], fakes, [], 3, seed=1)
        b = partition_ids([], fakes, [], 3, seed=1)
        c = partition_ids([], fakes, [], 3, seed=2)
        assert a.fake_subsets == b.fake_subsets
        assert a.fake_subsets != c.fake_subsets
        assert sorted(x for s in c.fake_subsets for x in s) == sorted(fakes)

    def test_every_model_gets_every_real_and_generated(self):
        """Reals and generated fakes are shared by all models."""
        plan = partition_ids(ids("r", 5), ids("f", 6), ids("g", 2), 3, seed=0)
        for k in range(3):
            model_ids = plan.model_ids(k)
            assert set(ids("r", 5)) <= set(model_ids)
            assert set(ids("g", 2)) <= set(model_ids)

    def test_too_few_fakes(self):
        """Fewer fakes than models cannot be partitioned."""
        with pytest.raises(SamplingError):
            partition_ids([], ids("f", 2), [], 3, seed=0)

    def test_zero_models(self):
        """n_models must be positive."""
        with pytest.raises(SamplingError):
            partition_ids([], ids("f", 6), [], 0, seed=0)

    def test_overlapping_plan_rejected(self):
        """A plan whose subsets overlap fails validation."""
        with pytest.raises(ValidationError, match="overlap"):
            PartitionPlan(n_models=2, seed=0, fake_subsets=[["a", "b"], ["b"]], real_ids=[])

    def test_plan_round_trip(self, tmp_path):
        """A saved plan loads back equal."""
        plan = partition_ids(ids("r", 3), ids("f", 7), ids("g", 1), 3, seed=5)
        save_plan(plan, tmp_path / "partition.json")
        assert load_plan(tmp_path / "partition.json") == plan


class TestModelTrainset:
    """Per-backbone trainsets from a manifest."""

    def test_desk_defaults(self, record_factory):
        """3,000 reals and 6,000 fakes give each model 3,000 real + 2,000 fake."""
        manifest = DatasetManifest(records=record_factory(3000, 6000))
        plan = partition_fakes(manifest, n_models=3, seed=0)
        for k in range(3):
            view = build_model_trainset(manifest, plan, k)
            assert view.counts == {"real": 3000, "fake": 2000}
            assert len(view) == 5000
            assert sum(r.label for r in view.records) == 3000

    def test_generated_fakes_are_shared(self, record_factory):
        """Generated fakes are not split and reach every trainset."""
        manifest = DatasetManifest(records=record_factory(4, 9, n_generated=2))
        plan = partition_fakes(manifest, n_models=3, seed=0)
        assert plan.generated_ids == ["g0", "g1"]
        assert all("g0" not in s for s in plan.fake_subsets)
        for k in range(3):
            assert build_model_trainset(manifest, plan, k).counts == {"real": 4, "fake": 5}

    def test_records_keep_manifest_order(self, record_factory):
        """A trainset lists its records in manifest order."""
        manifest = DatasetManifest(records=record_factory(3, 6))
        plan = partition_fakes(manifest, n_models=3, seed=0)
        view = build_model_trainset(manifest, plan, 1)
        positions = {r.id: i for i, r in enumerate(manifest.records)}
        assert [positions[r.id] for r in view.records] == sorted(positions[r.id] for r in view.records)

    def test_index_out_of_range(self, record_factory):
        """An unknown model index is a sampling error."""
        manifest = DatasetManifest(records=record_factory(3, 6))
        plan = partition_fakes(manifest, n_models=3, seed=0)
        with pytest.raises(SamplingError):
            build_model_trainset(manifest, plan, 3)

    def test_plan_ids_missing_from_manifest(self, record_factory):
        """A plan that names unknown ids cannot be applied."""
        manifest = DatasetManifest(records=record_factory(3, 6))
        plan = partition_ids(["r0", "ghost"], ["f0", "f1", "f2"], [], 3, seed=0)
        with pytest.raises(SamplingError, match="missing"):
            build_model_trainset(manifest, plan, 0)
