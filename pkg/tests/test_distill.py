import numpy as np
import pytest

from latkd.distill import (
    ENSEMBLE,
    GBT,
    MLP,
    LatkdConfig,
    LearnerParams,
    RegistryEntry,
    SoftLabelCache,
    SoftLabelMatrix,
    TeacherRegistry,
    frame_seed,
    materialize_soft_labels,
    run_schedule,
    teacher_set,
    train_frame,
    train_learner,
)
from latkd.errors import RegistryGapError, TrainingError
from latkd.gbt import GbtConfig
from latkd.mlp import MlpArchitecture, TrainOptions
from latkd.registry import BlobStore

from conftest import make_matrix, separable_toy


def entry(i, kind="mlp", h=None):
    return RegistryEntry(frame_index=i, kind=kind, model_hash=h or f"hash-{i}")


def small_params():
    return LearnerParams(
        mlp_arch=MlpArchitecture(input_dim=2, hidden=(6, 4), batch_size=64),
        mlp_opts=TrainOptions(epochs=6, early_stop=False),
        gbt_config=GbtConfig(n_estimators=4, min_child_weight=0.1, gamma=0.0, reg_lambda=1.0),
    )


def drift_frames(n_frames=3, rows=120, seed=0):
    frames = []
    for t in range(n_frames):
        frames.append(separable_toy(rows, seed=seed * 100 + t, fingerprint="chain"))
    return frames


class TestTeacherSet:
    def test_first_frame_has_no_history(self):
        assert teacher_set(TeacherRegistry(), 0, 0, "mlp") == []

    def test_window_from_k_to_t_minus_one(self):
        reg = TeacherRegistry([entry(0), entry(1), entry(2)])
        got = teacher_set(reg, 3, 1, "mlp")
        assert [e.frame_index for e in got] == [1, 2]

    def test_k_equals_t_truncates_everything(self):
        reg = TeacherRegistry([entry(0), entry(1), entry(2)])
        assert teacher_set(reg, 3, 3, "mlp") == []

    def test_size_is_exactly_t_minus_k(self):
        reg = TeacherRegistry([entry(i) for i in range(6)])
        for t in range(7):
            for k in range(t + 1):
                assert len(teacher_set(reg, t, k, "mlp")) == t - k

    def test_gap_is_reported(self):
        reg = TeacherRegistry([entry(0), entry(2)])
        with pytest.raises(RegistryGapError, match=r"\[1\]"):
            teacher_set(reg, 3, 0, "mlp")

    def test_kind_mismatch_is_a_gap(self):
        reg = TeacherRegistry([entry(0, kind="mlp")])
        with pytest.raises(RegistryGapError):
            teacher_set(reg, 1, 0, "ensemble")

    def test_bad_bounds_rejected(self):
        with pytest.raises(ValueError):
            teacher_set(TeacherRegistry(), 1, 2, "mlp")


class TestRegistry:
    def test_duplicate_frame_same_hash_is_idempotent(self):
        reg = TeacherRegistry([entry(0, h="abc")])
        reg.add(entry(0, h="abc"))
        assert len(reg.entries) == 1

    def test_duplicate_frame_new_hash_rejected(self):
        reg = TeacherRegistry([entry(0, h="abc")])
        with pytest.raises(TrainingError, match="new registry generation"):
            reg.add(entry(0, h="different"))

    def test_frame_indices_must_increase_per_kind(self):
        reg = TeacherRegistry([entry(2)])
        with pytest.raises(TrainingError, match="increase"):
            reg.add(entry(1))
        reg.add(entry(1, kind="gbt"))  # other kinds track separately

    def test_persistence_round_trip(self, tmp_path):
        reg = TeacherRegistry([entry(0), entry(1)])
        reg.save(tmp_path / "registry.json")
        loaded = TeacherRegistry.load(tmp_path / "registry.json")
        assert loaded.registry_hash == reg.registry_hash


class ConstantModel:
    """Hand-built scorer that always answers the same distribution."""

    def __init__(self, p1=0.25):
        self.p1 = p1
        self.calls = 0

    def predict_proba(self, X):
        self.calls += 1
        return np.tile([1.0 - self.p1, self.p1], (X.shape[0], 1))

    @property
    def model_hash(self):
        return f"constant-{self.p1}"


class TestSoftLabels:
    def test_constant_model_yields_identical_rows(self):
        frame = separable_toy(10, seed=0)
        soft = materialize_soft_labels(ConstantModel(0.3), frame)
        assert np.all(soft.probs == [0.7, 0.3])
        assert soft.dataset_fingerprint == frame.fingerprint()

    def test_cache_hit_avoids_rescoring(self, tmp_path):
        frame = separable_toy(10, seed=1)
        cache = SoftLabelCache(tmp_path)
        model = ConstantModel()
        first = materialize_soft_labels(model, frame, cache)
        assert model.calls == 1
        second = materialize_soft_labels(model, frame, cache)
        assert model.calls == 1  # zero additional evaluations
        assert cache.stats.hits == 1 and cache.stats.misses == 1
        assert np.array_equal(first.probs, second.probs)

    def test_matches_direct_scoring(self, tmp_path):
        from latkd.mlp import init_mlp

        frame = separable_toy(5, seed=2)
        model = init_mlp(MlpArchitecture(input_dim=2, hidden=(4, 3)), seed=0)
        soft = materialize_soft_labels(model, frame, SoftLabelCache(tmp_path))
        assert np.array_equal(soft.probs, model.predict_proba(frame.features))

    def test_corrupt_cache_entry_counts_as_miss(self, tmp_path):
        frame = separable_toy(6, seed=3)
        cache = SoftLabelCache(tmp_path)
        model = ConstantModel()
        materialize_soft_labels(model, frame, cache)
        victim = next(p for p in tmp_path.rglob("*") if p.is_file())
        victim.write_bytes(victim.read_bytes().replace(b"0.25", b"0.35"))
        materialize_soft_labels(model, frame, cache)
        assert cache.stats.corrupt == 1
        assert model.calls == 2

    def test_invalid_rows_rejected(self):
        with pytest.raises(ValueError, match="probability"):
            SoftLabelMatrix("m", "d", np.array([[0.9, 0.4]]))


class TestTrainFrame:
    def test_t0_bit_identical_to_baseline(self, tmp_path):
        frame = separable_toy(100, seed=4, fingerprint="chain")
        params = small_params()
        config = LatkdConfig(learner=MLP, seed=42)
        store = BlobStore(tmp_path)
        result = train_frame(0, frame, TeacherRegistry(), config, params, store=store)
        baseline = train_learner(MLP, frame, [], params, seed=frame_seed(42, 0))
        assert result.model.model_hash == baseline.model.model_hash

    def test_k_equals_t_bit_identical_to_baseline(self, tmp_path):
        frames = drift_frames(3, rows=90, seed=1)
        params = small_params()
        store = BlobStore(tmp_path)
        reg = TeacherRegistry()
        chain_cfg = LatkdConfig(learner=MLP, seed=9, truncation_k=0)
        for t in range(2):
            train_frame(t, frames[t], reg, chain_cfg, params, store=store)
        full_truncation = LatkdConfig(learner=MLP, seed=9, truncation_k=2)
        result = train_frame(2, frames[2], reg, full_truncation, params, store=store)
        baseline = train_learner(MLP, frames[2], [], params, seed=frame_seed(9, 2))
        assert result.model.model_hash == baseline.model.model_hash
        assert result.n_teachers == 0

    def test_teachers_change_the_loss_trace(self, tmp_path):
        frames = drift_frames(2, rows=100, seed=2)
        params = small_params()
        store = BlobStore(tmp_path)
        reg = TeacherRegistry()
        config = LatkdConfig(learner=MLP, seed=5)
        train_frame(0, frames[0], reg, config, params, store=store)
        # teacher flips labels -> its soft labels disagree with ground truth
        adversarial = config
        augmented = train_frame(1, frames[1], reg, adversarial, params, store=store)
        baseline = train_learner(MLP, frames[1], [], params, seed=frame_seed(5, 1))
        assert augmented.n_teachers == 1
        assert augmented.loss_traces["mlp"] != baseline.loss_traces["mlp"]

    def test_rows_consumed_equals_frame_size(self, tmp_path):
        frames = drift_frames(3, rows=80, seed=3)
        params = small_params()
        store = BlobStore(tmp_path)
        reg = TeacherRegistry()
        config = LatkdConfig(learner=GBT, seed=1)
        for t in range(3):
            result = train_frame(t, frames[t], reg, config, params, store=store)
            assert result.rows_consumed == 80

    def test_single_class_frame_fails(self, tmp_path):
        bad = make_matrix(np.zeros((10, 2)), np.zeros(10), fingerprint="chain")
        params = small_params()
        with pytest.raises(TrainingError, match="both classes"):
            train_frame(0, bad, TeacherRegistry(), LatkdConfig(learner=MLP), params, store=BlobStore(tmp_path))

    def test_registry_gap_fails(self, tmp_path):
        frames = drift_frames(2, rows=60, seed=5)
        params = small_params()
        with pytest.raises(RegistryGapError):
            train_frame(
                1, frames[1], TeacherRegistry(), LatkdConfig(learner=MLP, seed=0), params,
                store=BlobStore(tmp_path),
            )

    def test_ensemble_learner_registers_ensemble(self, tmp_path):
        frame = separable_toy(80, seed=6, fingerprint="chain")
        params = small_params()
        store = BlobStore(tmp_path)
        reg = TeacherRegistry()
        config = LatkdConfig(learner=ENSEMBLE, teacher_source="ensemble_chain", seed=3)
        result = train_frame(0, frame, reg, config, params, store=store)
        assert reg.get(0, ENSEMBLE) is not None
        loaded = store.get_model(result.entry.model_hash)
        X = frame.features[:5]
        assert np.allclose(loaded.predict_proba(X), result.model.predict_proba(X))


class TestRunSchedule:
    def test_single_frame_schedule(self, tmp_path):
        frames = drift_frames(1, rows=80, seed=7)
        result = run_schedule(
            frames, LatkdConfig(learner=MLP, seed=1), small_params(), run_root=tmp_path
        )
        assert len(result.frame_entries) == 1
        assert result.frame_entries[0]["n_teachers"] == 0

    def test_three_frame_chain_consumes_only_current_frame(self, tmp_path):
        frames = drift_frames(3, rows=70, seed=8)
        test = separable_toy(60, seed=99, fingerprint="chain")
        result = run_schedule(
            frames, LatkdConfig(learner=MLP, seed=2), small_params(), run_root=tmp_path, test=test
        )
        assert [e["rows_consumed"] for e in result.frame_entries] == [70, 70, 70]
        assert [e["n_teachers"] for e in result.frame_entries] == [0, 1, 2]
        assert all(e["metrics"]["auprc"] > 0 for e in result.frame_entries)
        assert len(result.registry.entries) == 3

    def test_rerun_is_bit_identical(self, tmp_path):
        frames = drift_frames(2, rows=60, seed=9)
        cfg = LatkdConfig(learner=MLP, seed=3)
        a = run_schedule(frames, cfg, small_params(), run_root=tmp_path / "a")
        b = run_schedule(frames, cfg, small_params(), run_root=tmp_path / "b")
        assert a.manifest.manifest_hash == b.manifest.manifest_hash
        assert a.registry.registry_hash == b.registry.registry_hash

    def test_crash_resume_matches_uninterrupted_run(self, tmp_path, monkeypatch):
        frames = drift_frames(3, rows=60, seed=10)
        cfg = LatkdConfig(learner=MLP, seed=4)

        uninterrupted = run_schedule(frames, cfg, small_params(), run_root=tmp_path / "full")

        import latkd.distill as distill_mod

        real_train_frame = distill_mod.train_frame
        calls = {"n": 0}

        def crashing_train_frame(t, *args, **kwargs):
            if t == 2 and calls["n"] == 0:
                calls["n"] += 1
                raise RuntimeError("simulated crash before frame 2")
            return real_train_frame(t, *args, **kwargs)

        monkeypatch.setattr(distill_mod, "train_frame", crashing_train_frame)
        with pytest.raises(TrainingError, match="frame 2"):
            run_schedule(frames, cfg, small_params(), run_root=tmp_path / "crash")
        # resume: completed frames are skipped, frame 2 trains now
        resumed = run_schedule(frames, cfg, small_params(), run_root=tmp_path / "crash")
        assert resumed.manifest.manifest_hash == uninterrupted.manifest.manifest_hash
        assert resumed.registry.registry_hash == uninterrupted.registry.registry_hash

    def test_cold_and_warm_cache_give_identical_metrics(self, tmp_path):
        frames = drift_frames(3, rows=60, seed=11)
        test = separable_toy(50, seed=98, fingerprint="chain")
        cfg = LatkdConfig(learner=MLP, seed=5)
        cold = run_schedule(frames, cfg, small_params(), run_root=tmp_path / "root", test=test)
        # second run in a fresh run dir, same root: soft-label cache is warm
        import shutil

        shutil.rmtree(tmp_path / "root" / "runs")
        warm = run_schedule(frames, cfg, small_params(), run_root=tmp_path / "root", test=test)
        cold_metrics = [e["metrics"]["auprc"] for e in cold.frame_entries]
        warm_metrics = [e["metrics"]["auprc"] for e in warm.frame_entries]
        assert cold_metrics == warm_metrics
        assert warm.manifest.manifest_hash == cold.manifest.manifest_hash
