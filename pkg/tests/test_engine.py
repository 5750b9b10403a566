from __future__ import annotations

import numpy as np
import pytest

from ktmsearch.baselines import NoopTransfer, VcmTransfer, get_baseline
from ktmsearch.benchmarks import BaseFunction, generate_benchmark, generate_preset
from ktmsearch.engine import (
    CalibrationTable,
    EmtoConfig,
    TransferResult,
    calibrate_fmin,
    ga_generation,
    generate_offspring,
    load_calibration,
    normalized_score,
    run_emto,
    run_solo,
    save_calibration,
    sbx_pair,
)
from ktmsearch.errors import ConfigurationError, TransferFailedError
from ktmsearch.rng import derive_rng


def tiny_config(**overrides):
    base = dict(pop_size=16, generations=12, transfer_interval=5, nt=3,
                time_model="deterministic")
    base.update(overrides)
    return EmtoConfig(**base)


class TestConfig:
    def test_budget_property(self):
        cfg = EmtoConfig(pop_size=100, generations=100)
        assert cfg.budget_per_task == 10_000

    def test_nt_above_pop_rejected(self):
        with pytest.raises(ConfigurationError):
            EmtoConfig(pop_size=5, generations=10, nt=6)

    def test_bad_time_model_rejected(self):
        with pytest.raises(ConfigurationError):
            EmtoConfig(pop_size=5, generations=10, nt=2, time_model="lunar")


class TestGaGeneration:
    def test_identical_population_still_progresses(self):
        bench = generate_benchmark([BaseFunction.SPHERE], 1, 6, seed=0)
        task = bench.tasks[0]
        genotypes = np.tile(np.full(6, 10.0), (10, 1))
        fitness = task.evaluate_many(genotypes)
        rng = derive_rng(0, "ga-test")
        new_g, new_f = ga_generation(genotypes, fitness, task, rng)
        assert new_g.shape == genotypes.shape
        assert new_f.min() <= fitness.min()

    def test_same_seed_identical(self):
        bench = generate_benchmark([BaseFunction.RASTRIGIN], 1, 5, seed=1)
        task = bench.tasks[0]
        rng_a = derive_rng(7, "ga-test")
        rng_b = derive_rng(7, "ga-test")
        genotypes = derive_rng(3, "init").uniform(task.lower, task.upper, size=(12, 5))
        fitness = task.evaluate_many(genotypes)
        ga, fa = ga_generation(genotypes.copy(), fitness.copy(), task, rng_a)
        gb, fb = ga_generation(genotypes.copy(), fitness.copy(), task, rng_b)
        assert np.array_equal(ga, gb) and np.array_equal(fa, fb)

    def test_offspring_within_bounds(self):
        bench = generate_benchmark([BaseFunction.ACKLEY], 1, 4, seed=2)
        task = bench.tasks[0]
        rng = derive_rng(5, "ga-test")
        genotypes = rng.uniform(task.lower, task.upper, size=(20, 4))
        fitness = task.evaluate_many(genotypes)
        offspring = generate_offspring(genotypes, fitness, task.lower, task.upper, rng)
        assert offspring.shape == (20, 4)
        assert np.all(offspring >= task.lower) and np.all(offspring <= task.upper)

    def test_sbx_identical_parents_degenerate(self):
        rng = derive_rng(0, "sbx")
        p = np.array([0.3, -0.7, 2.0])
        c1, c2 = sbx_pair(p, p.copy(), 15.0, rng)
        assert np.array_equal(c1, p) and np.array_equal(c2, p)

    def test_ga_reduces_sphere_substantially(self):
        bench = generate_benchmark([BaseFunction.SPHERE], 1, 10, seed=0)
        cfg = EmtoConfig(pop_size=50, generations=100)
        ratios = []
        for seed in range(5):
            result = run_solo(bench, cfg, seed)
            ratios.append(result.trajectories[0, -1] / result.trajectories[0, 0])
        assert np.median(ratios) <= 0.1


class TestRunSolo:
    def test_budget_exactness(self, micro_engine_config):
        bench = generate_preset("B4-mini", seed=3)
        result = run_solo(bench, micro_engine_config, seed=0)
        assert np.all(result.eval_counts == micro_engine_config.budget_per_task)

    def test_trajectories_non_increasing(self, micro_engine_config):
        bench = generate_preset("B5-mini", seed=1)
        result = run_solo(bench, micro_engine_config, seed=2)
        for row in result.trajectories:
            assert np.all(np.diff(row) <= 0)

    def test_best_individuals_match_final_bests(self, micro_engine_config):
        bench = generate_preset("B4-mini", seed=6)
        result = run_solo(bench, micro_engine_config, seed=2)
        for task, ind, best in zip(bench.tasks, result.best_individuals, result.final_bests):
            assert ind.fitness == best
            assert task.evaluate(ind.genotype) == best

    def test_seed_reproducible_and_distinct(self, micro_engine_config):
        bench = generate_preset("B1-mini", seed=0)
        a = run_solo(bench, micro_engine_config, seed=0)
        b = run_solo(bench, micro_engine_config, seed=0)
        c = run_solo(bench, micro_engine_config, seed=1)
        assert np.array_equal(a.trajectories, b.trajectories)
        assert not np.array_equal(a.trajectories, c.trajectories)


class TestPairedStreams:
    def test_noop_bitwise_identical_to_solo(self, micro_engine_config):
        bench = generate_preset("B4-mini", seed=7)
        solo = run_solo(bench, micro_engine_config, seed=5)
        calib = CalibrationTable(benchmark_id=bench.id, f_min=solo.final_bests, seeds=(5,))
        emto = run_emto(bench, micro_engine_config, NoopTransfer(), calib, seed=5)
        assert np.array_equal(emto.trajectories, solo.trajectories)
        assert emto.s == 1.0

    def test_real_transfer_changes_trajectories(self, micro_engine_config):
        bench = generate_preset("B4-mini", seed=7)
        solo = run_solo(bench, micro_engine_config, seed=5)
        calib = CalibrationTable(benchmark_id=bench.id, f_min=solo.final_bests, seeds=(5,))
        emto = run_emto(bench, micro_engine_config, VcmTransfer(), calib, seed=5)
        assert not np.array_equal(emto.trajectories, solo.trajectories)
        assert np.all(emto.eval_counts == micro_engine_config.budget_per_task)


class TestRunEmto:
    def test_transfer_event_count(self):
        bench = generate_preset("B1-mini", seed=0)
        cfg = tiny_config(generations=20, transfer_interval=10)
        solo = run_solo(bench, cfg, seed=1)
        calib = CalibrationTable(benchmark_id=bench.id, f_min=solo.final_bests, seeds=(1,))
        result = run_emto(bench, cfg, NoopTransfer(), calib, seed=1)
        assert result.transfer_event_count == 2  # generations 10 and 20

    def test_budget_exact_for_all_baselines(self):
        bench = generate_preset("B4-mini", seed=2)
        cfg = tiny_config()
        solo = run_solo(bench, cfg, seed=3)
        calib = CalibrationTable(benchmark_id=bench.id, f_min=solo.final_bests, seeds=(3,))
        for name in ("noop", "vcm", "smm"):
            result = run_emto(bench, cfg, get_baseline(name), calib, seed=3)
            assert np.all(result.eval_counts == cfg.budget_per_task), name

    def test_budget_exact_for_sandboxed_snippet(self, replay_sandbox):
        from ktmsearch.sandbox import SnippetTransferModel
        from ktmsearch.testing import load_fixture

        bench = generate_preset("B4-mini", seed=2)
        cfg = tiny_config()
        solo = run_solo(bench, cfg, seed=3)
        calib = CalibrationTable(benchmark_id=bench.id, f_min=solo.final_bests, seeds=(3,))
        model = SnippetTransferModel(load_fixture("echo-best"), replay_sandbox)
        result = run_emto(bench, cfg, model, calib, seed=3)
        assert np.all(result.eval_counts == cfg.budget_per_task)

    def test_transfer_failure_propagates(self):
        bench = generate_preset("B1-mini", seed=0)
        cfg = tiny_config()
        solo = run_solo(bench, cfg, seed=0)
        calib = CalibrationTable(benchmark_id=bench.id, f_min=solo.final_bests, seeds=(0,))

        class Exploding:
            name = "exploding"

            def propose(self, snapshot):
                raise TransferFailedError("boom", verdict=None)

        with pytest.raises(TransferFailedError):
            run_emto(bench, cfg, Exploding(), calib, seed=0)

    def test_calibration_mismatch_rejected(self):
        bench = generate_preset("B1-mini", seed=0)
        calib = CalibrationTable(benchmark_id="other", f_min=np.ones(3), seeds=(0,))
        with pytest.raises(ConfigurationError):
            run_emto(bench, tiny_config(), NoopTransfer(), calib, seed=0)

    def test_deterministic_time_model(self, micro_engine_config):
        bench = generate_preset("B1-mini", seed=0)
        solo = run_solo(bench, micro_engine_config, seed=1)
        calib = CalibrationTable(benchmark_id=bench.id, f_min=solo.final_bests, seeds=(1,))
        a = run_emto(bench, micro_engine_config, NoopTransfer(), calib, seed=1)
        b = run_emto(bench, micro_engine_config, NoopTransfer(), calib, seed=1)
        assert a.t == b.t

    def test_oversized_transfer_groups_rejected(self, micro_engine_config):
        bench = generate_preset("B1-mini", seed=0)
        solo = run_solo(bench, micro_engine_config, seed=1)
        calib = CalibrationTable(benchmark_id=bench.id, f_min=solo.final_bests, seeds=(1,))

        class WrongGroupCount:
            name = "bad"

            def propose(self, snapshot):
                return TransferResult([np.zeros((1, 10))])

        with pytest.raises(ConfigurationError):
            run_emto(bench, micro_engine_config, WrongGroupCount(), calib, seed=1)


class TestCalibration:
    def test_single_seed_matches_solo(self, micro_engine_config):
        bench = generate_preset("B4-mini", seed=4)
        solo = run_solo(bench, micro_engine_config, seed=9)
        table = calibrate_fmin(bench, micro_engine_config, [9])
        assert np.allclose(table.f_min, np.maximum(solo.final_bests, table.epsilon))

    def test_zero_best_floored(self):
        table = CalibrationTable(benchmark_id="x", f_min=np.array([0.0, 1.0]), seeds=(0,))
        assert table.f_min[0] == table.epsilon
        assert table.f_min[1] == 1.0

    def test_multi_seed_mean(self, micro_engine_config):
        bench = generate_preset("B1-mini", seed=4)
        seeds = [0, 1, 2]
        table = calibrate_fmin(bench, micro_engine_config, seeds)
        manual = np.mean(
            [run_solo(bench, micro_engine_config, s).final_bests for s in seeds], axis=0
        )
        assert np.allclose(table.f_min, np.maximum(manual, table.epsilon))
        assert table.run_count == 3

    def test_no_seeds_rejected(self, micro_engine_config):
        bench = generate_preset("B1-mini", seed=4)
        with pytest.raises(ConfigurationError):
            calibrate_fmin(bench, micro_engine_config, [])

    def test_round_trip(self, tmp_path, micro_engine_config):
        bench = generate_preset("B1-mini", seed=4)
        table = calibrate_fmin(bench, micro_engine_config, [0])
        path = tmp_path / "calib.json"
        save_calibration(table, path)
        loaded = load_calibration(path)
        assert loaded.benchmark_id == table.benchmark_id
        assert np.array_equal(loaded.f_min, table.f_min)
        assert loaded.seeds == table.seeds


class TestNormalizedScore:
    def test_arithmetic(self):
        calib = CalibrationTable(benchmark_id="x", f_min=np.array([2.0, 2.0]), seeds=(0,))
        assert normalized_score([1.0, 2.0], calib) == pytest.approx(0.75)

    def test_equal_bests_give_one(self):
        calib = CalibrationTable(benchmark_id="x", f_min=np.array([3.0, 5.0]), seeds=(0,))
        assert normalized_score([3.0, 5.0], calib) == 1.0

    def test_zero_bests_give_zero(self):
        calib = CalibrationTable(benchmark_id="x", f_min=np.array([0.0, 0.0]), seeds=(0,))
        assert normalized_score([0.0, 0.0], calib) == 0.0

    def test_missing_entries_rejected(self):
        calib = CalibrationTable(benchmark_id="x", f_min=np.array([1.0]), seeds=(0,))
        with pytest.raises(ConfigurationError):
            normalized_score([1.0, 2.0], calib)
