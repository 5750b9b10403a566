from __future__ import annotations

import numpy as np
import pytest

from ktmsearch.benchmarks import BaseFunction, BenchmarkInstance, TaskDefinition
from ktmsearch.engine import EmtoConfig, TaskView, TransferSnapshot
from ktmsearch.rng import derive_rng
from ktmsearch.sandbox import SandboxConfig
from ktmsearch.testing import replay_runner_cmd


def make_snapshot(numt=2, pop=8, dim=4, nt=3, seed=0, lower=-1.0, upper=1.0):
    rng = np.random.default_rng(seed)
    tasks = []
    for _ in range(numt):
        population = rng.uniform(lower, upper, size=(pop, dim))
        fitness = rng.random(pop)
        tasks.append(
            TaskView(population, fitness, np.full(dim, lower), np.full(dim, upper))
        )
    return TransferSnapshot(
        tasks=tasks,
        nt=nt,
        rngs=[derive_rng(seed, "transfer", 0, i) for i in range(numt)],
        seed=seed,
    )


def similar_sphere_benchmark(seed, numt=5, dim=10, spread_units=2.0, half=100.0):
    """Shifted Sphere tasks with nearly coincident optima (high similarity)."""
    rng = np.random.default_rng(seed)
    base = rng.uniform(-0.4 * half, 0.4 * half, size=dim)
    tasks = []
    for _ in range(numt):
        shift = -(base + spread_units * rng.standard_normal(dim))
        tasks.append(
            TaskDefinition(
                base_fn=BaseFunction.SPHERE,
                dim=dim,
                shift=shift,
                rotation=np.eye(dim),
                lower=np.full(dim, -half),
                upper=np.full(dim, half),
            )
        )
    return BenchmarkInstance(
        id=f"sim-sphere-{seed}", seed=seed, pset=(BaseFunction.SPHERE,), tasks=tuple(tasks)
    )


@pytest.fixture
def replay_sandbox():
    return SandboxConfig(
        runner_cmd=replay_runner_cmd(),
        timeout_ms=3000,
        grace_kill_ms=500,
        max_response_bytes=256 * 1024,
    )


@pytest.fixture
def micro_engine_config():
    return EmtoConfig(
        pop_size=16, generations=10, transfer_interval=5, nt=3, time_model="deterministic"
    )
