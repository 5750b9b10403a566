"""Per-task GA engine with periodic knowledge transfer and exact budgets.

Every task runs a real-coded GA (binary tournament, simulated binary
crossover, polynomial mutation, elitist survivor selection).  Each task owns
two independent random streams derived from the run seed: the GA stream and
the transfer stream.  A run with the no-op transfer model consumes exactly
the same GA-stream draws and evaluations as a solo run, so the two are
bitwise identical; that is what makes the normalized score of the no-op
model exactly 1.0 rather than statistically close to it.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .benchmarks import BenchmarkInstance, TaskDefinition
from .errors import BenchmarkFormatError, ConfigurationError, FormatVersionError
from .rng import derive_rng, derive_seed

CALIBRATION_FORMAT_VERSION = 1
FMIN_EPSILON = 1e-12

# Deterministic time model coefficients (seconds per work unit).  Arbitrary
# scale; only reproducibility and ordering matter in test mode.
_T_PER_EVAL_DIM = 1e-7
_T_PER_TRANSFER_UNIT = 1e-6


@dataclass(frozen=True)
class Individual:
    """One candidate solution of a task (minimization)."""

    genotype: np.ndarray
    fitness: float


@dataclass(frozen=True)
class GaParams:
    """Operator constants of the base optimizer."""

    crossover_prob: float = 0.9
    sbx_eta: float = 15.0
    mutation_eta: float = 20.0


DEFAULT_GA_PARAMS = GaParams()


@dataclass(frozen=True)
class EmtoConfig:
    """Run shape: population, generations, and transfer cadence.

    The evaluation budget per task is pop_size * generations exactly; the
    initial population evaluation counts as generation 1.
    """

    pop_size: int
    generations: int
    transfer_interval: int = 10
    nt: int = 10
    time_model: str = "wall"  # "wall" or "deterministic"

    def __post_init__(self):
        if self.pop_size < 2:
            raise ConfigurationError("pop_size must be >= 2")
        if self.generations < 1:
            raise ConfigurationError("generations must be >= 1")
        if self.transfer_interval < 1:
            raise ConfigurationError("transfer_interval must be >= 1")
        if not 1 <= self.nt <= self.pop_size:
            raise ConfigurationError("nt must satisfy 1 <= nt <= pop_size")
        if self.time_model not in ("wall", "deterministic"):
            raise ConfigurationError("time_model must be 'wall' or 'deterministic'")

    @property
    def budget_per_task(self) -> int:
        return self.pop_size * self.generations


@dataclass
class TaskView:
    """Read-only view of one task's state handed to transfer models."""

    population: np.ndarray  # (pop_size, dim)
    fitness: np.ndarray  # (pop_size,)
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class TransferSnapshot:
    """All task states at a transfer event, plus the event's random streams."""

    tasks: list[TaskView]
    nt: int
    rngs: list[np.random.Generator]
    seed: int

    @property
    def numt(self) -> int:
        return len(self.tasks)


@dataclass
class TransferResult:
    """Per-task proposed solutions in each task's native space."""

    solutions: list[np.ndarray]  # one (k, dim) array per task
    work_units: float | None = None


class TransferModel(Protocol):
    name: str

    def propose(self, snapshot: TransferSnapshot) -> TransferResult: ...


@dataclass
class EmtoRunResult:
    """Outcome of one multi-task run."""

    benchmark_id: str
    transfer_name: str
    seed: int
    trajectories: np.ndarray  # (numt, generations), best-so-far per generation
    final_bests: np.ndarray  # (numt,)
    best_individuals: list[Individual]  # per-task best solution found
    eval_counts: np.ndarray  # (numt,) ints
    s: float
    t: float
    t_wall: float
    transfer_event_count: int
    clip_count: int

    def to_json_dict(self) -> dict:
        return {
            "benchmark_id": self.benchmark_id,
            "transfer_name": self.transfer_name,
            "seed": self.seed,
            "s": self.s,
            "t": self.t,
            "t_wall": self.t_wall,
            "final_bests": self.final_bests.tolist(),
            "best_solutions": [ind.genotype.tolist() for ind in self.best_individuals],
            "eval_counts": self.eval_counts.tolist(),
            "transfer_event_count": self.transfer_event_count,
            "clip_count": self.clip_count,
            "trajectories": [row.tolist() for row in self.trajectories],
        }


@dataclass
class SoloRunResult:
    """Per-task outcome of running the base optimizer with no transfer."""

    trajectories: np.ndarray
    final_bests: np.ndarray
    best_individuals: list[Individual]
    eval_counts: np.ndarray


@dataclass(frozen=True)
class CalibrationTable:
    """Mean solo-optimizer best fitness per task, floored for division safety."""

    benchmark_id: str
    f_min: np.ndarray
    seeds: tuple[int, ...]
    epsilon: float = FMIN_EPSILON

    def __post_init__(self):
        f = np.asarray(self.f_min, dtype=float)
        if not np.all(np.isfinite(f)):
            raise ConfigurationError("calibration entries must be finite")
        f = np.maximum(f, self.epsilon)
        f.setflags(write=False)
        object.__setattr__(self, "f_min", f)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def run_count(self) -> int:
        return len(self.seeds)


def _tournament(fitness: np.ndarray, rng: np.random.Generator) -> int:
    a, b = rng.integers(0, fitness.size, size=2)
    return int(a) if fitness[a] <= fitness[b] else int(b)


def sbx_pair(p1, p2, eta, rng):
    """Simulated binary crossover; identical parents yield identical children.

    Written in mean +- spread form so the identical-parent case is exact in
    floating point, not just algebraically.
    """
    u = rng.random(p1.size)
    beta = np.where(
        u <= 0.5,
        (2.0 * u) ** (1.0 / (eta + 1.0)),
        (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0)),
    )
    mean = 0.5 * (p1 + p2)
    spread = 0.5 * beta * (p2 - p1)
    return mean - spread, mean + spread


def _polynomial_mutation(x, lower, upper, eta, rng):
    dim = x.size
    apply_gene = rng.random(dim) < (1.0 / dim)
    u = rng.random(dim)
    delta = np.where(
        u < 0.5,
        (2.0 * u) ** (1.0 / (eta + 1.0)) - 1.0,
        1.0 - (2.0 * (1.0 - u)) ** (1.0 / (eta + 1.0)),
    )
    return np.where(apply_gene, x + delta * (upper - lower), x)


def generate_offspring(
    genotypes: np.ndarray,
    fitness: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    rng: np.random.Generator,
    params: GaParams = DEFAULT_GA_PARAMS,
) -> np.ndarray:
    """pop_size new genotypes via tournament + SBX + mutation, clipped to the box."""
    pop_size = genotypes.shape[0]
    children = []
    for _ in range((pop_size + 1) // 2):
        i1 = _tournament(fitness, rng)
        i2 = _tournament(fitness, rng)
        p1, p2 = genotypes[i1], genotypes[i2]
        if rng.random() < params.crossover_prob:
            c1, c2 = sbx_pair(p1, p2, params.sbx_eta, rng)
        else:
            c1, c2 = p1.copy(), p2.copy()
        c1 = _polynomial_mutation(c1, lower, upper, params.mutation_eta, rng)
        c2 = _polynomial_mutation(c2, lower, upper, params.mutation_eta, rng)
        children.append(c1)
        children.append(c2)
    offspring = np.array(children[:pop_size])
    return np.clip(offspring, lower, upper)


def _select_survivors(pg, pf, og, of, mu):
    # Parents listed first so that stable sorting prefers them on fitness ties.
    pool_g = np.vstack([pg, og])
    pool_f = np.concatenate([pf, of])
    order = np.argsort(pool_f, kind="stable")[:mu]
    return pool_g[order].copy(), pool_f[order].copy()


def ga_generation(
    genotypes: np.ndarray,
    fitness: np.ndarray,
    task: TaskDefinition,
    rng: np.random.Generator,
    params: GaParams = DEFAULT_GA_PARAMS,
) -> tuple[np.ndarray, np.ndarray]:
    """One elitist GA generation; consumes exactly pop_size evaluations."""
    offspring = generate_offspring(genotypes, fitness, task.lower, task.upper, rng, params)
    off_fitness = task.evaluate_many(offspring)
    return _select_survivors(genotypes, fitness, offspring, off_fitness, genotypes.shape[0])


def _dedupe_against(solutions: np.ndarray, population: np.ndarray) -> np.ndarray:
    """Drop rows that bitwise-duplicate a population row or an earlier kept row.

    Re-injecting solutions the population already contains must be a true
    no-op, otherwise duplicate copies of elite members displace tail
    survivors under (mu+lambda) selection and the paired-stream equivalence
    with the solo optimizer breaks.
    """
    kept: list[np.ndarray] = []
    for row in solutions:
        if np.any(np.all(population == row, axis=1)):
            continue
        if any(np.array_equal(row, k) for k in kept):
            continue
        kept.append(row)
    return np.array(kept) if kept else np.empty((0, population.shape[1]))


@dataclass
class _TaskState:
    task: TaskDefinition
    genotypes: np.ndarray
    fitness: np.ndarray
    rng: np.random.Generator
    evals: int = 0


def _core_run(
    benchmark: BenchmarkInstance,
    config: EmtoConfig,
    transfer: TransferModel | None,
    seed: int,
    params: GaParams,
):
    numt = benchmark.numt
    states = []
    for i, task in enumerate(benchmark.tasks):
        rng = derive_rng(seed, "ga", i)
        genotypes = rng.uniform(task.lower, task.upper, size=(config.pop_size, task.dim))
        fitness = task.evaluate_many(genotypes)
        states.append(_TaskState(task, genotypes, fitness, rng, evals=config.pop_size))

    trajectories = np.empty((numt, config.generations))
    trajectories[:, 0] = [st.fitness.min() for st in states]

    transfer_events = 0
    transfer_work = 0.0
    clip_count = 0

    for gen in range(2, config.generations + 1):
        injected: list[np.ndarray | None] = [None] * numt
        if transfer is not None and gen % config.transfer_interval == 0:
            event_index = transfer_events
            snapshot = TransferSnapshot(
                tasks=[
                    TaskView(
                        population=st.genotypes.copy(),
                        fitness=st.fitness.copy(),
                        lower=st.task.lower,
                        upper=st.task.upper,
                    )
                    for st in states
                ],
                nt=config.nt,
                rngs=[derive_rng(seed, "transfer", event_index, i) for i in range(numt)],
                seed=derive_seed(seed, "transfer-event", event_index),
            )
            result = transfer.propose(snapshot)
            transfer_events += 1
            if len(result.solutions) != numt:
                raise ConfigurationError(
                    f"transfer model returned {len(result.solutions)} task groups, expected {numt}"
                )
            for i, st in enumerate(states):
                sols = np.asarray(result.solutions[i], dtype=float)
                if sols.size == 0:
                    continue
                sols = sols.reshape(-1, st.task.dim)[: config.nt]
                clipped = np.clip(sols, st.task.lower, st.task.upper)
                clip_count += int(np.sum(np.any(clipped != sols, axis=1)))
                injected[i] = _dedupe_against(clipped, st.genotypes)
            if result.work_units is not None:
                transfer_work += float(result.work_units)
            else:
                transfer_work += float(sum(np.asarray(s).size for s in result.solutions))

        for i, st in enumerate(states):
            offspring = generate_offspring(
                st.genotypes, st.fitness, st.task.lower, st.task.upper, st.rng, params
            )
            if injected[i] is not None and len(injected[i]) > 0:
                k = len(injected[i])
                offspring[config.pop_size - k :] = injected[i]
            off_fitness = st.task.evaluate_many(offspring)
            st.evals += config.pop_size
            st.genotypes, st.fitness = _select_survivors(
                st.genotypes, st.fitness, offspring, off_fitness, config.pop_size
            )
            trajectories[i, gen - 1] = st.fitness.min()

    final_bests = trajectories[:, -1].copy()
    # Elitism keeps the best-ever member in the final population.
    best_individuals = []
    for st in states:
        idx = int(np.argmin(st.fitness))
        best_individuals.append(Individual(st.genotypes[idx].copy(), float(st.fitness[idx])))
    eval_counts = np.array([st.evals for st in states])
    total_eval_dim = float(eval_counts.sum() * benchmark.dim)
    return (trajectories, final_bests, best_individuals, eval_counts, transfer_events,
            transfer_work, clip_count, total_eval_dim)


def run_solo(
    benchmark: BenchmarkInstance,
    config: EmtoConfig,
    seed: int,
    params: GaParams = DEFAULT_GA_PARAMS,
) -> SoloRunResult:
    """Run the base optimizer on every task independently, no transfer."""
    trajectories, final_bests, best_individuals, eval_counts, *_ = _core_run(
        benchmark, config, None, seed, params
    )
    return SoloRunResult(trajectories, final_bests, best_individuals, eval_counts)


def calibrate_fmin(
    benchmark: BenchmarkInstance,
    config: EmtoConfig,
    seeds: Sequence[int],
    params: GaParams = DEFAULT_GA_PARAMS,
) -> CalibrationTable:
    """Per-task mean of solo final bests over the given seeds."""
    if len(seeds) < 1:
        raise ConfigurationError("calibration needs at least one seed")
    bests = np.stack([run_solo(benchmark, config, s, params).final_bests for s in seeds])
    return CalibrationTable(
        benchmark_id=benchmark.id, f_min=bests.mean(axis=0), seeds=tuple(seeds)
    )


def normalized_score(final_bests: Sequence[float], calibration: CalibrationTable) -> float:
    """Mean over tasks of best / f_min; lower is better."""
    bests = np.asarray(final_bests, dtype=float)
    if bests.shape != calibration.f_min.shape:
        raise ConfigurationError(
            f"calibration covers {calibration.f_min.shape[0]} tasks, run has {bests.shape[0]}"
        )
    return float(np.mean(bests / calibration.f_min))


def run_emto(
    benchmark: BenchmarkInstance,
    config: EmtoConfig,
    transfer: TransferModel,
    calibration: CalibrationTable,
    seed: int,
    params: GaParams = DEFAULT_GA_PARAMS,
) -> EmtoRunResult:
    """Full multi-task run with periodic transfer; scores (s, t).

    Raises TransferFailedError (from the transfer model) if a sandboxed
    snippet fails; the caller maps that to penalty objectives.
    """
    if calibration.f_min.shape[0] != benchmark.numt:
        raise ConfigurationError("calibration table does not cover this benchmark")
    wall_start = time.perf_counter()
    (trajectories, final_bests, best_individuals, eval_counts, events, transfer_work,
     clip_count, total_eval_dim) = _core_run(benchmark, config, transfer, seed, params)
    t_wall = time.perf_counter() - wall_start
    if config.time_model == "deterministic":
        t = _T_PER_EVAL_DIM * total_eval_dim + _T_PER_TRANSFER_UNIT * transfer_work
    else:
        t = t_wall
    return EmtoRunResult(
        benchmark_id=benchmark.id,
        transfer_name=getattr(transfer, "name", "unknown"),
        seed=seed,
        trajectories=trajectories,
        final_bests=final_bests,
        best_individuals=best_individuals,
        eval_counts=eval_counts,
        s=normalized_score(final_bests, calibration),
        t=t,
        t_wall=t_wall,
        transfer_event_count=events,
        clip_count=clip_count,
    )


def save_calibration(table: CalibrationTable, path: str | Path) -> None:
    doc = {
        "kind": "ktm-calibration",
        "format_version": CALIBRATION_FORMAT_VERSION,
        "benchmark_id": table.benchmark_id,
        "seeds": list(table.seeds),
        "epsilon": table.epsilon,
        "f_min": table.f_min.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_calibration(path: str | Path) -> CalibrationTable:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BenchmarkFormatError(f"{path}: {exc.msg}", byte_offset=exc.pos) from exc
    if not isinstance(doc, dict) or doc.get("kind") != "ktm-calibration":
        raise BenchmarkFormatError(f"{path}: not a calibration file")
    if doc.get("format_version") != CALIBRATION_FORMAT_VERSION:
        raise FormatVersionError(f"{path}: unsupported calibration format version")
    return CalibrationTable(
        benchmark_id=doc["benchmark_id"],
        f_min=np.array(doc["f_min"], dtype=float),
        seeds=tuple(doc["seeds"]),
        epsilon=doc.get("epsilon", FMIN_EPSILON),
    )
