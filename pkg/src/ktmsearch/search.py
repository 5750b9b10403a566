"""Multi-objective evolutionary search over candidate transfer models.

One search run maintains a population of N candidate models scored on
(normalized fitness s, running time t), both minimized.  Each generation
performs N iterations: draw a dynamic parent count, roulette-select parents
by front rank, prompt for a new model, occasionally mutate it, evaluate,
insert, and remove the worst member.  Every event is appended to a JSONL
log and a checkpoint is written per generation so interrupted runs resume
exactly.
"""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .benchmarks import BenchmarkInstance
from .engine import CalibrationTable, EmtoConfig, GaParams, DEFAULT_GA_PARAMS, run_emto
from .errors import ConfigurationError, TransferFailedError, TransportError
from .gateway import (
    extract_ktm,
    render_generation_prompt,
    render_init_prompt,
    render_mutation_prompt,
)
from .rng import derive_rng
from .sandbox import (
    SandboxConfig,
    SnippetSpec,
    SnippetTransferModel,
    penalty_objectives,
    static_screen,
)

CHECKPOINT_FORMAT_VERSION = 1

# Event payload key holding volatile (wall-clock) data; stripped when
# comparing logs for determinism.
VOLATILE_KEY = "wall"


@dataclass
class CandidateKtm:
    """A transfer-model candidate with objectives and lineage."""

    uid: str  # unique per insertion
    snippet: SnippetSpec
    s: float
    t: float
    verdict: str  # "ok" or the failure kind that earned penalty objectives
    birth_gen: int
    birth_order: int
    operator: str  # init | generation | mutation
    parents: tuple[str, ...] = ()
    front_rank: int = 0
    crowding: float = 0.0

    @property
    def content_id(self) -> str:
        return self.snippet.id

    @property
    def is_penalized(self) -> bool:
        return not (math.isfinite(self.s) and math.isfinite(self.t))


@dataclass(frozen=True)
class SearchConfig:
    """Shape of one search campaign."""

    n_ktm: int = 10
    g_ktm: int = 10
    master_seed: int = 0
    init_attempt_cap: int = 50
    extract_retries: int = 3
    dominance: str = "strict"  # strict (both objectives) or weak, for ablation

    def __post_init__(self):
        if self.n_ktm < 4:
            raise ConfigurationError("n_ktm must be >= 4 so the parent-count range is nonempty")
        if self.g_ktm < 1:
            raise ConfigurationError("g_ktm must be >= 1")
        if self.dominance not in ("strict", "weak"):
            raise ConfigurationError("dominance must be 'strict' or 'weak'")

    @property
    def mutation_probability(self) -> float:
        return 1.0 / self.n_ktm


def dominates(a, b, mode: str = "strict") -> bool:
    """True iff a beats b: strictly better in both objectives (default mode).

    The weak mode (better-or-equal in both, strictly better in one) is kept
    for ablation only.
    """
    if mode == "strict":
        return a.s < b.s and a.t < b.t
    return (a.s <= b.s and a.t <= b.t) and (a.s < b.s or a.t < b.t)


def fast_nondominated_sort(population, mode: str = "strict"):
    """Partition into fronts; assigns 1-based front_rank on candidates."""
    n = len(population)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    domination_count = [0] * n
    fronts: list[list[int]] = [[]]
    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            if dominates(population[p], population[q], mode):
                dominated_by[p].append(q)
            elif dominates(population[q], population[p], mode):
                domination_count[p] += 1
        if domination_count[p] == 0:
            fronts[0].append(p)
    i = 0
    while fronts[i]:
        nxt = []
        for p in fronts[i]:
            for q in dominated_by[p]:
                domination_count[q] -= 1
                if domination_count[q] == 0:
                    nxt.append(q)
        i += 1
        fronts.append(nxt)
    fronts.pop()
    result = []
    for rank, front in enumerate(fronts, start=1):
        members = [population[i] for i in front]
        for member in members:
            member.front_rank = rank
        result.append(members)
    return result


def crowding_distance(front) -> list[float]:
    """Normalized cuboid distances; boundary members get +inf.

    Assigns .crowding on the members and returns the values in front order.
    """
    n = len(front)
    dist = [0.0] * n
    if n <= 2:
        dist = [math.inf] * n
    else:
        for key in (lambda c: c.s, lambda c: c.t):
            order = sorted(range(n), key=lambda i: key(front[i]))
            values = [key(front[i]) for i in order]
            dist[order[0]] = math.inf
            dist[order[-1]] = math.inf
            span = values[-1] - values[0]
            if not math.isfinite(span) or span <= 0:
                continue
            for j in range(1, n - 1):
                if math.isfinite(dist[order[j]]):
                    dist[order[j]] += (values[j + 1] - values[j - 1]) / span
    for member, d in zip(front, dist):
        member.crowding = d
    return dist


def dynamic_parent_count(rng: np.random.Generator, n_ktm: int) -> int:
    """Uniform draw from {2, ..., n_ktm // 2}."""
    if n_ktm < 4:
        raise ConfigurationError("n_ktm must be >= 4")
    return int(rng.integers(2, n_ktm // 2 + 1))


def mutation_fires(rng: np.random.Generator, n_ktm: int) -> bool:
    """Bernoulli coin for post-generation mutation, rate 1/n_ktm."""
    return bool(rng.random() < 1.0 / n_ktm)


def roulette_select(population, k: int, rng: np.random.Generator, mode: str = "strict"):
    """k distinct candidates, probability proportional to front-rank weight.

    Weights are R_max - rank + 1 over the current fronts; penalized
    candidates never get selected.  k is reduced (with a warning) if fewer
    valid candidates exist.
    """
    fast_nondominated_sort(population, mode)
    valid = [c for c in population if not c.is_penalized]
    if not valid:
        raise ConfigurationError("no valid candidates available for selection")
    if k > len(valid):
        warnings.warn(f"reducing parent count from {k} to {len(valid)} valid candidates")
        k = len(valid)
    r_max = max(c.front_rank for c in population)
    pool = list(valid)
    weights = np.array([r_max - c.front_rank + 1 for c in pool], dtype=float)
    chosen = []
    for _ in range(k):
        probs = weights / weights.sum()
        idx = int(rng.choice(len(pool), p=probs))
        chosen.append(pool.pop(idx))
        weights = np.delete(weights, idx)
    return chosen


def remove_worst(population, mode: str = "strict"):
    """Drop the min-crowding member of the last front; returns (kept, removed).

    Ties break to the oldest birth_gen, then smallest uid, which preserves
    the per-objective extremes and makes removal fully deterministic.
    """
    fronts = fast_nondominated_sort(population, mode)
    for front in fronts:
        crowding_distance(front)
    last = fronts[-1]
    removed = min(last, key=lambda c: (c.crowding, c.birth_gen, c.uid))
    kept = [c for c in population if c is not removed]
    return kept, removed


class CandidateEvaluator(Protocol):
    def evaluate(self, snippet: SnippetSpec) -> tuple[float, float, str]: ...


class EmtoCandidateEvaluator:
    """Scores a snippet by running the full multi-task campaign in the sandbox."""

    def __init__(
        self,
        benchmark: BenchmarkInstance,
        emto_config: EmtoConfig,
        calibration: CalibrationTable,
        sandbox_cfg: SandboxConfig,
        eval_seed: int,
        ga_params: GaParams = DEFAULT_GA_PARAMS,
    ):
        self.benchmark = benchmark
        self.emto_config = emto_config
        self.calibration = calibration
        self.sandbox_cfg = sandbox_cfg
        self.eval_seed = eval_seed
        self.ga_params = ga_params

    def evaluate(self, snippet: SnippetSpec) -> tuple[float, float, str]:
        model = SnippetTransferModel(snippet, self.sandbox_cfg)
        try:
            result = run_emto(
                self.benchmark,
                self.emto_config,
                model,
                self.calibration,
                self.eval_seed,
                self.ga_params,
            )
        except TransferFailedError as exc:
            kind = exc.verdict.kind if exc.verdict is not None else "transfer-failure"
            s, t = penalty_objectives()
            return s, t, kind
        return result.s, result.t, "ok"


class SyntheticEvaluator:
    """Reads objectives from a '# synthetic-objectives: s=... t=...' marker.

    Lets search-dynamics tests run the full loop without any campaign.
    """

    def __init__(self, default: tuple[float, float] = (1.0, 1.0)):
        self.default = default

    def evaluate(self, snippet: SnippetSpec) -> tuple[float, float, str]:
        import re

        m = re.search(
            r"#\s*synthetic-objectives:\s*s=([-\d.eE+]+)\s+t=([-\d.eE+]+)", snippet.source
        )
        if not m:
            return self.default[0], self.default[1], "ok"
        return float(m.group(1)), float(m.group(2)), "ok"


class EventLog:
    """Append-only JSONL event stream with a monotonic sequence number."""

    def __init__(self, path: str | Path, start_seq: int = 0, append: bool = False):
        self.path = Path(path)
        self.seq = start_seq
        self._fh = open(self.path, "a" if append else "w")

    def emit(self, event_type: str, gen: int, **data) -> None:
        record = {
            "seq": self.seq,
            "gen": gen,
            "type": event_type,
            "data": data,
            VOLATILE_KEY: {"unix_time": time.time()},
        }
        self._fh.write(json.dumps(record) + "\n")
        self._fh.flush()
        self.seq += 1

    def close(self) -> None:
        self._fh.close()


@dataclass
class SearchState:
    """Everything needed to continue or report a search run."""

    config: SearchConfig
    population: list[CandidateKtm]
    archive: list[CandidateKtm]
    generation: int
    insert_counter: int
    eval_cache: dict[str, tuple]
    rng: np.random.Generator | None = None
    backend_state: dict = field(default_factory=dict)
    seq: int = 0

    def front1(self) -> list[CandidateKtm]:
        fronts = fast_nondominated_sort(list(self.population), self.config.dominance)
        return fronts[0] if fronts else []

    def headline(self) -> CandidateKtm | None:
        """The reported best model: minimum-s member of the final front."""
        front = [c for c in self.front1() if not c.is_penalized]
        if not front:
            return None
        return min(front, key=lambda c: (c.s, c.t, c.uid))


def _update_archive(archive: list[CandidateKtm], candidate: CandidateKtm, mode: str):
    if candidate.is_penalized:
        return
    if any(c.content_id == candidate.content_id for c in archive):
        return
    if any(dominates(c, candidate, mode) for c in archive):
        return
    archive[:] = [c for c in archive if not dominates(candidate, c, mode)]
    archive.append(candidate)


def _candidate_to_json(c: CandidateKtm) -> dict:
    return {
        "uid": c.uid,
        "content_id": c.content_id,
        "source": c.snippet.source,
        "annotation": c.snippet.annotation,
        "s": c.s,
        "t": c.t,
        "verdict": c.verdict,
        "birth_gen": c.birth_gen,
        "birth_order": c.birth_order,
        "operator": c.operator,
        "parents": list(c.parents),
    }


def _candidate_from_json(doc: dict) -> CandidateKtm:
    return CandidateKtm(
        uid=doc["uid"],
        snippet=SnippetSpec.from_source(doc["source"]),
        s=doc["s"],
        t=doc["t"],
        verdict=doc["verdict"],
        birth_gen=doc["birth_gen"],
        birth_order=doc["birth_order"],
        operator=doc["operator"],
        parents=tuple(doc["parents"]),
    )


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    def convert(obj):
        if isinstance(obj, dict):
            return {k: convert(v) for k, v in obj.items()}
        if isinstance(obj, np.ndarray):
            return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
        if isinstance(obj, np.integer):
            return int(obj)
        return obj

    return convert(rng.bit_generator.state)


def _rng_state_from_json(doc: dict) -> np.random.Generator:
    def convert(obj):
        if isinstance(obj, dict):
            if "__ndarray__" in obj:
                return np.array(obj["__ndarray__"], dtype=obj["dtype"])
            return {k: convert(v) for k, v in obj.items()}
        return obj

    state = convert(doc)
    rng = np.random.Generator(np.random.Philox())
    rng.bit_generator.state = state
    return rng


def save_checkpoint(state: SearchState, path: str | Path) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": {
            "n_ktm": state.config.n_ktm,
            "g_ktm": state.config.g_ktm,
            "master_seed": state.config.master_seed,
            "init_attempt_cap": state.config.init_attempt_cap,
            "extract_retries": state.config.extract_retries,
            "dominance": state.config.dominance,
        },
        "generation": state.generation,
        "insert_counter": state.insert_counter,
        "seq": state.seq,
        "rng_state": _rng_state_to_json(state.rng),
        "backend_state": state.backend_state,
        "population": [_candidate_to_json(c) for c in state.population],
        "archive": [_candidate_to_json(c) for c in state.archive],
        "eval_cache": {k: list(v) for k, v in state.eval_cache.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> SearchState:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint format version")
    config = SearchConfig(**doc["config"])
    return SearchState(
        config=config,
        population=[_candidate_from_json(c) for c in doc["population"]],
        archive=[_candidate_from_json(c) for c in doc["archive"]],
        generation=doc["generation"],
        insert_counter=doc["insert_counter"],
        eval_cache={k: tuple(v) for k, v in doc["eval_cache"].items()},
        rng=_rng_state_from_json(doc["rng_state"]),
        backend_state=doc.get("backend_state", {}),
        seq=doc["seq"],
    )


class _SearchDriver:
    def __init__(self, config, backend, evaluator, out_dir: Path, log: EventLog, state: SearchState):
        self.config = config
        self.backend = backend
        self.evaluator = evaluator
        self.out_dir = out_dir
        self.log = log
        self.state = state

    def _request_snippet(self, purpose: str, gen: int, parents=(), base=None) -> SnippetSpec | None:
        """One prompted snippet, retrying completions on extraction/screen failure."""
        for attempt in range(self.config.extract_retries + 1):
            if purpose == "init":
                bundle = render_init_prompt()
            elif purpose == "generation":
                bundle = render_generation_prompt([(c.snippet, c.s, c.t) for c in parents])
            else:
                bundle = render_mutation_prompt(base)
            try:
                text = self.backend.complete(bundle)
            except (TransportError, ConfigurationError) as exc:
                self.log.emit("completion_failed", gen, purpose=purpose, attempt=attempt, error=str(exc))
                return None
            self.log.emit(
                "completion", gen, purpose=purpose, attempt=attempt, chars=len(text),
                backend=getattr(self.backend, "name", "unknown"),
            )
            extraction = extract_ktm(text)
            self.log.emit(
                "extraction", gen, purpose=purpose, attempt=attempt,
                kind=extraction.kind, detail=extraction.detail,
            )
            if not extraction.is_parsed:
                continue
            screen = static_screen(extraction.snippet.source)
            self.log.emit(
                "screen", gen, content_id=extraction.snippet.id,
                passed=screen.passed, reason=screen.reason,
            )
            if not screen.passed:
                continue
            return extraction.snippet
        return None

    def _evaluate(self, snippet: SnippetSpec, gen: int, operator: str, parents) -> CandidateKtm:
        cached = snippet.id in self.state.eval_cache
        if cached:
            s, t, verdict = self.state.eval_cache[snippet.id]
        else:
            s, t, verdict = self.evaluator.evaluate(snippet)
            self.state.eval_cache[snippet.id] = (s, t, verdict)
        self.state.insert_counter += 1
        uid = f"k{self.state.insert_counter:04d}"
        self.log.emit(
            "objectives", gen, uid=uid, content_id=snippet.id,
            s=s, t=t, verdict=verdict, cached=cached,
        )
        return CandidateKtm(
            uid=uid,
            snippet=snippet,
            s=s,
            t=t,
            verdict=verdict,
            birth_gen=gen,
            birth_order=self.state.insert_counter,
            operator=operator,
            parents=tuple(p.uid for p in parents),
        )

    def _insert(self, candidate: CandidateKtm, gen: int) -> None:
        self.log.emit(
            "insert", gen, uid=candidate.uid, content_id=candidate.content_id,
            s=candidate.s, t=candidate.t, verdict=candidate.verdict,
            operator=candidate.operator, parents=list(candidate.parents),
            annotation=candidate.snippet.annotation,
        )
        self.state.population.append(candidate)
        _update_archive(self.state.archive, candidate, self.config.dominance)

    def _generation_end(self, gen: int) -> None:
        fronts = fast_nondominated_sort(self.state.population, self.config.dominance)
        for front in fronts:
            crowding_distance(front)
        valid = [c for c in self.state.population if not c.is_penalized]
        self.log.emit(
            "generation_end", gen,
            population=[
                {"uid": c.uid, "content_id": c.content_id, "s": c.s, "t": c.t,
                 "front_rank": c.front_rank}
                for c in self.state.population
            ],
            min_s=min((c.s for c in valid), default=None),
            min_t=min((c.t for c in valid), default=None),
            penalized=len(self.state.population) - len(valid),
        )

    def _checkpoint(self, gen: int) -> None:
        self.state.generation = gen
        # The checkpoint event emitted below is part of recorded history, so
        # a resumed log continues with a strictly increasing sequence.
        self.state.seq = self.log.seq + 1
        self.state.backend_state = self.backend.state() if hasattr(self.backend, "state") else {}
        path = self.out_dir / "checkpoint.json"
        save_checkpoint(self.state, path)
        # Keep a per-generation history alongside the latest; resume reads
        # checkpoint.json, the history allows forking from any boundary.
        history = self.out_dir / f"checkpoint-gen{gen:03d}.json"
        history.write_text(path.read_text())
        self.log.emit("checkpoint", gen, path=path.name, history=history.name)

    def initialize(self) -> None:
        cfg = self.config
        attempts = 0
        while len(self.state.population) < cfg.n_ktm and attempts < cfg.init_attempt_cap:
            attempts += 1
            self.log.emit("init_attempt", 0, attempt=attempts)
            snippet = self._request_snippet("init", 0)
            if snippet is None:
                continue
            candidate = self._evaluate(snippet, 0, "init", ())
            self._insert(candidate, 0)
        if len(self.state.population) < cfg.n_ktm:
            raise ConfigurationError(
                f"initialization produced {len(self.state.population)} of {cfg.n_ktm} "
                f"candidates within {cfg.init_attempt_cap} attempts"
            )
        self._generation_end(0)
        self._checkpoint(0)

    def run_generations(self, stop_after_generation: int | None = None) -> None:
        cfg = self.config
        rng = self.state.rng
        for gen in range(self.state.generation + 1, cfg.g_ktm + 1):
            for _ in range(cfg.n_ktm):
                assert len(self.state.population) == cfg.n_ktm
                valid = [c for c in self.state.population if not c.is_penalized]
                if not valid:
                    # Whole population penalized: fall back to fresh
                    # initializations until a valid candidate appears.
                    snippet = self._request_snippet("init", gen)
                    operator, parents = "init", ()
                else:
                    n_s = dynamic_parent_count(rng, cfg.n_ktm)
                    parents = roulette_select(self.state.population, n_s, rng, cfg.dominance)
                    self.log.emit(
                        "selection", gen, n_s=n_s, parents=[p.uid for p in parents]
                    )
                    snippet = self._request_snippet("generation", gen, parents=parents)
                    operator = "generation"
                # Mutation follows generation only; a fallback-initialized
                # candidate has no parent lineage for a mutation to extend.
                if snippet is not None and operator == "generation" and mutation_fires(rng, cfg.n_ktm):
                    mutated = self._request_snippet("mutation", gen, base=snippet)
                    if mutated is not None:
                        self.log.emit(
                            "mutation", gen, pre_content_id=snippet.id,
                            post_content_id=mutated.id,
                        )
                        snippet = mutated
                        operator = "mutation"
                if snippet is None:
                    self.log.emit("iteration_skipped", gen, reason="no candidate obtained")
                    continue
                candidate = self._evaluate(snippet, gen, operator, parents)
                self._insert(candidate, gen)
                kept, removed = remove_worst(self.state.population, cfg.dominance)
                self.state.population = kept
                self.log.emit(
                    "removal", gen, uid=removed.uid, content_id=removed.content_id,
                    s=removed.s, t=removed.t,
                )
            self._generation_end(gen)
            self._checkpoint(gen)
            if stop_after_generation is not None and gen >= stop_after_generation:
                return


def run_search(
    config: SearchConfig,
    backend,
    evaluator: CandidateEvaluator,
    out_dir: str | Path,
    stop_after_generation: int | None = None,
) -> SearchState:
    """Execute a fresh search campaign into out_dir; returns the final state."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = SearchState(
        config=config,
        population=[],
        archive=[],
        generation=0,
        insert_counter=0,
        eval_cache={},
        rng=derive_rng(config.master_seed, "ktm-search"),
    )
    log = EventLog(out_dir / "events.jsonl")
    try:
        log.emit(
            "run_start", 0,
            n_ktm=config.n_ktm, g_ktm=config.g_ktm, master_seed=config.master_seed,
            dominance=config.dominance, backend=getattr(backend, "name", "unknown"),
        )
        driver = _SearchDriver(config, backend, evaluator, out_dir, log, state)
        driver.initialize()
        driver.run_generations(stop_after_generation)
        _finalize(driver, log)
    finally:
        log.close()
    return state


def resume_search(
    out_dir: str | Path,
    backend,
    evaluator: CandidateEvaluator,
    stop_after_generation: int | None = None,
) -> SearchState:
    """Continue an interrupted run from its checkpoint, appending to its log.

    Events recorded after the last checkpoint (a partial generation cut off
    by a kill) are discarded first, so the log stays monotone and the
    replayed generation is recorded exactly once.
    """
    out_dir = Path(out_dir)
    state = load_checkpoint(out_dir / "checkpoint.json")
    if hasattr(backend, "restore"):
        backend.restore(state.backend_state)
    _truncate_log_to_seq(out_dir / "events.jsonl", state.seq)
    log = EventLog(out_dir / "events.jsonl", start_seq=state.seq, append=True)
    try:
        log.emit("resume", state.generation, from_generation=state.generation)
        driver = _SearchDriver(state.config, backend, evaluator, out_dir, log, state)
        driver.run_generations(stop_after_generation)
        _finalize(driver, log)
    finally:
        log.close()
    return state


def _truncate_log_to_seq(path: Path, seq: int) -> None:
    if not path.exists():
        return
    kept = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            if json.loads(line)["seq"] >= seq:
                break
            kept.append(line)
    path.write_text("".join(kept))


def _finalize(driver: _SearchDriver, log: EventLog) -> None:
    state = driver.state
    if state.generation < state.config.g_ktm:
        return  # interrupted on purpose; no final report yet
    front = state.front1()
    headline = state.headline()
    log.emit(
        "run_end", state.generation,
        front1=[{"uid": c.uid, "content_id": c.content_id, "s": c.s, "t": c.t} for c in front],
        headline=headline.uid if headline else None,
    )
