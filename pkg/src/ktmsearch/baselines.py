"""Hand-crafted comparison transfer models.

vcm: vertical crossover between tasks in a unified [0,1] representation.
smm: closed-form least-squares solution mapping between rank-aligned
     populations of the most similar task pair.
noop: re-injects each task's current best individuals (a strict no-op under
      the engine's duplicate-dropping injection), used for calibration.
"""
from __future__ import annotations

import warnings

import numpy as np

from .engine import TransferResult, TransferSnapshot, sbx_pair

VCM_SBX_ETA = 15.0
SMM_RIDGE = 1e-8


def _to_unified(population: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    return (population - lower) / (upper - lower)


def _from_unified(unified: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    # The outer clip guards the 1-ulp overshoot of lower + 1.0 * (upper - lower).
    return np.clip(lower + np.clip(unified, 0.0, 1.0) * (upper - lower), lower, upper)


def _rank_sorted(view) -> np.ndarray:
    order = np.argsort(view.fitness, kind="stable")
    return view.population[order]


def _empty_result(snapshot: TransferSnapshot) -> TransferResult:
    dim = snapshot.tasks[0].population.shape[1]
    return TransferResult([np.empty((0, dim)) for _ in snapshot.tasks])


class NoopTransfer:
    """Returns copies of the nt best current individuals of every task."""

    name = "noop"

    def propose(self, snapshot: TransferSnapshot) -> TransferResult:
        solutions = []
        for view in snapshot.tasks:
            order = np.argsort(view.fitness, kind="stable")[: snapshot.nt]
            solutions.append(view.population[order].copy())
        return TransferResult(solutions)


class VcmTransfer:
    """Vertical crossover: SBX between parents drawn from different tasks."""

    name = "vcm"

    def __init__(self, eta: float = VCM_SBX_ETA):
        self.eta = eta

    def propose(self, snapshot: TransferSnapshot) -> TransferResult:
        numt = snapshot.numt
        if numt < 2:
            warnings.warn("vcm needs at least two tasks; returning no transfer solutions")
            return _empty_result(snapshot)
        solutions = []
        for ti, target in enumerate(snapshot.tasks):
            rng = snapshot.rngs[ti]
            pop_t = target.population
            rows = []
            for _ in range(snapshot.nt):
                si = int(rng.integers(0, numt - 1))
                if si >= ti:
                    si += 1
                source = snapshot.tasks[si]
                # Tournament parent from the target task.
                a, b = rng.integers(0, pop_t.shape[0], size=2)
                tp = int(a) if target.fitness[a] <= target.fitness[b] else int(b)
                # Uniform parent from the top half of the source task.
                half = max(1, source.population.shape[0] // 2)
                top = np.argsort(source.fitness, kind="stable")[:half]
                sp = int(top[rng.integers(0, half)])
                u1 = _to_unified(pop_t[tp], target.lower, target.upper)
                u2 = _to_unified(source.population[sp], source.lower, source.upper)
                c1, c2 = sbx_pair(u1, u2, self.eta, rng)
                child = c1 if rng.random() < 0.5 else c2
                rows.append(_from_unified(child, target.lower, target.upper))
            solutions.append(np.array(rows))
        return TransferResult(solutions)


def fit_linear_map(source: np.ndarray, target: np.ndarray, ridge: float = SMM_RIDGE) -> np.ndarray:
    """Least-squares map M with M @ q ~ p for column-paired solutions.

    source/target are (n, dim) row-major populations; returns (dim, dim).
    Falls back to the identity map if the ridge system is still singular.
    """
    q = source.T  # (dim, n), solutions as columns
    p = target.T
    dim = q.shape[0]
    gram = q @ q.T + ridge * np.eye(dim)
    try:
        m_t = np.linalg.solve(gram, q @ p.T)
    except np.linalg.LinAlgError:
        warnings.warn("solution-mapping system singular even with ridge; using identity map")
        return np.eye(dim)
    return m_t.T


class SmmTransfer:
    """Solution mapping: linear least-squares between rank-aligned populations."""

    name = "smm"

    def __init__(self, ridge: float = SMM_RIDGE):
        self.ridge = ridge

    def propose(self, snapshot: TransferSnapshot) -> TransferResult:
        numt = snapshot.numt
        if numt < 2:
            warnings.warn("smm needs at least two tasks; returning no transfer solutions")
            return _empty_result(snapshot)
        sorted_pops = [_rank_sorted(v) for v in snapshot.tasks]
        unified = [
            _to_unified(sorted_pops[i], v.lower, v.upper)
            for i, v in enumerate(snapshot.tasks)
        ]
        solutions = []
        for ti, target in enumerate(snapshot.tasks):
            # Most similar source: smallest mean distance between rank-aligned
            # unified populations.
            dists = [
                (float(np.mean(np.linalg.norm(unified[si] - unified[ti], axis=1))), si)
                for si in range(numt)
                if si != ti
            ]
            si = min(dists)[1]
            mapping = fit_linear_map(sorted_pops[si], sorted_pops[ti], self.ridge)
            best_src = sorted_pops[si][: snapshot.nt]
            mapped = best_src @ mapping.T
            solutions.append(np.clip(mapped, target.lower, target.upper))
        return TransferResult(solutions)


BASELINES = {
    "noop": NoopTransfer,
    "vcm": VcmTransfer,
    "smm": SmmTransfer,
}


def get_baseline(name: str):
    try:
        return BASELINES[name]()
    except KeyError:
        raise KeyError(
            f"unknown transfer model {name!r}; registered: {', '.join(sorted(BASELINES))}"
        ) from None
