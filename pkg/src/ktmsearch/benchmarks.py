"""Multi-task continuous benchmark instances: construction, evaluation, persistence.

A task evaluates a base function on the distorted coordinates
``z = (x + shift) @ rotation``.  Instances are generated from a seed alone,
carry a random orthogonal rotation per task, and place each task's global
optimum strictly inside its search box.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import BenchmarkFormatError, FormatVersionError
from .rng import RNG_ALGORITHM, derive_rng

FORMAT_VERSION = 1

# Analytic optimum of z*sin(sqrt(|z|)) and the matching per-dimension offset.
SCHWEFEL_OPTIMUM = 420.9687462275036
SCHWEFEL_OFFSET = 418.9828872724338

ORTHOGONALITY_TOL = 1e-9


class BaseFunction(IntEnum):
    """The seven base functions, with stable integer codes for serialization."""

    SPHERE = 1
    ROSENBROCK = 2
    ACKLEY = 3
    RASTRIGIN = 4
    GRIEWANK = 5
    WEIERSTRASS = 6
    SCHWEFEL = 7


# Conventional search boxes per base function.
DEFAULT_BOUNDS: dict[BaseFunction, tuple[float, float]] = {
    BaseFunction.SPHERE: (-100.0, 100.0),
    BaseFunction.ROSENBROCK: (-100.0, 100.0),
    BaseFunction.ACKLEY: (-50.0, 50.0),
    BaseFunction.RASTRIGIN: (-100.0, 100.0),
    BaseFunction.GRIEWANK: (-100.0, 100.0),
    BaseFunction.WEIERSTRASS: (-50.0, 50.0),
    BaseFunction.SCHWEFEL: (-500.0, 500.0),
}


def sphere(z: np.ndarray) -> float:
    return float(np.sum(z * z))


def rosenbrock(z: np.ndarray) -> float:
    return float(np.sum(100.0 * (z[:-1] ** 2 - z[1:]) ** 2 + (z[:-1] - 1.0) ** 2))


def ackley(z: np.ndarray) -> float:
    term1 = -20.0 * np.exp(-0.2 * np.sqrt(np.mean(z * z)))
    term2 = -np.exp(np.mean(np.cos(2.0 * np.pi * z)))
    return float(term1 + term2 + 20.0 + np.e)


def rastrigin(z: np.ndarray) -> float:
    return float(np.sum(z * z - 10.0 * np.cos(2.0 * np.pi * z) + 10.0))


def griewank(z: np.ndarray) -> float:
    idx = np.arange(1, z.size + 1, dtype=float)
    return float(np.sum(z * z) / 4000.0 - np.prod(np.cos(z / np.sqrt(idx))) + 1.0)


def weierstrass(z: np.ndarray) -> float:
    # cos(2*pi*y) is evaluated as cos(2*pi*fmod(y, 1)): exact for float y and
    # keeps the argument small, since y = b^k (z + 0.5) reaches ~1e12 where a
    # single ulp of the raw argument would already cost ~1e-4 radians.
    a, b, kmax = 0.5, 3.0, 20
    ak = a ** np.arange(kmax + 1)
    bk = b ** np.arange(kmax + 1)
    phases = np.fmod(np.outer(z + 0.5, bk), 1.0)
    inner = np.sum(ak * np.cos(2.0 * np.pi * phases), axis=1)
    const = z.size * np.sum(ak * np.cos(2.0 * np.pi * np.fmod(0.5 * bk, 1.0)))
    return float(np.sum(inner) - const)


def schwefel(z: np.ndarray) -> float:
    # Out-of-box coordinates use the standard folded form with a quadratic
    # penalty, so the global minimum stays at the in-box optimum.
    d = z.size
    g = np.empty_like(z, dtype=float)
    inside = np.abs(z) <= 500.0
    high = z > 500.0
    low = z < -500.0
    zi = z[inside]
    g[inside] = zi * np.sin(np.sqrt(np.abs(zi)))
    if np.any(high):
        zh = z[high]
        folded = 500.0 - np.fmod(zh, 500.0)
        g[high] = folded * np.sin(np.sqrt(np.abs(folded))) - (zh - 500.0) ** 2 / (10000.0 * d)
    if np.any(low):
        zl = z[low]
        folded = np.fmod(np.abs(zl), 500.0) - 500.0
        g[low] = folded * np.sin(np.sqrt(np.abs(folded))) - (zl + 500.0) ** 2 / (10000.0 * d)
    return float(SCHWEFEL_OFFSET * d - np.sum(g))


_EVALUATORS = {
    BaseFunction.SPHERE: sphere,
    BaseFunction.ROSENBROCK: rosenbrock,
    BaseFunction.ACKLEY: ackley,
    BaseFunction.RASTRIGIN: rastrigin,
    BaseFunction.GRIEWANK: griewank,
    BaseFunction.WEIERSTRASS: weierstrass,
    BaseFunction.SCHWEFEL: schwefel,
}


def canonical_optimum(fn: BaseFunction, dim: int) -> np.ndarray:
    """Location z* where the base function attains its minimum of 0."""
    if fn is BaseFunction.ROSENBROCK:
        return np.ones(dim)
    if fn is BaseFunction.SCHWEFEL:
        return np.full(dim, SCHWEFEL_OPTIMUM)
    return np.zeros(dim)


def base_function_value(fn: BaseFunction, z: np.ndarray) -> float:
    """Evaluate one base function at z.  Raises ValueError on non-finite input."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size < 1:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite input to base function")
    return _EVALUATORS[BaseFunction(fn)](z)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TaskDefinition:
    """One optimization task: base function under a shift and a rotation, in a box."""

    base_fn: BaseFunction
    dim: int
    shift: np.ndarray
    rotation: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        for name in ("shift", "lower", "upper"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        object.__setattr__(self, "rotation", _readonly(self.rotation))
        object.__setattr__(self, "base_fn", BaseFunction(self.base_fn))
        if self.dim < 1:
            raise ValueError("dim must be positive")
        for name in ("shift", "lower", "upper"):
            if getattr(self, name).shape != (self.dim,):
                raise ValueError(f"{name} must have shape ({self.dim},)")
        if self.rotation.shape != (self.dim, self.dim):
            raise ValueError("rotation must be dim x dim")
        residual = np.max(np.abs(self.rotation @ self.rotation.T - np.eye(self.dim)))
        if residual >= ORTHOGONALITY_TOL:
            raise ValueError(f"rotation is not orthogonal (residual {residual:.3e})")
        if not np.all(self.lower < self.upper):
            raise ValueError("lower bounds must be strictly below upper bounds")
        opt = self.optimum
        if np.any(opt < self.lower) or np.any(opt > self.upper):
            raise ValueError("task optimum falls outside the search box")

    @property
    def optimum(self) -> np.ndarray:
        """Location in x-space where the task attains its minimum of 0."""
        zstar = canonical_optimum(self.base_fn, self.dim)
        return zstar @ self.rotation.T - self.shift

    def evaluate(self, x: np.ndarray) -> float:
        """Task objective at x (no bound clipping; that is the caller's job)."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected shape ({self.dim},), got {x.shape}")
        z = (x + self.shift) @ self.rotation
        return base_function_value(self.base_fn, z)

    def evaluate_many(self, xs: np.ndarray) -> np.ndarray:
        """Objective for each row of xs."""
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 2 or xs.shape[1] != self.dim:
            raise ValueError(f"expected shape (n, {self.dim}), got {xs.shape}")
        zs = (xs + self.shift) @ self.rotation
        return np.array([base_function_value(self.base_fn, z) for z in zs])

    def __eq__(self, other):
        if not isinstance(other, TaskDefinition):
            return NotImplemented
        return (
            self.base_fn == other.base_fn
            and self.dim == other.dim
            and np.array_equal(self.shift, other.shift)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )


def evaluate_task(task: TaskDefinition, x: np.ndarray) -> float:
    return task.evaluate(x)


@dataclass(frozen=True, eq=False)
class BenchmarkInstance:
    """An ordered set of tasks sharing one dimensionality."""

    id: str
    seed: int
    pset: tuple[BaseFunction, ...]
    tasks: tuple[TaskDefinition, ...]

    def __post_init__(self):
        object.__setattr__(self, "pset", tuple(BaseFunction(p) for p in self.pset))
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.tasks:
            raise ValueError("an instance needs at least one task")
        dims = {t.dim for t in self.tasks}
        if len(dims) != 1:
            raise ValueError("all tasks in an instance must share one dimension")
        for i, task in enumerate(self.tasks):
            if task.base_fn != self.pset[i % len(self.pset)]:
                raise ValueError("task base functions must cycle through pset in order")

    @property
    def dim(self) -> int:
        return self.tasks[0].dim

    @property
    def numt(self) -> int:
        return len(self.tasks)

    def __eq__(self, other):
        if not isinstance(other, BenchmarkInstance):
            return NotImplemented
        return (
            self.id == other.id
            and self.seed == other.seed
            and self.pset == other.pset
            and len(self.tasks) == len(other.tasks)
            and all(a == b for a, b in zip(self.tasks, other.tasks))
        )


def _random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    gauss = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def generate_benchmark(
    pset,
    numt: int,
    dim: int,
    seed: int,
    instance_id: str | None = None,
    bounds: dict[BaseFunction, tuple[float, float]] | None = None,
) -> BenchmarkInstance:
    """Build an instance whose i-th task uses pset[i mod len(pset)].

    Per task, the rotation is a random orthogonal matrix (determinant +1) and
    the optimum location is sampled uniformly from the central 80% of the box;
    the shift is derived from it, which keeps the optimum interior even for
    base functions whose canonical optimum is away from the origin.
    """
    pset = tuple(BaseFunction(p) for p in pset)
    if not pset:
        raise ValueError("pset must be nonempty")
    if numt < 1:
        raise ValueError("numt must be >= 1")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    bounds = dict(DEFAULT_BOUNDS) | (bounds or {})
    tasks = []
    for i in range(numt):
        fn = pset[i % len(pset)]
        lo, hi = bounds[fn]
        rng = derive_rng(seed, "task", i)
        rotation = _random_rotation(dim, rng)
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        xstar = center + rng.uniform(-0.8 * half, 0.8 * half, size=dim)
        shift = canonical_optimum(fn, dim) @ rotation.T - xstar
        tasks.append(
            TaskDefinition(
                base_fn=fn,
                dim=dim,
                shift=shift,
                rotation=rotation,
                lower=np.full(dim, lo),
                upper=np.full(dim, hi),
            )
        )
    if instance_id is None:
        instance_id = f"custom-{numt}x{dim}-seed{seed}"
    return BenchmarkInstance(id=instance_id, seed=seed, pset=pset, tasks=tuple(tasks))


# Preset instance configurations: ten 50-task/50-dim benchmarks plus desk-scale
# "-mini" variants (5 tasks, 10 dims) of each.
_P = BaseFunction
_PRESET_PSETS: dict[str, tuple[BaseFunction, ...]] = {
    "B1": (_P.SPHERE,),
    "B2": (_P.ROSENBROCK,),
    "B3": (_P.RASTRIGIN,),
    "B4": (_P.SPHERE, _P.ROSENBROCK, _P.ACKLEY),
    "B5": (_P.RASTRIGIN, _P.GRIEWANK, _P.WEIERSTRASS),
    "B6": (_P.ROSENBROCK, _P.GRIEWANK, _P.SCHWEFEL),
    "B7": (_P.ACKLEY, _P.RASTRIGIN, _P.WEIERSTRASS),
    "B8": (_P.ROSENBROCK, _P.ACKLEY, _P.RASTRIGIN, _P.GRIEWANK, _P.WEIERSTRASS),
    "B9": (_P.ROSENBROCK, _P.ACKLEY, _P.RASTRIGIN, _P.GRIEWANK, _P.WEIERSTRASS, _P.SCHWEFEL),
    "B10": (_P.ACKLEY, _P.RASTRIGIN, _P.GRIEWANK, _P.WEIERSTRASS, _P.SCHWEFEL),
}

PRESETS: dict[str, dict] = {}
for _name, _pset in _PRESET_PSETS.items():
    PRESETS[_name] = {"pset": _pset, "numt": 50, "dim": 50}
    PRESETS[_name + "-mini"] = {"pset": _pset, "numt": 5, "dim": 10}


def generate_preset(name: str, seed: int) -> BenchmarkInstance:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}")
    cfg = PRESETS[name]
    return generate_benchmark(
        cfg["pset"], cfg["numt"], cfg["dim"], seed=seed, instance_id=name
    )


def _matrix_to_json(m: np.ndarray) -> dict:
    return {"shape": list(m.shape), "data": m.ravel(order="C").tolist()}


def _matrix_from_json(obj: dict) -> np.ndarray:
    data = np.array(obj["data"], dtype=float)
    return data.reshape(obj["shape"], order="C")


def save_benchmark(instance: BenchmarkInstance, path: str | Path) -> None:
    doc = {
        "kind": "ktm-benchmark",
        "format_version": FORMAT_VERSION,
        "rng_algorithm": RNG_ALGORITHM,
        "id": instance.id,
        "seed": instance.seed,
        "numt": instance.numt,
        "dim": instance.dim,
        "pset": [int(p) for p in instance.pset],
        "tasks": [
            {
                "base_fn": int(t.base_fn),
                "shift": t.shift.tolist(),
                "rotation": _matrix_to_json(t.rotation),
                "lower": t.lower.tolist(),
                "upper": t.upper.tolist(),
            }
            for t in instance.tasks
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_benchmark(path: str | Path) -> BenchmarkInstance:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BenchmarkFormatError(f"{path}: {exc.msg}", byte_offset=exc.pos) from exc
    if not isinstance(doc, dict) or doc.get("kind") != "ktm-benchmark":
        raise BenchmarkFormatError(f"{path}: not a benchmark file")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"{path}: format version {version} not supported (this build reads {FORMAT_VERSION})"
        )
    try:
        tasks = tuple(
            TaskDefinition(
                base_fn=BaseFunction(t["base_fn"]),
                dim=doc["dim"],
                shift=np.array(t["shift"], dtype=float),
                rotation=_matrix_from_json(t["rotation"]),
                lower=np.array(t["lower"], dtype=float),
                upper=np.array(t["upper"], dtype=float),
            )
            for t in doc["tasks"]
        )
        return BenchmarkInstance(
            id=doc["id"],
            seed=doc["seed"],
            pset=tuple(BaseFunction(p) for p in doc["pset"]),
            tasks=tasks,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BenchmarkFormatError(f"{path}: malformed benchmark content: {exc}") from exc
