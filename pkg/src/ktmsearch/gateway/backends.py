"""Completion backends: a remote chat endpoint, a scripted playlist, and a
deterministic snippet generator for search-dynamics tests without network."""
from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import httpx

from ..errors import ConfigurationError, TransportError
from ..rng import derive_rng
from .extraction import wrap_in_tags
from .prompts import PromptBundle

DEFAULT_API_KEY_ENV = "KTMSEARCH_API_KEY"


@dataclass(frozen=True)
class LlmConfig:
    """Backend selection and completion parameters."""

    backend: str = "scripted"  # remote | scripted | generator
    model: str = ""
    endpoint: str = ""
    temperature: float = 0.5
    max_tokens: int = 4000
    retries: int = 3
    timeout_s: float = 60.0
    backoff_base_s: float = 0.5
    api_key_env: str = DEFAULT_API_KEY_ENV
    playlist_dir: str = ""
    generator_seed: int = 0

    def __post_init__(self):
        if self.backend not in ("remote", "scripted", "generator"):
            raise ConfigurationError(f"unknown backend {self.backend!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigurationError("temperature must be within [0, 2]")
        if self.max_tokens <= 0:
            raise ConfigurationError("max_tokens must be positive")
        if self.retries < 0:
            raise ConfigurationError("retries must be >= 0")


class RemoteBackend:
    """Chat-completion client with exponential-backoff retries."""

    name = "remote"

    def __init__(self, cfg: LlmConfig, transport: httpx.BaseTransport | None = None, sleep=time.sleep):
        if not cfg.endpoint:
            raise ConfigurationError("remote backend needs an endpoint URL")
        api_key = os.environ.get(cfg.api_key_env)
        if not api_key:
            raise ConfigurationError(
                f"remote backend needs an API key in the environment variable {cfg.api_key_env}"
            )
        self.cfg = cfg
        self._sleep = sleep
        self._client = httpx.Client(
            transport=transport,
            timeout=cfg.timeout_s,
            headers={"Authorization": f"Bearer {api_key}"},
        )

    def complete(self, bundle: PromptBundle) -> str:
        body = {
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "messages": [
                {"role": "system", "content": bundle.system},
                {"role": "user", "content": bundle.user},
            ],
        }
        last_error = "no attempt made"
        for attempt in range(self.cfg.retries + 1):
            if attempt > 0:
                self._sleep(self.cfg.backoff_base_s * 2 ** (attempt - 1))
            try:
                response = self._client.post(self.cfg.endpoint, json=body)
            except httpx.TransportError as exc:
                last_error = f"transport failure: {exc}"
                continue
            if response.status_code == 200:
                try:
                    return response.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, ValueError) as exc:
                    raise TransportError(f"malformed completion response: {exc}") from exc
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                continue
            raise TransportError(f"completion request rejected: HTTP {response.status_code}")
        raise TransportError(f"retries exhausted ({self.cfg.retries}): {last_error}")

    def state(self) -> dict:
        return {}

    def restore(self, state: dict) -> None:
        pass


class ScriptedBackend:
    """Replays response files from a directory in lexicographic order."""

    name = "scripted"

    def __init__(self, playlist_dir: str | Path):
        self.playlist_dir = Path(playlist_dir)
        self._files = sorted(p for p in self.playlist_dir.glob("*") if p.is_file())
        if not self._files:
            raise ConfigurationError(f"scripted playlist {self.playlist_dir} is empty")
        self._cursor = 0
        self._lock = threading.Lock()

    def complete(self, bundle: PromptBundle) -> str:
        with self._lock:
            if self._cursor >= len(self._files):
                raise ConfigurationError(
                    f"scripted playlist exhausted after {len(self._files)} responses"
                )
            path = self._files[self._cursor]
            self._cursor += 1
        return path.read_text()

    @property
    def cursor(self) -> int:
        return self._cursor

    def state(self) -> dict:
        return {"cursor": self._cursor}

    def restore(self, state: dict) -> None:
        self._cursor = int(state.get("cursor", 0))


_ANNOTATION_STYLES = (
    "adaptive transfer of elite solutions between similar problems",
    "similarity weighted exchange of knowledge across tasks",
    "random pairing with bounded perturbation of transferred solutions",
    "greedy reuse of the best solutions from neighbouring problems",
    "population alignment before transferring candidate solutions",
    "elite solutions shared through the normalized representation space",
)

_JITTER_TEMPLATE = '''# sandbox-behavior: jitter scale={scale}
# Design Thought: {annotation}.
import numpy as np


def LLMTransfer(populations, fitnesses, lower_bounds, upper_bounds, nt, seed):
    rng = np.random.default_rng(seed)
    scale = {scale}
    transfers = []
    for pop, fit, lo, hi in zip(populations, fitnesses, lower_bounds, upper_bounds):
        pop = np.asarray(pop, dtype=float)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        order = np.argsort(np.asarray(fit, dtype=float), kind="stable")[:nt]
        base = pop[order]
        rows = base + scale * (hi - lo) * rng.standard_normal(base.shape)
        transfers.append(np.clip(rows, lo, hi).tolist())
    return transfers
'''


class GeneratorBackend:
    """Emits valid parameterized snippets from templates, deterministically."""

    name = "generator"

    def __init__(self, seed: int = 0, invalid_every: int | None = None):
        self.seed = seed
        self.invalid_every = invalid_every
        self._counter = 0
        self._lock = threading.Lock()

    def complete(self, bundle: PromptBundle) -> str:
        with self._lock:
            index = self._counter
            self._counter += 1
        if self.invalid_every and (index + 1) % self.invalid_every == 0:
            return "I considered several designs but cannot settle on one."
        rng = derive_rng(self.seed, "completion", index)
        annotation = _ANNOTATION_STYLES[int(rng.integers(0, len(_ANNOTATION_STYLES)))]
        scale = round(float(10.0 ** rng.uniform(-2.5, -0.8)), 4)
        source = _JITTER_TEMPLATE.format(scale=scale, annotation=annotation)
        prose = "Here is an innovative design.\n"
        return prose + wrap_in_tags(source)

    @property
    def counter(self) -> int:
        return self._counter

    def state(self) -> dict:
        return {"counter": self._counter}

    def restore(self, state: dict) -> None:
        self._counter = int(state.get("counter", 0))


def make_backend(cfg: LlmConfig, transport: httpx.BaseTransport | None = None):
    if cfg.backend == "remote":
        return RemoteBackend(cfg, transport=transport)
    if cfg.backend == "scripted":
        if not cfg.playlist_dir:
            raise ConfigurationError("scripted backend needs playlist_dir")
        return ScriptedBackend(cfg.playlist_dir)
    return GeneratorBackend(seed=cfg.generator_seed)
