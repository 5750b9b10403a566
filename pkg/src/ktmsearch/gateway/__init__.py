"""Prompt rendering, completion backends, and snippet extraction."""
from .backends import (
    DEFAULT_API_KEY_ENV,
    GeneratorBackend,
    LlmConfig,
    RemoteBackend,
    ScriptedBackend,
    make_backend,
)
from .extraction import ExtractionResult, extract_ktm, wrap_in_tags
from .prompts import (
    PromptBundle,
    format_contract_text,
    render_generation_prompt,
    render_init_prompt,
    render_mutation_prompt,
    step_guide_text,
    system_text,
)

__all__ = [
    "DEFAULT_API_KEY_ENV",
    "ExtractionResult",
    "GeneratorBackend",
    "LlmConfig",
    "PromptBundle",
    "RemoteBackend",
    "ScriptedBackend",
    "extract_ktm",
    "format_contract_text",
    "make_backend",
    "render_generation_prompt",
    "render_init_prompt",
    "render_mutation_prompt",
    "step_guide_text",
    "system_text",
    "wrap_in_tags",
]
