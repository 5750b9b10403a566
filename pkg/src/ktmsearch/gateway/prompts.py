"""Prompt rendering for transfer-model generation.

The template files under ``templates/`` are frozen transcriptions of the
prompt texts driving initialization, generation, and mutation; transcription
conventions: the figure-style ``Description:`` / ``Requirements:`` section
labels are plain lines, displayed line breaks become newlines, and the
`...'-style quoting is kept as ASCII backtick/apostrophe pairs.  Rendering
only substitutes the #NAME# placeholders and never edits the surrounding
text, so prompt bytes stay stable across releases.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

from ..errors import ConfigurationError
from ..sandbox import SnippetSpec

PLACEHOLDER_NAMES = ("#FORMAT#", "#FSCOT#", "#N#", "#MLIST#", "#KTM#")


@dataclass(frozen=True)
class PromptBundle:
    """A rendered system+user prompt pair with its resolved placeholders."""

    system: str
    user: str
    placeholders: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in PLACEHOLDER_NAMES:
            if name in self.user or name in self.system:
                raise ValueError(f"unresolved placeholder {name} in rendered prompt")


def _load_template(name: str) -> str:
    try:
        text = (resources.files(__package__) / "templates" / name).read_text()
    except FileNotFoundError as exc:
        raise ConfigurationError(f"missing prompt template {name!r}") from exc
    return text.rstrip("\n")


def step_guide_text() -> str:
    return _load_template("step_guide.txt")


def format_contract_text() -> str:
    return _load_template("format_contract.txt")


def system_text() -> str:
    return _load_template("system.txt")


def render_init_prompt() -> PromptBundle:
    """The fresh-model prompt; identical bytes on every call."""
    resolved = {"#FORMAT#": format_contract_text(), "#FSCOT#": step_guide_text()}
    user = _load_template("init_user.txt")
    for name, value in resolved.items():
        user = user.replace(name, value)
    return PromptBundle(system=system_text(), user=user, placeholders=resolved)


def _parent_block(snippet: SnippetSpec, s: float, t: float) -> str:
    return (
        "<LLMTransfer>\n"
        f"{snippet.source.strip()}\n"
        "</LLMTransfer>\n"
        f"Averaged normalized objective value: {s:.4f}; running time: {t:.4f} seconds."
    )


def render_generation_prompt(parents: list[tuple[SnippetSpec, float, float]]) -> PromptBundle:
    """Prompt showing evaluated parents, ordered worst first (descending s).

    The strongest exemplars end up nearest the instruction text.
    """
    if not parents:
        raise ValueError("generation prompt needs at least one parent")
    ordered = sorted(parents, key=lambda p: -p[1])
    mlist = "\n".join(_parent_block(spec, s, t) for spec, s, t in ordered)
    resolved = {"#N#": str(len(parents)), "#MLIST#": mlist}
    user = _load_template("generation_user.txt")
    for name, value in resolved.items():
        user = user.replace(name, value)
    return PromptBundle(system=system_text(), user=user, placeholders=resolved)


def render_mutation_prompt(snippet: SnippetSpec) -> PromptBundle:
    """Prompt asking for a refined variant of one model."""
    # Substitute the snippet last so template markers are never rewritten
    # inside the embedded source.
    resolved = {
        "#FORMAT#": format_contract_text(),
        "#FSCOT#": step_guide_text(),
        "#KTM#": snippet.source.strip(),
    }
    user = _load_template("mutation_user.txt")
    for name, value in resolved.items():
        user = user.replace(name, value)
    return PromptBundle(system=system_text(), user=user, placeholders=resolved)
