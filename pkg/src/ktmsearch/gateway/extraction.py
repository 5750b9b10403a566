"""Pulling candidate transfer models out of completion text."""
from __future__ import annotations

import re
from dataclasses import dataclass

from ..sandbox import SnippetSpec

_TAG_RE = re.compile(r"<LLMTransfer>(.*?)</LLMTransfer>", re.DOTALL)
_FENCE_RE = re.compile(r"^\s*```[\w-]*\s*$")


@dataclass(frozen=True)
class ExtractionResult:
    """Outcome of scanning one completion; never raises."""

    kind: str  # parsed | no_tag | multiple_tags | empty_body
    snippet: SnippetSpec | None = None
    detail: str = ""

    @property
    def is_parsed(self) -> bool:
        return self.kind == "parsed"


def _strip_fences(body: str) -> str:
    lines = [line for line in body.splitlines() if not _FENCE_RE.match(line)]
    return "\n".join(lines).strip()


def extract_ktm(text: str) -> ExtractionResult:
    """Locate the single tagged snippet in a completion and screen its structure."""
    matches = _TAG_RE.findall(text)
    if not matches:
        return ExtractionResult("no_tag", detail="no <LLMTransfer> block found")
    if len(matches) > 1:
        return ExtractionResult("multiple_tags", detail=f"{len(matches)} <LLMTransfer> blocks")
    body = _strip_fences(matches[0])
    if not body:
        return ExtractionResult("empty_body", detail="tag body is empty")
    try:
        snippet = SnippetSpec.from_source(body)
    except ValueError as exc:
        return ExtractionResult("empty_body", detail=str(exc))
    return ExtractionResult("parsed", snippet=snippet)


def wrap_in_tags(source: str) -> str:
    """Inverse of extraction for round-trip checks and scripted playlists."""
    return f"<LLMTransfer>\n{source.strip()}\n</LLMTransfer>"
