"""Mechanical checks of the bullet-list answer format.

Covers the automatable subset of the answer-structure rubric: bullet
count, per-bullet word limit, terminal source tags, and category
prefixes. Word counts exclude structural tokens (the ``- `` marker,
prefixes like [Data], and terminal tags like [RAG]) because they target
content length, not markup.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

TAGS_REQUIRED = "tags_required"
TAGS_NOT_REQUIRED = "tags_not_required"

VALID_TAGS = ("[RAG]", "[LLM]", "[RAG][LLM]")
KNOWLEDGE_PREFIXES = ("[Mechanism]", "[Cause]", "[Mitigation]")
SYNTHESIS_PREFIXES = ("[Data]", "[Knowledge]", "[Integrated]")

_TRAILING_TAGS_RE = re.compile(r"(?:\s*\[(?:RAG|LLM)\])+$")
_LEADING_PREFIX_RE = re.compile(r"^\[[A-Za-z]+\]\s*")


@dataclass(frozen=True)
class Violation:
    index: int          # bullet index, -1 for list-level rules
    rule: str           # count | word_limit | tag | prefix
    detail: str


@dataclass(frozen=True)
class BulletReport:
    valid: bool
    bullet_count: int
    violations: list[Violation] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.valid != (not self.violations):
            raise ValueError("valid flag must mirror an empty violation list")


def split_bullets(text: str) -> list[str]:
    """Lines forming Markdown ``- `` bullets, markers stripped."""
    bullets = []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("- "):
            bullets.append(stripped[2:].strip())
    return bullets


def _strip_structural(bullet: str) -> tuple[str, str | None, str | None]:
    """Remove terminal tags and one leading prefix; return (core, tags, prefix)."""
    tags = None
    match = _TRAILING_TAGS_RE.search(bullet)
    if match:
        tags = match.group(0).replace(" ", "")
        bullet = bullet[:match.start()].rstrip()
    prefix = None
    match = _LEADING_PREFIX_RE.match(bullet)
    if match:
        prefix = match.group(0).strip()
        bullet = bullet[match.end():]
    return bullet, tags, prefix


def validate_bullets(
    text: str,
    min_n: int,
    max_n: int,
    word_limit: int,
    tag_mode: str = TAGS_NOT_REQUIRED,
    allowed_prefixes: tuple[str, ...] | None = None,
) -> BulletReport:
    """Structure report for a Markdown bullet list.

    Checks bullet count in [min_n, max_n], per-bullet word count strictly
    below ``word_limit``, and (with ``tags_required``) that every bullet
    ends with exactly one of [RAG], [LLM], [RAG][LLM]. When
    ``allowed_prefixes`` is given, every bullet must start with one of
    them. Always returns a report; never raises on content.
    """
    if tag_mode not in (TAGS_REQUIRED, TAGS_NOT_REQUIRED):
        raise ValueError(f"unknown tag_mode {tag_mode!r}")
    bullets = split_bullets(text)
    violations: list[Violation] = []

    if not (min_n <= len(bullets) <= max_n):
        violations.append(Violation(
            index=-1, rule="count",
            detail=f"expected {min_n}-{max_n} bullets, found {len(bullets)}",
        ))

    for i, bullet in enumerate(bullets):
        core, tags, prefix = _strip_structural(bullet)
        words = len(core.split())
        if words >= word_limit:
            violations.append(Violation(
                index=i, rule="word_limit",
                detail=f"{words} words, limit is <{word_limit}",
            ))
        if tag_mode == TAGS_REQUIRED:
            if tags is None:
                violations.append(Violation(
                    index=i, rule="tag", detail="missing terminal source tag",
                ))
            elif tags not in VALID_TAGS:
                violations.append(Violation(
                    index=i, rule="tag",
                    detail=f"invalid terminal tag sequence {tags!r}",
                ))
        if allowed_prefixes is not None and prefix not in allowed_prefixes:
            violations.append(Violation(
                index=i, rule="prefix",
                detail=f"bullet must start with one of {allowed_prefixes}, "
                       f"got {prefix!r}",
            ))

    return BulletReport(valid=not violations, bullet_count=len(bullets),
                        violations=violations)
