"""Query the LLM for candidate topics and writing styles and parse the
replies into deduplicated candidate sets.

Topic elicitation asks for 100 entities per call and paginates until the
target count (default 300) of distinct items is reached. Every raw reply
is archived so the set can be reproduced byte-identically from the
archive. A Manual style source is supported so the pipeline can run fully
offline.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .core import FewShotSet, TaskSpec, sha256_hex
from .errors import DataError
from .kg import normalize_surface
from .llmclient import Backend, GenerationParams
from .promptkit import TemplatePack, default_pack, substitute

logger = logging.getLogger(__name__)

DEFAULT_TOPIC_TARGET = 300
ITEMS_PER_CALL = 100


class CandidateKind(str, Enum):
    TOPICS = "Topics"
    STYLES = "Styles"


class StyleOrigin(str, Enum):
    LLM = "LLM"
    MANUAL = "Manual"


@dataclass(frozen=True)
class StyleSuggestion:
    """A short phrase naming a plausible source/speaker/author of the text."""

    text: str
    task_id: str = ""
    source: StyleOrigin = StyleOrigin.LLM

    def __post_init__(self) -> None:
        cleaned = self.text.strip()
        if not cleaned or "\n" in cleaned or len(cleaned) > 200:
            raise DataError(f"style must be a non-empty single line <= 200 chars: {self.text!r}")


@dataclass(frozen=True)
class CallProvenance:
    prompt_sha256: str
    model_id: str
    archive_path: str | None = None


@dataclass
class CandidateSet:
    """Deduplicated ordered items plus the provenance of every LLM call."""

    kind: CandidateKind
    items: list[str]
    provenance: list[CallProvenance] = field(default_factory=list)
    entity_type: str = ""
    shortfall: int = 0

    def __post_init__(self) -> None:
        keys = [normalize_surface(item) for item in self.items]
        if len(set(keys)) != len(keys):
            raise DataError("candidate set items must be distinct under normalization")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class ElicitPrompt:
    """An elicitation prompt; ``kind`` selects the mock reply grammar."""

    text: str
    sha256: str
    kind: str
    entity_type: str = ""


_ENUM_PREFIX = re.compile(r"^\s*(?:\d+[.)]\s*|[-*•]\s*)")
_TRAILING_PUNCT = ".,;:"


def _clean_item(raw: str) -> str:
    item = _ENUM_PREFIX.sub("", raw).strip()
    while len(item) >= 2 and item[0] in "\"'“‘" and item[-1] in "\"'”’":
        item = item[1:-1].strip()
    return item.rstrip(_TRAILING_PUNCT).strip()


def parse_item_list(raw: str) -> list[str]:
    """Extract items from numbered, bulleted, or comma-separated replies.

    Enumeration tokens, surrounding quotes, and trailing punctuation are
    stripped; prose lines without a list marker are skipped; empties are
    dropped. An empty result is valid output.
    """
    lines = [line for line in raw.splitlines() if line.strip()]
    if not lines:
        return []
    if len(lines) == 1 and not _ENUM_PREFIX.match(lines[0]):
        parts = lines[0].split(",")
        items = [_clean_item(part) for part in parts]
        return [item for item in items if item]
    items = []
    for line in lines:
        if not _ENUM_PREFIX.match(line):
            continue
        item = _clean_item(line)
        if item:
            items.append(item)
    return items


def _dedupe(existing_keys: set[str], items: Iterable[str]) -> list[str]:
    fresh = []
    for item in items:
        key = normalize_surface(item)
        if not key or key in existing_keys:
            continue
        existing_keys.add(key)
        fresh.append(item)
    return fresh


def _archive_reply(archive_dir: Path | None, prompt_sha: str, call_idx: int, raw: str) -> str | None:
    if archive_dir is None:
        return None
    archive_dir.mkdir(parents=True, exist_ok=True)
    path = archive_dir / f"{prompt_sha}.{call_idx:03d}.txt"
    path.write_text(raw, encoding="utf-8")
    return str(path)


def elicit_topics(
    client: Backend,
    entity_type: str,
    target_count: int = DEFAULT_TOPIC_TARGET,
    *,
    params: GenerationParams,
    pack: TemplatePack | None = None,
    max_calls: int | None = None,
    archive_dir: str | Path | None = None,
) -> CandidateSet:
    """Collect ``target_count`` distinct entities of one type from the LLM.

    The prompt asks for 100 entities; calls repeat until the target is
    reached or ``max_calls`` is exhausted, in which case a partial set is
    returned with a shortfall warning.
    """
    if target_count < 1:
        raise DataError("target_count must be >= 1")
    pack = pack or default_pack()
    body = pack.raw("elicit_topics")
    text = substitute(body, {"entity_type": entity_type})
    prompt = ElicitPrompt(
        text=text, sha256=sha256_hex(text), kind="elicit_topics", entity_type=entity_type
    )
    if max_calls is None:
        max_calls = 4 * -(-target_count // ITEMS_PER_CALL)
    archive = Path(archive_dir) if archive_dir else None

    items: list[str] = []
    seen: set[str] = set()
    provenance: list[CallProvenance] = []
    for call_idx in range(max_calls):
        result = client.complete(prompt, params)
        path = _archive_reply(archive, prompt.sha256, call_idx, result.text)
        provenance.append(CallProvenance(prompt.sha256, params.model_id, path))
        items.extend(_dedupe(seen, parse_item_list(result.text)))
        if len(items) >= target_count:
            items = items[:target_count]
            break
    shortfall = max(0, target_count - len(items))
    if shortfall:
        logger.warning(
            "topic elicitation for %r fell short: %d/%d distinct items after %d calls",
            entity_type, len(items), target_count, len(provenance),
        )
    return CandidateSet(
        kind=CandidateKind.TOPICS,
        items=items,
        provenance=provenance,
        entity_type=entity_type,
        shortfall=shortfall,
    )


def _render_demo_lines(demos: FewShotSet) -> str:
    return "\n".join(" ".join(ex.texts) for ex in demos.examples)


def elicit_styles(
    client: Backend,
    task: TaskSpec,
    demos: FewShotSet,
    *,
    params: GenerationParams,
    pack: TemplatePack | None = None,
    archive_dir: str | Path | None = None,
) -> CandidateSet:
    """Ask the LLM for potential sources, speakers, or authors of the text."""
    if not demos.examples:
        raise DataError("style elicitation requires non-empty demonstrations")
    pack = pack or default_pack()
    body = pack.raw("elicit_styles")
    text = substitute(body, {"task": task.id, "demonstrations": _render_demo_lines(demos)})
    prompt = ElicitPrompt(text=text, sha256=sha256_hex(text), kind="elicit_styles")
    archive = Path(archive_dir) if archive_dir else None

    result = client.complete(prompt, params)
    path = _archive_reply(archive, prompt.sha256, 0, result.text)
    seen: set[str] = set()
    styles = _dedupe(seen, parse_item_list(result.text))
    if not styles:
        raise DataError(f"no parseable styles in reply: {result.text!r}")
    for style in styles:
        StyleSuggestion(text=style, task_id=task.id)
    return CandidateSet(
        kind=CandidateKind.STYLES,
        items=styles,
        provenance=[CallProvenance(prompt.sha256, params.model_id, path)],
    )


def manual_styles(styles: Sequence[str], task_id: str = "") -> CandidateSet:
    """Build a style candidate set from configuration (offline source)."""
    for style in styles:
        StyleSuggestion(text=style, task_id=task_id, source=StyleOrigin.MANUAL)
    seen: set[str] = set()
    return CandidateSet(kind=CandidateKind.STYLES, items=_dedupe(seen, styles))


def save_candidate_set(cset: CandidateSet, path: str | Path) -> None:
    """Persist one item per JSONL line with its normalized key and provenance.

    Pagination reuses one prompt verbatim, so the prompt hash and model id
    are uniform across the set; both are null for manual sources.
    """
    first_call = cset.provenance[0] if cset.provenance else None
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for item in cset.items:
            row = {
                "kind": cset.kind.value,
                "item": item,
                "normalized_key": normalize_surface(item),
                "entity_type": cset.entity_type,
                "prompt_sha256": first_call.prompt_sha256 if first_call else None,
                "model_id": first_call.model_id if first_call else None,
            }
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")


def load_candidate_set(path: str | Path) -> CandidateSet:
    items: list[str] = []
    kind: CandidateKind | None = None
    entity_type = ""
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                kind = CandidateKind(row["kind"])
                entity_type = row.get("entity_type", "")
                items.append(row["item"])
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    if kind is None:
        raise DataError(f"{path}: empty candidate set")
    return CandidateSet(kind=kind, items=items, entity_type=entity_type)
