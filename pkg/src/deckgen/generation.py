"""Stage II: outline planning and per-slide edit generation.

Each planned slide clones a reference slide from the analyzed deck and
rewrites it with an edit-action script. Failed scripts produce feedback
that is fed back to the provider for a bounded number of corrections.
"""

from __future__ import annotations

import copy
import json
import logging
import os
import re
from dataclasses import dataclass, field

from deckgen import prompts
from deckgen.actions import (
    ActionSyntaxError,
    ExecutionFeedback,
    apply_actions,
    parse_action_script,
)
from deckgen.analysis import AnalysisResult
from deckgen.errors import DeckgenError
from deckgen.gateway import ChatMessage, ChatRequest, Gateway
from deckgen.htmlrender import render_slide_html
from deckgen.ingest import SourceDocument
from deckgen.pptx import Presentation, save_presentation

log = logging.getLogger(__name__)

DEFAULT_RETRY_LIMIT = 2
DEFAULT_MAX_SLIDES = 16

_PREVIEW_CHARS = 200


class EmptyOutline(DeckgenError):
    pass


class UnresolvableReference(DeckgenError):
    pass


class SlideFailed(DeckgenError):
    def __init__(self, trace: "SlideTrace"):
        super().__init__(
            f"slide {trace.title!r} failed after {len(trace.attempts)} attempts"
        )
        self.trace = trace


@dataclass(frozen=True)
class OutlineEntry:
    title: str
    ref_kind: str  # "structural" | "cluster"
    ref: str  # role label or cluster id
    section_refs: tuple[str, ...] = ()
    image_refs: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "title": self.title,
            "ref": f"{self.ref_kind}:{self.ref}",
            "sections": list(self.section_refs),
            "images": list(self.image_refs),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "OutlineEntry":
        kind, _, ref = doc["ref"].partition(":")
        return cls(
            title=doc["title"],
            ref_kind=kind,
            ref=ref,
            section_refs=tuple(doc.get("sections", ())),
            image_refs=tuple(doc.get("images", ())),
        )


@dataclass
class SlideTrace:
    title: str
    attempts: list[dict] = field(default_factory=list)  # {script, outcome[, detail]}
    final: str = "Failed"  # "Success" | "Failed"

    def to_json(self) -> dict:
        return {"title": self.title, "attempts": self.attempts, "final": self.final}


@dataclass
class GenerationTrace:
    slides: list[SlideTrace] = field(default_factory=list)
    retry_limit: int = DEFAULT_RETRY_LIMIT

    @property
    def succeeded(self) -> bool:
        return bool(self.slides) and all(s.final == "Success" for s in self.slides)

    def to_json(self) -> dict:
        return {
            "retry_limit": self.retry_limit,
            "final": "Success" if self.succeeded else "Failed",
            "slides": [s.to_json() for s in self.slides],
        }


def _strip_fences(raw: str) -> str:
    lines = raw.strip().splitlines()
    if lines and lines[0].lstrip().startswith("```"):
        lines = lines[1:]
    if lines and lines[-1].lstrip().startswith("```"):
        lines = lines[:-1]
    return "\n".join(lines)


def _chat(gateway: Gateway, messages: list[ChatMessage], role: str = "lm") -> str:
    ep = gateway.endpoints.get(role)
    model = ep.model if ep else "default"
    return gateway.complete(ChatRequest(model=model, messages=messages), role=role)


# -- outline ------------------------------------------------------------------


def _split_refs(value: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in value.split(",") if part.strip())


def _parse_outline(raw: str) -> list[OutlineEntry] | str:
    """Entries, or a description of the first structural problem."""
    blocks = [b for b in re.split(r"\n\s*\n", _strip_fences(raw)) if b.strip()]
    if not blocks:
        return "no outline entries found"
    entries = []
    for num, block in enumerate(blocks, start=1):
        fields: dict[str, str] = {}
        for line in block.strip().splitlines():
            key, sep, value = line.partition(":")
            key = key.strip().lower()
            if not sep or key not in ("title", "ref", "sections", "images"):
                return f"entry {num}: unrecognized line {line.strip()!r}"
            fields[key] = value.strip()
        if not fields.get("title"):
            return f"entry {num}: missing title"
        if not fields.get("ref"):
            return f"entry {num}: missing ref"
        kind, sep, ref = fields["ref"].partition(":")
        kind = kind.strip().lower()
        ref = ref.strip()
        if not sep or kind not in ("structural", "cluster") or not ref:
            return f"entry {num}: ref must be structural:<label> or cluster:<id>, got {fields['ref']!r}"
        entries.append(
            OutlineEntry(
                title=fields["title"],
                ref_kind=kind,
                ref=ref,
                section_refs=_split_refs(fields.get("sections", "")),
                image_refs=_split_refs(fields.get("images", "")),
            )
        )
    return entries


def _validate_outline(
    entries: list[OutlineEntry],
    doc: SourceDocument,
    analysis: AnalysisResult,
    catalog,
) -> list[str]:
    problems = []
    known_sections = set(doc.section_ids())
    known_images = set(catalog.refs()) if catalog is not None else set()
    for num, entry in enumerate(entries, start=1):
        where = f"entry {num} ({entry.title!r})"
        if entry.ref_kind == "structural":
            if entry.ref not in analysis.structural:
                problems.append(
                    f"{where}: unknown structural label {entry.ref!r}; "
                    f"known: {', '.join(analysis.structural) or 'none'}"
                )
        else:
            if entry.ref not in analysis.clusters:
                problems.append(
                    f"{where}: unknown cluster {entry.ref!r}; "
                    f"known: {', '.join(analysis.clusters) or 'none'}"
                )
            if not entry.section_refs:
                problems.append(f"{where}: content slides need at least one section")
        for sid in entry.section_refs:
            if sid not in known_sections:
                problems.append(f"{where}: unknown section id {sid!r}")
        for ref in entry.image_refs:
            if ref not in known_images:
                problems.append(f"{where}: unknown image ref {ref!r}")
    return problems


def _sections_text(doc: SourceDocument) -> str:
    lines = []
    for section in doc.all_sections():
        title = section.title or "(untitled)"
        preview = " ".join(section.body.split())[:_PREVIEW_CHARS]
        lines.append(f"{section.sid}: {title} - {preview}" if preview else f"{section.sid}: {title}")
    return "\n".join(lines) or "(none)"


def _images_text(catalog, refs=None) -> str:
    if catalog is None:
        return "(none)"
    wanted = list(refs) if refs is not None else catalog.refs()
    lines = []
    for ref in wanted:
        image = catalog.resolve(ref)
        if image is not None:
            lines.append(f"{ref}: {image.caption or '(no caption)'}")
    return "\n".join(lines) or "(none)"


def _references_text(analysis: AnalysisResult) -> str:
    lines = []
    for label, group in analysis.structural.items():
        lines.append(f"structural:{label} - {len(group['slides'])} slide(s)")
    for cid, group in analysis.clusters.items():
        categories = ", ".join(e["category"] for e in group["schema"])
        lines.append(f"cluster:{cid} - elements: {categories or 'none'}")
    return "\n".join(lines)


def generate_outline(
    doc: SourceDocument,
    analysis: AnalysisResult,
    gateway: Gateway,
    catalog=None,
    max_slides: int = DEFAULT_MAX_SLIDES,
) -> list[OutlineEntry]:
    if not analysis.structural and not analysis.clusters:
        raise UnresolvableReference("analysis holds no reference groups")
    prompt = prompts.fill(
        "outline",
        sections=_sections_text(doc),
        images=_images_text(catalog),
        references=_references_text(analysis),
        max_slides=max_slides,
    )

    def attempt(text: str) -> tuple[list[OutlineEntry] | None, str]:
        parsed = _parse_outline(text)
        if isinstance(parsed, str):
            return None, parsed
        problems = _validate_outline(parsed, doc, analysis, catalog)
        if problems:
            return None, "; ".join(problems)
        return parsed, ""

    entries, problem = attempt(_chat(gateway, [ChatMessage("user", prompt)]))
    if entries is None:
        log.warning("outline invalid (%s), re-prompting once", problem)
        retry = f"{prompt}\n\nYour previous outline was invalid: {problem}. Answer again."
        entries, problem = attempt(_chat(gateway, [ChatMessage("user", retry)]))
        if entries is None:
            raise UnresolvableReference(f"outline validation failed: {problem}")
    if len(entries) > max_slides:
        log.warning("outline has %d entries, truncating to %d", len(entries), max_slides)
        entries = entries[:max_slides]
    return entries


# -- per-slide generation -----------------------------------------------------


def _schema_text(schema_entries: list[dict]) -> str:
    lines = [
        f"{e['category']} | {e['description']} | {e['content']}" for e in schema_entries
    ]
    return "\n".join(lines) or "(none)"


def _feedback_text(outcome) -> str:
    if isinstance(outcome, ActionSyntaxError):
        return f"Syntax error on line {outcome.line}: {outcome.reason}"
    return (
        f"Action on line {outcome.failed_line} failed "
        f"({outcome.error_kind.value}): {outcome.message}. "
        f"{outcome.prior_successes} earlier action(s) applied cleanly "
        "but everything was rolled back."
    )


def generate_slide(
    presentation: Presentation,
    entry: OutlineEntry,
    schema_entries: list[dict],
    reference_id: str,
    content_text: str,
    catalog=None,
    gateway: Gateway | None = None,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
) -> tuple[str, SlideTrace]:
    """Clone the reference and rewrite it; raises SlideFailed when every
    attempt (1 + retry_limit) is rejected."""
    html = render_slide_html(presentation.slide(reference_id)).html
    opening = prompts.fill(
        "edit",
        html=html,
        schema=_schema_text(schema_entries),
        content=content_text or "(none)",
        images=_images_text(catalog, entry.image_refs),
    )
    messages = [ChatMessage("user", opening)]
    trace = SlideTrace(title=entry.title)
    for attempt in range(retry_limit + 1):
        raw = _chat(gateway, list(messages))
        script_text = _strip_fences(raw)
        failure = None
        try:
            script = parse_action_script(script_text)
        except ActionSyntaxError as exc:
            failure = exc
        if failure is None:
            clone_id = presentation.clone_slide(reference_id)
            outcome = apply_actions(presentation.slide(clone_id), script, catalog=catalog)
            if isinstance(outcome, ExecutionFeedback):
                presentation.remove_slide(clone_id)
                failure = outcome
            else:
                trace.attempts.append({"script": script_text, "outcome": "Applied"})
                trace.final = "Success"
                return clone_id, trace
        detail = _feedback_text(failure)
        trace.attempts.append(
            {"script": script_text, "outcome": "Feedback", "detail": detail}
        )
        log.info("slide %r attempt %d rejected: %s", entry.title, attempt + 1, detail)
        messages.append(ChatMessage("assistant", raw))
        messages.append(
            ChatMessage("user", prompts.fill("edit_retry", feedback=detail))
        )
    raise SlideFailed(trace)


# -- whole runs ---------------------------------------------------------------


def _resolve_reference(entry: OutlineEntry, analysis: AnalysisResult) -> tuple[str, list[dict]]:
    group = (
        analysis.structural.get(entry.ref)
        if entry.ref_kind == "structural"
        else analysis.clusters.get(entry.ref)
    )
    if group is None:
        raise UnresolvableReference(
            f"outline references unknown {entry.ref_kind} {entry.ref!r}"
        )
    return group["representative"], group["schema"]


def _content_text(entry: OutlineEntry, doc: SourceDocument) -> str:
    parts = []
    for sid in entry.section_refs:
        section = doc.section(sid)
        if section is None:
            continue
        title = section.title or "(untitled)"
        parts.append(f"## {title}\n{section.body}" if section.body else f"## {title}")
    return "\n\n".join(parts)


def generate_presentation(
    doc: SourceDocument,
    reference: Presentation,
    analysis: AnalysisResult,
    gateway: Gateway,
    catalog=None,
    outline: list[OutlineEntry] | None = None,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
    max_slides: int = DEFAULT_MAX_SLIDES,
    run_dir: str | None = None,
) -> tuple[Presentation, list[OutlineEntry], GenerationTrace]:
    """Run the full outline -> slides pipeline.

    The reference deck is never mutated; all edits happen in a working
    copy. A partial deck is still produced (and saved) when some slides
    fail, so a Failed run leaves evidence behind.
    """
    if outline is None:
        outline = generate_outline(
            doc, analysis, gateway, catalog=catalog, max_slides=max_slides
        )
    if not outline:
        raise EmptyOutline("outline has no entries")

    work = copy.deepcopy(reference)
    trace = GenerationTrace(retry_limit=retry_limit)
    generated: list[str] = []
    for entry in outline:
        reference_id, schema_entries = _resolve_reference(entry, analysis)
        content = _content_text(entry, doc)
        try:
            slide_id, slide_trace = generate_slide(
                work,
                entry,
                schema_entries,
                reference_id,
                content,
                catalog=catalog,
                gateway=gateway,
                retry_limit=retry_limit,
            )
            generated.append(slide_id)
        except SlideFailed as exc:
            slide_trace = exc.trace
        trace.slides.append(slide_trace)

    work.retain_slides(generated)

    if run_dir is not None:
        write_run_directory(run_dir, work, outline, trace)
    return work, outline, trace


def write_run_directory(
    run_dir: str,
    deck: Presentation,
    outline: list[OutlineEntry],
    trace: GenerationTrace,
) -> None:
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "outline.json"), "w", encoding="utf-8") as fh:
        json.dump([e.to_json() for e in outline], fh, indent=1)
        fh.write("\n")
    with open(os.path.join(run_dir, "trace.json"), "w", encoding="utf-8") as fh:
        json.dump(trace.to_json(), fh, indent=1)
        fh.write("\n")
    save_presentation(deck, os.path.join(run_dir, "output.pptx"))
    manifest = {
        "final": "Success" if trace.succeeded else "Failed",
        "retry_limit": trace.retry_limit,
        "planned": len(outline),
        "generated": sum(1 for s in trace.slides if s.final == "Success"),
        "slides": [
            {"title": s.title, "final": s.final, "attempts": len(s.attempts)}
            for s in trace.slides
        ],
    }
    with open(os.path.join(run_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
