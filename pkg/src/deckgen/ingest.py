"""Input preparation: document parsing, image catalogs, dedup, bounds.

Documents are heading-structured markup (markdown-style # headings and
![alt](path) images). Section ids are hierarchical 1-based position
paths ("2.1" = first child of second top-level section); outline
entries reference sections and images by these ids.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field

from deckgen.errors import DeckgenError

log = logging.getLogger(__name__)

IMAGE_DEDUP_THRESHOLD = 0.85
SLIDE_DEDUP_THRESHOLD = 0.8
PAGE_BOUNDS = (12, 64)
CHAR_BOUNDS = (2048, 20480)


class EmptyDocument(DeckgenError):
    pass


class MissingEmbedding(DeckgenError):
    def __init__(self, ref: str):
        super().__init__(f"image {ref!r} has no embedding")
        self.ref = ref


class CountMismatch(DeckgenError):
    pass


@dataclass
class Section:
    sid: str
    title: str
    body: str = ""
    children: list["Section"] = field(default_factory=list)

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass
class CatalogImage:
    ref: str
    data: bytes = b""
    caption: str = ""
    ext: str = "png"
    embedding: list[float] | None = None
    path: str = ""


@dataclass
class SourceDocument:
    sections: list[Section] = field(default_factory=list)
    images: list[CatalogImage] = field(default_factory=list)

    @property
    def char_count(self) -> int:
        return sum(len(s.body) for s in self.all_sections())

    def all_sections(self) -> list[Section]:
        out = []
        for root in self.sections:
            out.extend(root.walk())
        return out

    def section_ids(self) -> list[str]:
        return [s.sid for s in self.all_sections()]

    def section(self, sid: str) -> Section | None:
        for s in self.all_sections():
            if s.sid == sid:
                return s
        return None


_HEADING = re.compile(r"^(#{1,6})\s+(.*?)\s*$")
_IMAGE = re.compile(r"^!\[(?P<alt>[^\]]*)\]\((?P<path>[^)]+)\)\s*$")
_CAPTION_LINE = re.compile(r"^[*_](?P<text>.+?)[*_]\s*$")


def parse_document(text: str, assets_dir: str | None = None) -> SourceDocument:
    """Build the section tree and collect image references.

    Image bytes come from assets_dir when the referenced file exists;
    an image keeps an empty caption until captioning fills it in.
    """
    if not text.strip():
        raise EmptyDocument("document has no content")

    doc = SourceDocument()
    # Stack of (level, section); level 0 holds the root list.
    stack: list[tuple[int, Section | None]] = [(0, None)]
    body_lines: list[str] = []
    image_n = 0

    def flush_body():
        nonlocal body_lines
        content = "\n".join(body_lines).strip()
        body_lines = []
        if not content:
            return
        target = stack[-1][1]
        if target is None:
            # Text before the first heading gets its own section.
            section = _new_section(doc, stack, 1, "")
            section.body = content
            stack.append((1, section))
        else:
            target.body = f"{target.body}\n{content}".strip() if target.body else content

    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        heading = _HEADING.match(line)
        image = _IMAGE.match(line.strip())
        if heading:
            flush_body()
            level = len(heading.group(1))
            while stack[-1][0] >= level:
                stack.pop()
            section = _new_section(doc, stack, level, heading.group(2))
            stack.append((level, section))
        elif image:
            image_n += 1
            caption = image.group("alt").strip()
            # A following emphasized line is a figure caption.
            j = i + 1
            while j < len(lines) and not lines[j].strip():
                j += 1
            if not caption and j < len(lines):
                cap = _CAPTION_LINE.match(lines[j].strip())
                if cap:
                    caption = cap.group("text").strip()
                    i = j
            path = image.group("path").strip()
            data = b""
            if assets_dir:
                full = os.path.join(assets_dir, path)
                if os.path.exists(full):
                    with open(full, "rb") as fh:
                        data = fh.read()
                else:
                    log.warning("image asset missing: %s", full)
            ext = os.path.splitext(path)[1].lstrip(".").lower() or "png"
            doc.images.append(
                CatalogImage(ref=f"img{image_n}", data=data, caption=caption, ext=ext, path=path)
            )
        else:
            body_lines.append(line)
        i += 1
    flush_body()

    if not doc.sections and not doc.images:
        raise EmptyDocument("document has no sections or images")
    return doc


def _new_section(doc, stack, level, title):
    parent = None
    for lvl, sec in reversed(stack):
        if sec is not None and lvl < level:
            parent = sec
            break
    prefix = f"{parent.sid}." if parent else ""
    # Position is counted among siblings of the same parent.
    siblings = parent.children if parent else doc.sections
    section = Section(sid=f"{prefix}{len(siblings) + 1}", title=title)
    siblings.append(section)
    return section


def serialize_sections(doc: SourceDocument) -> str:
    """Sections back to markup; inverse of parse_document on titles/bodies."""
    lines: list[str] = []

    def emit(section: Section, level: int):
        lines.append("#" * level + (f" {section.title}" if section.title else " "))
        if section.body:
            lines.append(section.body)
        for child in section.children:
            emit(child, level + 1)

    for root in doc.sections:
        emit(root, 1)
    return "\n".join(lines)


class ImageCatalog:
    """Ordered ref -> image store used for replace_image resolution."""

    def __init__(self, images: list[CatalogImage] | None = None):
        self.entries: dict[str, CatalogImage] = {}
        for img in images or []:
            if img.ref in self.entries:
                raise ValueError(f"duplicate image ref {img.ref!r}")
            self.entries[img.ref] = img

    def resolve(self, ref: str) -> CatalogImage | None:
        return self.entries.get(ref)

    def refs(self) -> list[str]:
        return list(self.entries)

    def images(self) -> list[CatalogImage]:
        return list(self.entries.values())

    def ensure_captions(self, gateway, prompt: str) -> None:
        """Fill empty captions via the vision provider; cached in place."""
        for img in self.entries.values():
            if not img.caption and img.data:
                img.caption = gateway.caption_image(img.data, prompt).strip()

    def ensure_embeddings(self, gateway) -> None:
        pending = [img for img in self.entries.values() if img.embedding is None and img.data]
        if not pending:
            return
        vectors = gateway.embed_image([img.data for img in pending])
        for img, vec in zip(pending, vectors):
            img.embedding = list(vec)

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        meta = []
        for img in self.entries.values():
            filename = f"{img.ref}.{img.ext}"
            if img.data:
                with open(os.path.join(directory, filename), "wb") as fh:
                    fh.write(img.data)
            meta.append(
                {
                    "ref": img.ref,
                    "caption": img.caption,
                    "ext": img.ext,
                    "embedding": img.embedding,
                    "file": filename if img.data else None,
                    "path": img.path,
                }
            )
        with open(os.path.join(directory, "catalog.json"), "w", encoding="utf-8") as fh:
            json.dump({"images": meta}, fh, indent=1)

    @classmethod
    def load(cls, directory: str) -> "ImageCatalog":
        with open(os.path.join(directory, "catalog.json"), encoding="utf-8") as fh:
            doc = json.load(fh)
        images = []
        for meta in doc["images"]:
            data = b""
            if meta.get("file"):
                with open(os.path.join(directory, meta["file"]), "rb") as fh:
                    data = fh.read()
            images.append(
                CatalogImage(
                    ref=meta["ref"],
                    data=data,
                    caption=meta.get("caption", ""),
                    ext=meta.get("ext", "png"),
                    embedding=meta.get("embedding"),
                    path=meta.get("path", ""),
                )
            )
        return cls(images)


def _cosine(u, v) -> float:
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(x * x for x in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return sum(x * y for x, y in zip(u, v)) / (nu * nv)


def dedup_images(catalog: ImageCatalog, threshold: float = IMAGE_DEDUP_THRESHOLD) -> ImageCatalog:
    """Greedy scan in catalog order; drop anything too close to a kept entry."""
    kept: list[CatalogImage] = []
    for img in catalog.images():
        if img.embedding is None:
            raise MissingEmbedding(img.ref)
        if any(_cosine(img.embedding, k.embedding) > threshold for k in kept):
            log.info("dedup_images dropping %s", img.ref)
            continue
        kept.append(img)
    return ImageCatalog(kept)


def dedup_slides(
    presentation,
    text_embeddings: list[list[float]],
    threshold: float = SLIDE_DEDUP_THRESHOLD,
    compare_kept: bool = True,
):
    """Drop a slide when it is too similar to the slide before it.

    compare_kept=True (default) compares against the nearest preceding
    kept slide; False compares against the immediate original predecessor.
    """
    slides = presentation.slides
    if len(text_embeddings) != len(slides):
        raise CountMismatch(
            f"{len(slides)} slides but {len(text_embeddings)} embeddings"
        )
    keep_ids: list[str] = []
    prev_kept: int | None = None
    for i, slide in enumerate(slides):
        if i == 0:
            keep_ids.append(slide.id)
            prev_kept = 0
            continue
        anchor = prev_kept if compare_kept else i - 1
        sim = _cosine(text_embeddings[i], text_embeddings[anchor])
        if sim > threshold:
            log.info("dedup_slides dropping %s (similarity %.3f)", slide.id, sim)
            continue
        keep_ids.append(slide.id)
        prev_kept = i
    presentation.retain_slides(keep_ids)
    return presentation


def check_sampling_bounds(doc: SourceDocument | None, presentation=None) -> dict:
    """Flag inputs outside the curation ranges; callers warn, never fail."""
    report: dict = {"warnings": []}
    if presentation is not None:
        pages = len(presentation.slides)
        low, high = PAGE_BOUNDS
        report["pages"] = pages
        report["page_bounds"] = [low, high]
        report["pages_ok"] = low <= pages <= high
        if not report["pages_ok"]:
            report["warnings"].append(
                f"deck has {pages} slides, outside [{low}, {high}]"
            )
    if doc is not None:
        chars = doc.char_count
        low, high = CHAR_BOUNDS
        report["chars"] = chars
        report["char_bounds"] = [low, high]
        report["chars_ok"] = low <= chars <= high
        if not report["chars_ok"]:
            report["warnings"].append(
                f"document has {chars} characters, outside [{low}, {high}]"
            )
    report["ok"] = not report["warnings"]
    return report
