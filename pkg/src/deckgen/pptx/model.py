"""Typed in-memory model of a PPTX deck.

The model is a set of views over each slide's parsed XML tree: mutations
edit the tree in place (clone-and-patch), never re-synthesize markup, so
styling the engine does not explicitly touch survives byte-for-byte.

A Presentation is a single-writer value: concurrent reads are safe,
mutations require exclusive access.
"""

from __future__ import annotations

import copy
import hashlib
import posixpath
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum

from deckgen.errors import DeckgenError
from deckgen.pptx.names import MEDIA_MIME, RT_IMAGE, qn, relative_target, resolve_target

EMU_PER_INCH = 914400


class UnknownSlide(DeckgenError):
    def __init__(self, slide_id: str):
        super().__init__(f"no slide with id {slide_id!r}")
        self.slide_id = slide_id


class ElementKind(Enum):
    TEXT_FRAME = "text_frame"
    PICTURE = "picture"
    OTHER = "other"


@dataclass(frozen=True)
class Rel:
    rid: str
    reltype: str
    target: str  # as written in the part (usually relative)
    external: bool = False


@dataclass
class MediaEntry:
    data: bytes
    mime: str

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


@dataclass(frozen=True)
class BBox:
    """Position and size in EMU. Zero everywhere when the shape inherits
    geometry from its layout."""

    x: int = 0
    y: int = 0
    w: int = 0
    h: int = 0


class Span:
    """View over one text run (``a:r``)."""

    def __init__(self, slide: "Slide", node: ET.Element):
        self._slide = slide
        self._node = node

    @property
    def text(self) -> str:
        t = self._node.find(qn("a:t"))
        return t.text or "" if t is not None else ""

    @text.setter
    def text(self, value: str) -> None:
        t = self._node.find(qn("a:t"))
        if t is None:
            t = ET.SubElement(self._node, qn("a:t"))
        t.text = value
        self._slide.mark_dirty()

    @property
    def style_xml(self) -> bytes:
        """Serialized run properties; the opaque styling blob."""
        rpr = self._node.find(qn("a:rPr"))
        return ET.tostring(rpr) if rpr is not None else b""


class Paragraph:
    """View over one ``a:p``."""

    def __init__(self, slide: "Slide", node: ET.Element):
        self._slide = slide
        self._node = node

    @property
    def spans(self) -> list[Span]:
        return [Span(self._slide, r) for r in self._node.findall(qn("a:r"))]

    @property
    def style_xml(self) -> bytes:
        ppr = self._node.find(qn("a:pPr"))
        return ET.tostring(ppr) if ppr is not None else b""

    def remove_span(self, index: int) -> None:
        runs = self._node.findall(qn("a:r"))
        self._node.remove(runs[index])
        self._slide.mark_dirty()

    def text(self) -> str:
        return " ".join(s.text for s in self.spans)


class Element:
    """View over one shape in the slide's shape tree."""

    def __init__(self, slide: "Slide", node: ET.Element):
        self._slide = slide
        self._node = node

    @property
    def kind(self) -> ElementKind:
        tag = self._node.tag
        if tag == qn("p:sp") and self._node.find(qn("p:txBody")) is not None:
            return ElementKind.TEXT_FRAME
        if tag == qn("p:pic") and self._embed_rid() is not None:
            return ElementKind.PICTURE
        return ElementKind.OTHER

    @property
    def bbox(self) -> BBox:
        xfrm = (
            self._node.find(f"{qn('p:spPr')}/{qn('a:xfrm')}")
            or self._node.find(qn("p:xfrm"))
            or self._node.find(f".//{qn('a:xfrm')}")
        )
        if xfrm is None:
            return BBox()
        off = xfrm.find(qn("a:off"))
        ext = xfrm.find(qn("a:ext"))
        x = int(off.get("x", "0")) if off is not None else 0
        y = int(off.get("y", "0")) if off is not None else 0
        w = int(ext.get("cx", "0")) if ext is not None else 0
        h = int(ext.get("cy", "0")) if ext is not None else 0
        return BBox(x, y, w, h)

    @property
    def xml(self) -> bytes:
        return ET.tostring(self._node)

    # -- text frames ----------------------------------------------------

    @property
    def paragraphs(self) -> list[Paragraph]:
        body = self._node.find(qn("p:txBody"))
        if body is None:
            return []
        return [Paragraph(self._slide, p) for p in body.findall(qn("a:p"))]

    def remove_paragraph(self, index: int) -> None:
        body = self._node.find(qn("p:txBody"))
        paras = body.findall(qn("a:p"))
        body.remove(paras[index])
        self._slide.mark_dirty()

    def clone_paragraph(self, index: int) -> Paragraph:
        """Deep-copy paragraph ``index`` and insert the copy right after it."""
        body = self._node.find(qn("p:txBody"))
        paras = body.findall(qn("a:p"))
        source = paras[index]
        dup = copy.deepcopy(source)
        body.insert(list(body).index(source) + 1, dup)
        self._slide.mark_dirty()
        return Paragraph(self._slide, dup)

    def text(self) -> str:
        """Spans joined by single spaces, paragraphs by newlines."""
        return "\n".join(p.text() for p in self.paragraphs)

    # -- pictures --------------------------------------------------------

    def _blip(self) -> ET.Element | None:
        return self._node.find(f"{qn('p:blipFill')}/{qn('a:blip')}")

    def _embed_rid(self) -> str | None:
        blip = self._blip()
        return blip.get(qn("r:embed")) if blip is not None else None

    @property
    def image_id(self) -> str | None:
        """Media part name for the embedded picture, or None."""
        rid = self._embed_rid()
        if rid is None:
            return None
        rel = self._slide.rels.get(rid)
        if rel is None or rel.external:
            return None
        return resolve_target(self._slide.part_name, rel.target)

    @property
    def alt_text(self) -> str:
        cnvpr = self._node.find(f"{qn('p:nvPicPr')}/{qn('p:cNvPr')}")
        if cnvpr is None:
            cnvpr = self._node.find(f".//{qn('p:cNvPr')}")
        return cnvpr.get("descr", "") if cnvpr is not None else ""

    def set_image(self, image_id: str, alt_text: str | None = None) -> None:
        """Point this picture at a media part, reusing or adding a slide rel."""
        rid = self._slide.rel_for_media(image_id)
        blip = self._blip()
        blip.set(qn("r:embed"), rid)
        if alt_text is not None:
            cnvpr = self._node.find(f"{qn('p:nvPicPr')}/{qn('p:cNvPr')}")
            if cnvpr is not None:
                cnvpr.set("descr", alt_text)
        self._slide.mark_dirty()


class Slide:
    """One slide: a parsed XML tree plus its relationship table.

    ``source_bytes`` holds the original part payload; it is written back
    verbatim at save time unless the slide was mutated.
    """

    def __init__(
        self,
        slide_id: str,
        part_name: str,
        root: ET.Element,
        rels: dict[str, Rel],
        source_bytes: bytes | None = None,
        source_rels_bytes: bytes | None = None,
    ):
        self.id = slide_id
        self.part_name = part_name
        self.root = root
        self.rels = rels
        self.source_bytes = source_bytes
        self.source_rels_bytes = source_rels_bytes
        self.dirty = source_bytes is None
        self.rels_dirty = False
        self.presentation: "Presentation | None" = None

    def mark_dirty(self) -> None:
        self.dirty = True

    def _sp_tree(self) -> ET.Element:
        return self.root.find(f"{qn('p:cSld')}/{qn('p:spTree')}")

    _NON_SHAPE_TAGS = frozenset(
        ("p:nvGrpSpPr", "p:grpSpPr", "p:extLst", "p:contentPart")
    )

    @property
    def elements(self) -> list[Element]:
        skip = {qn(t) for t in self._NON_SHAPE_TAGS}
        return [
            Element(self, node)
            for node in self._sp_tree()
            if node.tag not in skip
        ]

    def remove_element(self, index: int) -> None:
        tree = self._sp_tree()
        tree.remove(self.elements[index]._node)
        self.mark_dirty()

    def text(self) -> str:
        """Deterministic text extraction: span texts joined by spaces,
        paragraphs and elements by newlines."""
        parts = [
            e.text() for e in self.elements if e.kind is ElementKind.TEXT_FRAME
        ]
        return "\n".join(p for p in parts if p)

    # -- relationship management ------------------------------------------

    def referenced_rids(self) -> set[str]:
        """Every r: attribute value in the slide XML."""
        rids: set[str] = set()
        attrs = (qn("r:embed"), qn("r:link"), qn("r:id"))
        for node in self.root.iter():
            for attr in attrs:
                val = node.get(attr)
                if val:
                    rids.add(val)
        return rids

    def rel_for_media(self, image_id: str) -> str:
        """rId of an existing relationship to ``image_id``; adds one if absent."""
        for rel in self.rels.values():
            if not rel.external and resolve_target(self.part_name, rel.target) == image_id:
                return rel.rid
        rid = self._fresh_rid()
        self.rels[rid] = Rel(rid, RT_IMAGE, relative_target(self.part_name, image_id))
        self.rels_dirty = True
        return rid

    def _fresh_rid(self) -> str:
        taken = {
            int(r[3:]) for r in self.rels if r.startswith("rId") and r[3:].isdigit()
        }
        n = max(taken, default=0) + 1
        return f"rId{n}"

    def drop_unreferenced_image_rels(self) -> None:
        """GC image relationships no longer referenced by the slide XML."""
        used = self.referenced_rids()
        doomed = [
            rid
            for rid, rel in self.rels.items()
            if rel.reltype == RT_IMAGE and rid not in used
        ]
        for rid in doomed:
            del self.rels[rid]
            self.rels_dirty = True

    # -- snapshot / restore (action-script atomicity) ----------------------

    def snapshot(self) -> tuple:
        return (copy.deepcopy(self.root), dict(self.rels), self.dirty, self.rels_dirty)

    def restore(self, state: tuple) -> None:
        self.root, self.rels, self.dirty, self.rels_dirty = state


class Presentation:
    """A deck: ordered slides, media store, and retained archive entries."""

    def __init__(
        self,
        slides: list[Slide],
        media: dict[str, MediaEntry],
        entries: dict[str, bytes],
        entry_order: list[str],
        slide_size: tuple[int, int],
        loaded_slide_ids: list[str],
    ):
        self.slides = slides
        self.media = media
        self.entries = entries
        self.entry_order = entry_order
        self.slide_size = slide_size
        self.loaded_slide_ids = loaded_slide_ids
        self._media_by_digest = {e.digest: name for name, e in media.items()}
        for s in slides:
            s.presentation = self

    def slide(self, slide_id: str) -> Slide:
        for s in self.slides:
            if s.id == slide_id:
                return s
        raise UnknownSlide(slide_id)

    def slide_ids(self) -> list[str]:
        return [s.id for s in self.slides]

    def clone_slide(self, slide_id: str) -> str:
        """Deep-copy a slide; the copy is appended and the caller may reorder."""
        source = self.slide(slide_id)
        n = self._fresh_slide_number()
        clone = Slide(
            slide_id=f"slide{n}",
            part_name=f"ppt/slides/slide{n}.xml",
            root=copy.deepcopy(source.root),
            rels=dict(source.rels),
        )
        clone.presentation = self
        self.slides.append(clone)
        return clone.id

    def remove_slide(self, slide_id: str) -> None:
        self.slides.remove(self.slide(slide_id))

    def retain_slides(self, slide_ids: list[str]) -> None:
        """Keep exactly these slides, in this order."""
        self.slides = [self.slide(sid) for sid in slide_ids]

    def _fresh_slide_number(self) -> int:
        taken = set()
        for s in self.slides:
            tail = s.id.removeprefix("slide")
            if tail.isdigit():
                taken.add(int(tail))
        for name in self.entries:
            if name.startswith("ppt/slides/slide"):
                tail = posixpath.basename(name).removeprefix("slide").removesuffix(".xml")
                if tail.isdigit():
                    taken.add(int(tail))
        return max(taken, default=0) + 1

    def add_media(self, data: bytes, ext: str = "png") -> str:
        """Store image bytes, one media entry per distinct content hash."""
        digest = hashlib.sha256(data).hexdigest()
        existing = self._media_by_digest.get(digest)
        if existing is not None:
            return existing
        n = 1 + max(
            (
                num
                for name in self.media
                if (num := _image_number(name)) is not None
            ),
            default=0,
        )
        name = f"ppt/media/image{n}.{ext}"
        self.media[name] = MediaEntry(data, MEDIA_MIME.get(ext, "application/octet-stream"))
        self._media_by_digest[digest] = name
        return name


def _image_number(part: str) -> int | None:
    stem = posixpath.splitext(posixpath.basename(part))[0]
    return int(stem[5:]) if stem.startswith("image") and stem[5:].isdigit() else None


def structural_equal(a: Presentation, b: Presentation) -> bool:
    """Field-by-field equality including preserved XML payloads."""
    if a.slide_ids() != b.slide_ids():
        return False
    for sa, sb in zip(a.slides, b.slides):
        if ET.tostring(sa.root) != ET.tostring(sb.root):
            return False
        if sa.rels != sb.rels:
            return False
    if a.slide_size != b.slide_size:
        return False
    if set(a.media) != set(b.media):
        return False
    return all(a.media[k].data == b.media[k].data for k in a.media)
