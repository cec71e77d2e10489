"""Load and save .pptx archives.

Save is clone-and-patch: parts the caller never touched are copied from
the source archive byte for byte, mutated slides are re-serialized from
their trees, and bookkeeping parts (relationships, content types, the
slide list) are rewritten only when the deck structure actually changed.
Archive metadata is pinned so identical decks produce identical files.
"""

from __future__ import annotations

import posixpath
import xml.etree.ElementTree as ET
import zipfile
from xml.sax.saxutils import quoteattr

from deckgen.errors import DeckgenError
from deckgen.pptx.model import MediaEntry, Presentation, Rel, Slide
from deckgen.pptx.names import (
    CT_SLIDE,
    MEDIA_MIME,
    REL_NS,
    RT_IMAGE,
    RT_OFFICE_DOCUMENT,
    RT_SLIDE,
    XML_DECL,
    CT_NS,
    part_extension,
    qn,
    register_doc_namespaces,
    relative_target,
    rels_part_for,
    resolve_target,
)


class NotAZip(DeckgenError):
    pass


class MissingPresentationPart(DeckgenError):
    pass


class MalformedXml(DeckgenError):
    def __init__(self, part: str, detail: str):
        super().__init__(f"{part}: {detail}")
        self.part = part


class SerializationFailure(DeckgenError):
    pass


_REL_TAG = "{%s}Relationship" % REL_NS
_CT_DEFAULT = "{%s}Default" % CT_NS
_CT_OVERRIDE = "{%s}Override" % CT_NS


def _parse_xml(part: str, data: bytes) -> ET.Element:
    try:
        register_doc_namespaces(data)
        return ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedXml(part, str(exc)) from exc


def _parse_rels(part: str, data: bytes) -> dict[str, Rel]:
    root = _parse_xml(part, data)
    rels: dict[str, Rel] = {}
    for node in root.findall(_REL_TAG):
        rid = node.get("Id", "")
        rels[rid] = Rel(
            rid=rid,
            reltype=node.get("Type", ""),
            target=node.get("Target", ""),
            external=node.get("TargetMode") == "External",
        )
    return rels


def _render_rels(rels: dict[str, Rel]) -> bytes:
    parts = ['<Relationships xmlns=%s>' % quoteattr(REL_NS)]
    for rel in rels.values():
        attrs = "Id=%s Type=%s Target=%s" % (
            quoteattr(rel.rid),
            quoteattr(rel.reltype),
            quoteattr(rel.target),
        )
        if rel.external:
            attrs += ' TargetMode="External"'
        parts.append("<Relationship %s/>" % attrs)
    parts.append("</Relationships>")
    return XML_DECL + "".join(parts).encode("utf-8")


def load_presentation(path: str) -> Presentation:
    """Read a deck from disk.

    Raises NotAZip, MissingPresentationPart, or MalformedXml; the loaded
    object retains every archive entry so an untouched save round-trips.
    """
    try:
        zf = zipfile.ZipFile(path, "r")
    except (zipfile.BadZipFile, IsADirectoryError, FileNotFoundError) as exc:
        if isinstance(exc, zipfile.BadZipFile):
            raise NotAZip(f"{path}: not a zip archive") from exc
        raise NotAZip(f"{path}: {exc}") from exc
    with zf:
        entry_order = [i.filename for i in zf.infolist() if not i.is_dir()]
        entries = {name: zf.read(name) for name in entry_order}

    root_rels = entries.get("_rels/.rels")
    if root_rels is None:
        raise MissingPresentationPart(f"{path}: missing _rels/.rels")
    pres_part = None
    for rel in _parse_rels("_rels/.rels", root_rels).values():
        if rel.reltype == RT_OFFICE_DOCUMENT:
            # Root-rels targets are relative to the package root.
            pres_part = rel.target.lstrip("/")
            break
    if pres_part is None or pres_part not in entries:
        raise MissingPresentationPart(f"{path}: no presentation part")

    pres_bytes = entries[pres_part]
    pres_root = _parse_xml(pres_part, pres_bytes)
    pres_rels_name = rels_part_for(pres_part)
    if pres_rels_name not in entries:
        raise MissingPresentationPart(f"{path}: missing {pres_rels_name}")
    pres_rels = _parse_rels(pres_rels_name, entries[pres_rels_name])

    size_node = pres_root.find(qn("p:sldSz"))
    slide_size = (
        int(size_node.get("cx", "9144000")),
        int(size_node.get("cy", "6858000")),
    ) if size_node is not None else (9144000, 6858000)

    slides: list[Slide] = []
    sldid_by_part: dict[str, tuple[str, str]] = {}
    sldid_list = pres_root.find(qn("p:sldIdLst"))
    sldids = list(sldid_list) if sldid_list is not None else []
    for sldid in sldids:
        rid = sldid.get(qn("r:id"), "")
        rel = pres_rels.get(rid)
        if rel is None:
            raise MalformedXml(pres_part, f"slide id references unknown rel {rid!r}")
        part = resolve_target(pres_part, rel.target)
        data = entries.get(part)
        if data is None:
            raise MalformedXml(pres_part, f"slide part {part!r} missing from archive")
        rels_name = rels_part_for(part)
        rels_bytes = entries.get(rels_name)
        slide = Slide(
            slide_id=posixpath.splitext(posixpath.basename(part))[0],
            part_name=part,
            root=_parse_xml(part, data),
            rels=_parse_rels(rels_name, rels_bytes) if rels_bytes else {},
            source_bytes=data,
            source_rels_bytes=rels_bytes,
        )
        slides.append(slide)
        sldid_by_part[part] = (sldid.get("id", ""), rid)

    media = {
        name: MediaEntry(data, MEDIA_MIME.get(part_extension(name), "application/octet-stream"))
        for name, data in entries.items()
        if name.startswith("ppt/media/")
    }

    pres = Presentation(
        slides=slides,
        media=media,
        entries=entries,
        entry_order=entry_order,
        slide_size=slide_size,
        loaded_slide_ids=[s.id for s in slides],
    )
    pres.pres_part = pres_part
    pres.pres_rels = pres_rels
    pres.sldid_by_part = sldid_by_part
    return pres


def _content_types(pres: Presentation, slide_parts: list[str], media_parts: list[str]) -> bytes:
    """Patch [Content_Types].xml; returns original bytes when nothing changed."""
    original = pres.entries["[Content_Types].xml"]
    root = _parse_xml("[Content_Types].xml", original)
    defaults = {n.get("Extension", "").lower(): n.get("ContentType", "") for n in root.findall(_CT_DEFAULT)}
    overrides = {n.get("PartName", ""): n.get("ContentType", "") for n in root.findall(_CT_OVERRIDE)}

    changed = False
    loaded_parts = {
        "/" + n for n in pres.entries if n.startswith("ppt/slides/") and n.endswith(".xml")
    }
    keep_parts = {"/" + p for p in slide_parts}
    for part in sorted(loaded_parts - keep_parts):
        if part in overrides:
            del overrides[part]
            changed = True
    for part in slide_parts:
        key = "/" + part
        if key not in overrides:
            overrides[key] = CT_SLIDE
            changed = True
    for part in media_parts:
        ext = part_extension(part)
        if ext not in defaults:
            defaults[ext] = MEDIA_MIME.get(ext, "application/octet-stream")
            changed = True

    if not changed:
        return original
    parts = ["<Types xmlns=%s>" % quoteattr(CT_NS)]
    for ext, ct in defaults.items():
        parts.append("<Default Extension=%s ContentType=%s/>" % (quoteattr(ext), quoteattr(ct)))
    for part, ct in overrides.items():
        parts.append("<Override PartName=%s ContentType=%s/>" % (quoteattr(part), quoteattr(ct)))
    parts.append("</Types>")
    return XML_DECL + "".join(parts).encode("utf-8")


def save_presentation(pres: Presentation, path: str) -> None:
    """Write the deck back to disk.

    Untouched parts keep their original bytes; output is deterministic:
    saving an unchanged deck reproduces the archive it was loaded from.
    """
    slide_parts = [s.part_name for s in pres.slides]
    structure_changed = pres.slide_ids() != pres.loaded_slide_ids

    for slide in pres.slides:
        if slide.dirty:
            slide.drop_unreferenced_image_rels()

    # Media retention: anything referenced from a slide rel or from any
    # retained non-slide rels part stays; the rest is garbage collected.
    referenced: set[str] = set()
    for slide in pres.slides:
        for rel in slide.rels.values():
            if not rel.external:
                target = resolve_target(slide.part_name, rel.target)
                if target.startswith("ppt/media/"):
                    referenced.add(target)
    slide_rels_names = {rels_part_for(p) for p in slide_parts} | {
        rels_part_for(n) for n in pres.entries if n.startswith("ppt/slides/") and n.endswith(".xml")
    }
    for name, data in pres.entries.items():
        if not name.endswith(".rels") or name in slide_rels_names:
            continue
        for rel in _parse_rels(name, data).values():
            if not rel.external:
                base = posixpath.dirname(posixpath.dirname(name))
                source_part = posixpath.join(base, posixpath.basename(name)[: -len(".rels")])
                target = resolve_target(source_part, rel.target)
                if target.startswith("ppt/media/"):
                    referenced.add(target)
    media_keep = [m for m in pres.media if m in referenced]

    output: dict[str, bytes] = {}
    order: list[str] = []

    def put(name: str, data: bytes) -> None:
        if name not in output:
            order.append(name)
        output[name] = data

    removed_slide_parts = {
        n
        for n in pres.entries
        if n.startswith("ppt/slides/") and n.endswith(".xml") and n not in slide_parts
    }
    skip = removed_slide_parts | {rels_part_for(p) for p in removed_slide_parts}

    try:
        slide_payload: dict[str, bytes] = {}
        slide_rels_payload: dict[str, bytes] = {}
        for slide in pres.slides:
            if slide.dirty or slide.source_bytes is None:
                register_doc_namespaces(slide.source_bytes or b"")
                slide_payload[slide.part_name] = XML_DECL + ET.tostring(slide.root)
            else:
                slide_payload[slide.part_name] = slide.source_bytes
            if slide.rels or slide.source_rels_bytes is not None:
                if slide.rels_dirty or slide.source_rels_bytes is None:
                    slide_rels_payload[rels_part_for(slide.part_name)] = _render_rels(slide.rels)
                else:
                    slide_rels_payload[rels_part_for(slide.part_name)] = slide.source_rels_bytes

        pres_payload = pres.entries[pres.pres_part]
        pres_rels_payload = pres.entries[rels_part_for(pres.pres_part)]
        if structure_changed:
            pres_payload, pres_rels_payload = _rebuild_presentation_part(pres)

        ct_payload = _content_types(pres, slide_parts, media_keep)

        for name in pres.entry_order:
            if name in skip:
                continue
            if name.startswith("ppt/media/"):
                if name in media_keep:
                    put(name, pres.media[name].data)
                continue
            if name == "[Content_Types].xml":
                put(name, ct_payload)
            elif name == pres.pres_part:
                put(name, pres_payload)
            elif name == rels_part_for(pres.pres_part):
                put(name, pres_rels_payload)
            elif name in slide_payload:
                put(name, slide_payload[name])
            elif name in slide_rels_payload:
                put(name, slide_rels_payload[name])
            else:
                put(name, pres.entries[name])

        for slide in pres.slides:
            if slide.part_name not in output:
                put(slide.part_name, slide_payload[slide.part_name])
                rels_name = rels_part_for(slide.part_name)
                if rels_name in slide_rels_payload:
                    put(rels_name, slide_rels_payload[rels_name])
        for name in sorted(media_keep):
            if name not in output:
                put(name, pres.media[name].data)
    except (TypeError, ValueError, KeyError) as exc:
        raise SerializationFailure(f"could not serialize deck: {exc}") from exc

    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        for name in order:
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.create_system = 3
            info.external_attr = 0o644 << 16
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, output[name])


def _rebuild_presentation_part(pres: Presentation) -> tuple[bytes, bytes]:
    """Rewrite p:sldIdLst and the presentation rels for the current slide set."""
    register_doc_namespaces(pres.entries[pres.pres_part])
    root = ET.fromstring(pres.entries[pres.pres_part])

    rels: dict[str, Rel] = {
        rid: rel for rid, rel in pres.pres_rels.items() if rel.reltype != RT_SLIDE
    }
    old_slide_rels = {
        resolve_target(pres.pres_part, rel.target): rel
        for rel in pres.pres_rels.values()
        if rel.reltype == RT_SLIDE
    }

    taken_rids = {
        int(r[3:]) for r in pres.pres_rels if r.startswith("rId") and r[3:].isdigit()
    }
    taken_ids = {
        int(i) for i, _ in pres.sldid_by_part.values() if i.isdigit()
    }

    def fresh_rid() -> str:
        n = max(taken_rids, default=0) + 1
        taken_rids.add(n)
        return f"rId{n}"

    def fresh_sldid() -> str:
        n = max(taken_ids | {255}) + 1
        taken_ids.add(n)
        return str(n)

    entries: list[tuple[str, str, str]] = []  # (sldid, rid, part)
    for slide in pres.slides:
        old = old_slide_rels.get(slide.part_name)
        if old is not None:
            sldid = pres.sldid_by_part[slide.part_name][0] or fresh_sldid()
            rid = old.rid
            rels[rid] = old
        else:
            rid = fresh_rid()
            sldid = fresh_sldid()
            rels[rid] = Rel(rid, RT_SLIDE, relative_target(pres.pres_part, slide.part_name))
        entries.append((sldid, rid, slide.part_name))

    lst = root.find(qn("p:sldIdLst"))
    if lst is None:
        raise SerializationFailure("presentation part has no slide id list")
    for child in list(lst):
        lst.remove(child)
    for sldid, rid, _ in entries:
        node = ET.SubElement(lst, qn("p:sldId"))
        node.set("id", sldid)
        node.set(qn("r:id"), rid)

    # Rels render order: originals first (minus removed slides), new appended.
    ordered: dict[str, Rel] = {}
    for rid, rel in pres.pres_rels.items():
        if rid in rels:
            ordered[rid] = rels[rid]
    for rid, rel in rels.items():
        if rid not in ordered:
            ordered[rid] = rel

    return XML_DECL + ET.tostring(root), _render_rels(ordered)
