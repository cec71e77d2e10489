"""OOXML namespace and part-name helpers."""

from __future__ import annotations

import posixpath
import re
import xml.etree.ElementTree as ET
from io import BytesIO

NS = {
    "a": "http://schemas.openxmlformats.org/drawingml/2006/main",
    "p": "http://schemas.openxmlformats.org/presentationml/2006/main",
    "r": "http://schemas.openxmlformats.org/officeDocument/2006/relationships",
}

REL_NS = "http://schemas.openxmlformats.org/package/2006/relationships"
CT_NS = "http://schemas.openxmlformats.org/package/2006/content-types"

RT_OFFICE_DOCUMENT = (
    "http://schemas.openxmlformats.org/officeDocument/2006/relationships/officeDocument"
)
RT_SLIDE = "http://schemas.openxmlformats.org/officeDocument/2006/relationships/slide"
RT_IMAGE = "http://schemas.openxmlformats.org/officeDocument/2006/relationships/image"

CT_SLIDE = "application/vnd.openxmlformats-officedocument.presentationml.slide+xml"

XML_DECL = b'<?xml version="1.0" encoding="UTF-8" standalone="yes"?>\r\n'

# Extension -> MIME for media parts; content-type Defaults take precedence
# when the archive declares them.
MEDIA_MIME = {
    "png": "image/png",
    "jpg": "image/jpeg",
    "jpeg": "image/jpeg",
    "gif": "image/gif",
    "bmp": "image/bmp",
    "tiff": "image/tiff",
    "emf": "image/x-emf",
    "wmf": "image/x-wmf",
    "svg": "image/svg+xml",
}


def qn(tag: str) -> str:
    """Expand a prefixed tag ("a:t") to Clark notation ("{uri}t")."""
    prefix, local = tag.split(":")
    return "{%s}%s" % (NS[prefix], local)


def register_doc_namespaces(data: bytes) -> None:
    """Register every prefix declared in an XML part so serialization keeps them.

    ElementTree's registry maps uri -> prefix globally; harvesting per part
    keeps uncommon prefixes (a14, mc, ...) from degrading to ns0 on output.
    """
    try:
        for _, (prefix, uri) in ET.iterparse(BytesIO(data), events=("start-ns",)):
            if prefix:
                ET.register_namespace(prefix, uri)
    except ET.ParseError:
        pass  # the caller reports parse errors with part context


for _prefix, _uri in NS.items():
    ET.register_namespace(_prefix, _uri)


def resolve_target(base_part: str, target: str) -> str:
    """Resolve a relationship target relative to the part that declares it."""
    if target.startswith("/"):
        return target.lstrip("/")
    return posixpath.normpath(posixpath.join(posixpath.dirname(base_part), target))


def relative_target(base_part: str, part: str) -> str:
    """Inverse of resolve_target: express a part path relative to base_part."""
    return posixpath.relpath(part, posixpath.dirname(base_part))


def rels_part_for(part: str) -> str:
    return posixpath.join(posixpath.dirname(part), "_rels", posixpath.basename(part) + ".rels")


def part_extension(part: str) -> str:
    return posixpath.splitext(part)[1].lstrip(".").lower()


def numeric_suffix(part: str, stem: str) -> int | None:
    """slideN.xml / imageN.png style numbering; None when not matching."""
    m = re.fullmatch(rf"{re.escape(stem)}(\d+)\.[a-zA-Z0-9]+", posixpath.basename(part))
    return int(m.group(1)) if m else None
