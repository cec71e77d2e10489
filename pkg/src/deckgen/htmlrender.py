"""Slide-to-HTML rendering.

The HTML is a prompt artifact, not a browser target: every editable span
and picture appears exactly once, addressed by integer indices via
data-eid / data-pid / data-sid attributes (DOM ids follow the scheme
e{i}-p{j}-s{k}). Geometry rides along as data-x/y/w/h in EMU. A masked
variant blanks content while keeping layout, for structure clustering.
"""

from __future__ import annotations

import html
from dataclasses import dataclass, field

from deckgen.pptx.model import Element, ElementKind, Slide
from deckgen.pptx.names import qn

# Surfaced run-style attributes; anything else is deliberately dropped.
_STYLE_ATTRS = ("b", "i", "sz")

MASK_CHAR = "a"
MASK_FILL = "#9e9e9e"


@dataclass
class RenderedSlide:
    html: str
    index_map: dict[tuple[int, int, int], str] = field(default_factory=dict)
    # Pictures and other index-addressable shapes use (eid, -1, -1).


def _geometry(el: Element) -> str:
    b = el.bbox
    return f' data-x="{b.x}" data-y="{b.y}" data-w="{b.w}" data-h="{b.h}"'


def _style_attrs(span) -> str:
    rpr = span._node.find(qn("a:rPr"))
    if rpr is None:
        return ""
    out = []
    for name in _STYLE_ATTRS:
        val = rpr.get(name)
        if val is not None:
            out.append(f' data-{name}="{html.escape(val, quote=True)}"')
    return "".join(out)


def _render(slide: Slide, masked: bool, preserve_length: bool) -> RenderedSlide:
    index_map: dict[tuple[int, int, int], str] = {}
    cx, cy = slide.presentation.slide_size if slide.presentation else (0, 0)
    lines = [f'<section class="slide" data-width="{cx}" data-height="{cy}">']
    for eid, el in enumerate(slide.elements):
        if el.kind is ElementKind.TEXT_FRAME:
            lines.append(f'<div class="text-frame" data-eid="{eid}"{_geometry(el)}>')
            for pid, para in enumerate(el.paragraphs):
                lines.append(f'<p data-pid="{pid}">')
                for sid, span in enumerate(para.spans):
                    ident = f"e{eid}-p{pid}-s{sid}"
                    index_map[(eid, pid, sid)] = ident
                    text = span.text
                    if masked:
                        text = MASK_CHAR * len(text) if preserve_length else MASK_CHAR
                    lines.append(
                        f'<span id="{ident}" data-eid="{eid}" data-pid="{pid}" '
                        f'data-sid="{sid}"{_style_attrs(span)}>{html.escape(text)}</span>'
                    )
                lines.append("</p>")
            lines.append("</div>")
        elif el.kind is ElementKind.PICTURE:
            ident = f"e{eid}"
            index_map[(eid, -1, -1)] = ident
            if masked:
                lines.append(
                    f'<div class="image-mask" id="{ident}" data-eid="{eid}"'
                    f'{_geometry(el)} style="background:{MASK_FILL}"></div>'
                )
            else:
                alt = html.escape(el.alt_text, quote=True)
                src = html.escape(el.image_id or "", quote=True)
                lines.append(
                    f'<img id="{ident}" data-eid="{eid}"{_geometry(el)} '
                    f'src="{src}" alt="{alt}"/>'
                )
        else:
            ident = f"e{eid}"
            index_map[(eid, -1, -1)] = ident
            lines.append(f'<div class="shape" id="{ident}" data-eid="{eid}"{_geometry(el)}></div>')
    lines.append("</section>")
    return RenderedSlide(html="\n".join(lines), index_map=index_map)


def render_slide_html(s: Slide) -> RenderedSlide:
    """Faithful render: text equals the model's text, pictures carry alt text."""
    return _render(s, masked=False, preserve_length=True)


def render_masked(s: Slide, preserve_length: bool = True) -> RenderedSlide:
    """Layout-only render: spans become runs of a placeholder character of
    the original length (a single character when preserve_length is off),
    pictures become solid-fill boxes with identical geometry."""
    return _render(s, masked=True, preserve_length=preserve_length)
