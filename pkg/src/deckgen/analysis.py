"""Stage I: slide roles, layout clustering, content schemas.

Structural slides (opening, table of contents, section headers, ending)
are grouped by label; content slides are clustered by the similarity of
their masked layouts. Each group gets a content schema extracted from a
representative slide so Stage II knows what belongs where.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np

from deckgen import prompts
from deckgen.errors import DeckgenError
from deckgen.gateway import ChatMessage, ChatRequest, DimensionMismatch, Gateway
from deckgen.htmlrender import render_masked, render_slide_html
from deckgen.pptx import Presentation, save_presentation
from deckgen.pptx.model import ElementKind

log = logging.getLogger(__name__)

STRUCTURAL_LABELS = ("opening", "table-of-contents", "section-header", "ending")
ROLE_LABELS = STRUCTURAL_LABELS + ("content",)

DEFAULT_THETA = 0.65
EMBED_DIM = 64
_GRID = 4  # 4x4 cells x 4 channels = 64
_TEXT_LEN_CAP = 200


class UnparseableResponse(DeckgenError):
    pass


class ZeroNormVector(DeckgenError):
    def __init__(self, index: int):
        super().__init__(f"vector {index} has zero norm")
        self.index = index


class RasterizerFailed(DeckgenError):
    pass


@dataclass(frozen=True)
class SlideRole:
    slide_id: str
    label: str  # one of ROLE_LABELS

    @property
    def structural(self) -> bool:
        return self.label != "content"


@dataclass
class SimilarityMatrix:
    n: int
    values: np.ndarray  # symmetric, zero diagonal, entries in [-1, 1]


@dataclass
class ClusterSet:
    clusters: list[set[int]]
    unclustered: set[int]
    mode: str  # "literal" | "single-link"


@dataclass
class SlideSchema:
    entries: list[dict] = field(default_factory=list)  # {category, description, content}


def _chat(gateway: Gateway, text: str, role: str = "lm") -> str:
    ep = gateway.endpoints.get(role)
    model = ep.model if ep else "default"
    req = ChatRequest(model=model, messages=[ChatMessage("user", text)])
    return gateway.complete(req, role=role)


def _response_lines(raw: str) -> list[str]:
    """Non-empty lines with any markdown fence wrapper stripped."""
    lines = [ln.strip() for ln in raw.strip().splitlines()]
    lines = [ln for ln in lines if ln]
    if lines and lines[0].startswith("```"):
        lines = lines[1:]
    if lines and lines[-1].startswith("```"):
        lines = lines[:-1]
    return lines


def classify_roles(presentation: Presentation, gateway: Gateway) -> list[SlideRole]:
    """One role per slide; the provider answers from slide text only."""
    slide_lines = []
    for i, slide in enumerate(presentation.slides, start=1):
        text = " ".join(slide.text().split())[:300]
        slide_lines.append(f"{i}. {text or '(no text)'}")
    prompt = prompts.fill("roles", slide_lines="\n".join(slide_lines))

    def parse(raw: str) -> list[SlideRole] | str:
        lines = _response_lines(raw)
        if len(lines) != len(presentation.slides):
            return f"expected {len(presentation.slides)} lines, got {len(lines)}"
        roles = []
        for slide, line in zip(presentation.slides, lines):
            label = line.split(".", 1)[-1].strip().lower() if line[:1].isdigit() else line.lower()
            label = label.strip(" .")
            if label not in ROLE_LABELS:
                return f"label {label!r} is not one of {', '.join(ROLE_LABELS)}"
            roles.append(SlideRole(slide.id, label))
        return roles

    raw = _chat(gateway, prompt)
    parsed = parse(raw)
    if isinstance(parsed, str):
        log.warning("role labels invalid (%s), re-prompting once", parsed)
        retry = f"{prompt}\n\nYour previous answer was invalid: {parsed}. Answer again."
        parsed = parse(_chat(gateway, retry))
        if isinstance(parsed, str):
            raise UnparseableResponse(f"role classification failed: {parsed}")
    return parsed


def build_similarity_matrix(vectors) -> SimilarityMatrix:
    arr = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not arr:
        return SimilarityMatrix(0, np.zeros((0, 0)))
    dim = arr[0].shape
    for i, v in enumerate(arr):
        if v.shape != dim:
            raise DimensionMismatch(f"vector {i} has shape {v.shape}, expected {dim}")
    norms = [float(np.linalg.norm(v)) for v in arr]
    for i, n in enumerate(norms):
        if n == 0.0:
            raise ZeroNormVector(i)
    unit = np.stack([v / n for v, n in zip(arr, norms)])
    values = np.clip(unit @ unit.T, -1.0, 1.0)
    values = (values + values.T) / 2.0
    np.fill_diagonal(values, 0.0)
    return SimilarityMatrix(len(arr), values)


def cluster_slides(
    matrix: SimilarityMatrix, theta: float = DEFAULT_THETA, mode: str = "single-link"
) -> ClusterSet:
    """Greedy pairwise clustering over a similarity matrix.

    literal mode transcribes the published procedure exactly: after
    matching (i, j), rows and columns i and j are zeroed wholesale,
    which makes the merge branch unreachable and every cluster size 2.
    single-link zeroes only the matched pair, so clusters can grow;
    when i and j already sit in different clusters those clusters are
    unioned (disjointness is an output invariant). Argmax ties break
    on the lowest (i, j) pair.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    if mode not in ("literal", "single-link"):
        raise ValueError(f"unknown mode {mode!r}")
    s = matrix.values.copy()
    n = matrix.n
    clusters: list[set[int]] = []
    while True:
        best = None
        best_val = -np.inf
        for i in range(n):
            for j in range(n):
                if i != j and s[i, j] > best_val:
                    best_val = s[i, j]
                    best = (i, j)
        if best is None or best_val < theta:
            break
        i, j = best
        if j < i:
            i, j = j, i
        ci = next((k for k, c in enumerate(clusters) if i in c), None)
        cj = next((k for k, c in enumerate(clusters) if j in c), None)
        if ci is None and cj is None:
            clusters.append({i, j})
        elif ci is None:
            clusters[cj].update((i, j))
        elif cj is None:
            clusters[ci].update((i, j))
        elif ci != cj:
            lo, hi = min(ci, cj), max(ci, cj)
            clusters[lo] |= clusters[hi]
            del clusters[hi]
        if mode == "literal":
            s[i, :] = 0.0
            s[:, i] = 0.0
            s[j, :] = 0.0
            s[:, j] = 0.0
        else:
            s[i, j] = 0.0
            s[j, i] = 0.0
    clustered = set().union(*clusters) if clusters else set()
    return ClusterSet(
        clusters=clusters,
        unclustered=set(range(n)) - clustered,
        mode=mode,
    )


# -- embeddings --------------------------------------------------------------


def layout_vector(slide) -> np.ndarray:
    """Deterministic 64-dim layout descriptor of a masked slide.

    A 4x4 grid over the slide; each cell holds four channels: coverage
    by text frames, pictures, and other shapes, plus a text-amount
    channel weighted by capped character count. Content-invariant for
    fixed text lengths.
    """
    vec = np.zeros(EMBED_DIM)
    pres = slide.presentation
    width, height = pres.slide_size if pres else (9144000, 6858000)
    for el in slide.elements:
        box = el.bbox
        if box.w <= 0 or box.h <= 0 or width <= 0 or height <= 0:
            continue
        x0, y0 = box.x / width, box.y / height
        x1, y1 = (box.x + box.w) / width, (box.y + box.h) / height
        area = (x1 - x0) * (y1 - y0)
        if area <= 0:
            continue
        kind_channel = {
            ElementKind.TEXT_FRAME: 0,
            ElementKind.PICTURE: 1,
            ElementKind.OTHER: 2,
        }[el.kind]
        text_weight = 0.0
        if el.kind is ElementKind.TEXT_FRAME:
            chars = sum(len(s.text) for p in el.paragraphs for s in p.spans)
            text_weight = min(1.0, chars / _TEXT_LEN_CAP)
        for gy in range(_GRID):
            for gx in range(_GRID):
                cx0, cy0 = gx / _GRID, gy / _GRID
                cx1, cy1 = (gx + 1) / _GRID, (gy + 1) / _GRID
                w = max(0.0, min(x1, cx1) - max(x0, cx0))
                h = max(0.0, min(y1, cy1) - max(y0, cy0))
                frac = (w * h) / area
                if frac == 0.0:
                    continue
                cell = (gy * _GRID + gx) * 4
                vec[cell + kind_channel] += frac
                vec[cell + 3] += frac * text_weight
    return vec


def _mask_deck_copy(presentation: Presentation, slide_ids: list[str]) -> Presentation:
    """In-memory masked duplicate used only for rasterization."""
    import copy as _copy

    masked = _copy.deepcopy(presentation)
    solid = _solid_png()
    for sid in slide_ids:
        slide = masked.slide(sid)
        for el in slide.elements:
            if el.kind is ElementKind.TEXT_FRAME:
                for para in el.paragraphs:
                    for span in para.spans:
                        span.text = "a" * len(span.text)
            elif el.kind is ElementKind.PICTURE:
                media_id = masked.add_media(solid, "png")
                el.set_image(media_id)
    masked.retain_slides(slide_ids)
    return masked


def _solid_png() -> bytes:
    import io

    from PIL import Image

    buf = io.BytesIO()
    Image.new("RGB", (4, 4), (158, 158, 158)).save(buf, format="PNG")
    return buf.getvalue()


def rasterize_deck(presentation: Presentation, command: str, workdir: str) -> list[bytes]:
    """Run an external converter; expects one PNG per slide in {outdir}."""
    deck_path = os.path.join(workdir, "deck.pptx")
    outdir = os.path.join(workdir, "png")
    os.makedirs(outdir, exist_ok=True)
    save_presentation(presentation, deck_path)
    argv = [
        part.replace("{input}", deck_path).replace("{outdir}", outdir)
        for part in shlex.split(command)
    ]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RasterizerFailed(
            f"{argv[0]} exited {proc.returncode}: {proc.stderr.strip()[:200]}"
        )
    images = sorted(
        f for f in os.listdir(outdir) if f.lower().endswith(".png")
    )
    if len(images) != len(presentation.slides):
        raise RasterizerFailed(
            f"expected {len(presentation.slides)} PNGs, found {len(images)}"
        )
    out = []
    for name in images:
        with open(os.path.join(outdir, name), "rb") as fh:
            out.append(fh.read())
    return out


def embed_content_slides(
    presentation: Presentation,
    roles: list[SlideRole],
    rasterizer: str | None = None,
    gateway: Gateway | None = None,
) -> list[np.ndarray]:
    """One embedding per content slide, in deck order.

    With a rasterizer command configured, masked slides are exported to
    images and embedded by the provider; otherwise the deterministic
    geometry descriptor is used.
    """
    content_ids = [r.slide_id for r in roles if not r.structural]
    if not content_ids:
        return []
    if rasterizer:
        if gateway is None:
            raise ValueError("rasterizer path requires a gateway for image embeddings")
        masked = _mask_deck_copy(presentation, content_ids)
        with tempfile.TemporaryDirectory(prefix="deckgen-raster-") as workdir:
            pngs = rasterize_deck(masked, rasterizer, workdir)
        vectors = gateway.embed_image(pngs)
        return [np.asarray(v, dtype=np.float64) for v in vectors]
    return [layout_vector(presentation.slide(sid)) for sid in content_ids]


# -- schemas -----------------------------------------------------------------


def representative_slide(presentation: Presentation, slide_ids: list[str]) -> str:
    """The member with median element count; ties go to deck order."""
    order = {sid: k for k, sid in enumerate(presentation.slide_ids())}
    ordered = sorted(
        slide_ids,
        key=lambda sid: (len(presentation.slide(sid).elements), order[sid]),
    )
    return ordered[(len(ordered) - 1) // 2]


def extract_schema(
    cluster_ids: list[str],
    presentation: Presentation,
    gateway: Gateway,
    representative: str | None = None,
) -> SlideSchema:
    if not cluster_ids:
        raise ValueError("schema extraction needs a nonempty cluster")
    rep = representative or representative_slide(presentation, cluster_ids)
    html = render_slide_html(presentation.slide(rep)).html
    prompt = prompts.fill("schema", html=html)

    def parse(raw: str) -> SlideSchema | str:
        entries = []
        seen = set()
        for line in _response_lines(raw):
            parts = [p.strip() for p in line.split("|")]
            if len(parts) != 3:
                return f"line {line!r} is not 'category | description | content'"
            category, description, content = parts
            if not category:
                return "empty category"
            if category in seen:
                return f"duplicate category {category!r}"
            seen.add(category)
            entries.append(
                {"category": category, "description": description, "content": content}
            )
        if not entries:
            return "no schema entries"
        return SlideSchema(entries)

    raw = _chat(gateway, prompt)
    parsed = parse(raw)
    if isinstance(parsed, str):
        log.warning("schema invalid (%s), re-prompting once", parsed)
        retry = f"{prompt}\n\nYour previous answer was invalid: {parsed}. Answer again."
        parsed = parse(_chat(gateway, retry))
        if isinstance(parsed, str):
            raise UnparseableResponse(f"schema extraction failed: {parsed}")
    return parsed


# -- orchestration -----------------------------------------------------------


@dataclass
class AnalysisResult:
    roles: list[SlideRole]
    clusters: dict  # cluster-id -> {slides, representative, schema}
    structural: dict  # label -> {slides, representative, schema}
    theta: float
    mode: str

    def reference_ids(self) -> list[str]:
        return list(self.structural) + list(self.clusters)

    def to_json(self) -> dict:
        return {
            "roles": [{"slide": r.slide_id, "label": r.label} for r in self.roles],
            "clusters": self.clusters,
            "structural": self.structural,
            "theta": self.theta,
            "mode": self.mode,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AnalysisResult":
        return cls(
            roles=[SlideRole(r["slide"], r["label"]) for r in doc["roles"]],
            clusters=doc["clusters"],
            structural=doc["structural"],
            theta=doc["theta"],
            mode=doc["mode"],
        )

    def save(self, path: str) -> None:
        # insertion order is meaningful (cluster ids, label precedence),
        # so keys are not resorted
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "AnalysisResult":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def analyze_presentation(
    presentation: Presentation,
    gateway: Gateway,
    theta: float = DEFAULT_THETA,
    mode: str = "single-link",
    rasterizer: str | None = None,
) -> AnalysisResult:
    roles = classify_roles(presentation, gateway)
    content_ids = [r.slide_id for r in roles if not r.structural]

    cluster_members: list[list[str]] = []
    if len(content_ids) >= 2:
        vectors = embed_content_slides(presentation, roles, rasterizer, gateway)
        nonzero = [i for i, v in enumerate(vectors) if float(np.linalg.norm(v)) > 0.0]
        if len(nonzero) >= 2:
            matrix = build_similarity_matrix([vectors[i] for i in nonzero])
            cset = cluster_slides(matrix, theta=theta, mode=mode)
            for cluster in cset.clusters:
                cluster_members.append(
                    sorted(
                        (content_ids[nonzero[i]] for i in cluster),
                        key=presentation.slide_ids().index,
                    )
                )
    grouped = {sid for members in cluster_members for sid in members}
    # Content slides that joined no cluster become singleton groups so
    # every layout stays available as a reference.
    for sid in content_ids:
        if sid not in grouped:
            cluster_members.append([sid])

    clusters = {}
    for k, members in enumerate(cluster_members, start=1):
        cid = f"c{k}"
        rep = representative_slide(presentation, members)
        schema = extract_schema(members, presentation, gateway)
        clusters[cid] = {
            "slides": members,
            "representative": rep,
            "schema": schema.entries,
        }

    structural = {}
    for label in STRUCTURAL_LABELS:
        members = [r.slide_id for r in roles if r.label == label]
        if not members:
            continue
        # Structural groups are referenced by their first slide in deck
        # order; the schema is grounded in that same slide.
        rep = members[0]
        schema = extract_schema(members, presentation, gateway, representative=rep)
        structural[label] = {
            "slides": members,
            "representative": rep,
            "schema": schema.entries,
        }

    return AnalysisResult(
        roles=roles, clusters=clusters, structural=structural, theta=theta, mode=mode
    )
