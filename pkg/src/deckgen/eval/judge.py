"""Reference-free deck scoring: content, design, coherence.

Content and design are judged per slide and averaged; coherence is
judged once against an extracted presentation-level structure. Each
dimension scores 1-5 with a short rationale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from deckgen import prompts
from deckgen.errors import DeckgenError
from deckgen.eval.metrics import RougeScore, sr_weighted
from deckgen.gateway import ChatMessage, ChatRequest, Gateway
from deckgen.htmlrender import render_slide_html
from deckgen.pptx import Presentation

log = logging.getLogger(__name__)

DIMENSIONS = ("content", "design", "coherence")


class UnparseableVerdict(DeckgenError):
    pass


@dataclass(frozen=True)
class JudgeVerdict:
    dimension: str  # one of DIMENSIONS
    slide_id: str | None  # None for presentation-level coherence
    score: int  # 1..5
    rationale: str

    def to_json(self) -> dict:
        return {
            "dimension": self.dimension,
            "slide": self.slide_id,
            "score": self.score,
            "rationale": self.rationale,
        }


def _chat(gateway: Gateway, text: str, role: str, image: bytes | None = None) -> str:
    ep = gateway.endpoints.get(role)
    model = ep.model if ep else "default"
    images = (image,) if image is not None else ()
    req = ChatRequest(model=model, messages=[ChatMessage("user", text, images=images)])
    return gateway.complete(req, role=role)


def _parse_verdict(raw: str) -> tuple[int, str] | str:
    """(score, rationale) or a description of what is wrong."""
    score = None
    rationale = None
    for line in raw.strip().splitlines():
        line = line.strip().strip("`")
        low = line.lower()
        if low.startswith("score:"):
            value = line.split(":", 1)[1].strip()
            try:
                score = int(value)
            except ValueError:
                return f"score {value!r} is not an integer"
            if not 1 <= score <= 5:
                return f"score {score} outside 1-5"
        elif low.startswith("rationale:"):
            rationale = line.split(":", 1)[1].strip()
    if score is None:
        return "missing score line"
    if rationale is None:
        return "missing rationale line"
    return score, rationale


def _judged(
    gateway: Gateway,
    prompt: str,
    dimension: str,
    slide_id: str | None,
    role: str = "vm",
    image: bytes | None = None,
) -> JudgeVerdict:
    parsed = _parse_verdict(_chat(gateway, prompt, role, image))
    if isinstance(parsed, str):
        log.warning("%s verdict invalid (%s), re-prompting once", dimension, parsed)
        retry = f"{prompt}\n\nYour previous answer was invalid: {parsed}. Answer again."
        parsed = _parse_verdict(_chat(gateway, retry, role, image))
        if isinstance(parsed, str):
            raise UnparseableVerdict(f"{dimension} verdict failed: {parsed}")
    score, rationale = parsed
    return JudgeVerdict(dimension, slide_id, score, rationale)


def judge_presentation(
    presentation: Presentation,
    gateway: Gateway,
    slide_images: list[bytes] | None = None,
) -> tuple[list[JudgeVerdict], dict]:
    """All verdicts plus the aggregate scores.

    slide_images, when given, must align with deck order; the judge
    then sees rendered pixels instead of the HTML projection.
    """
    if slide_images is not None and len(slide_images) != len(presentation.slides):
        raise ValueError(
            f"{len(slide_images)} images for {len(presentation.slides)} slides"
        )
    verdicts = []
    for i, slide in enumerate(presentation.slides):
        if slide_images is not None:
            surface = "(the slide is attached as an image)"
            image = slide_images[i]
        else:
            surface = render_slide_html(slide).html
            image = None
        for dimension, prompt_name in (("content", "judge_content"), ("design", "judge_design")):
            prompt = prompts.fill(prompt_name, slide=surface)
            verdicts.append(_judged(gateway, prompt, dimension, slide.id, image=image))

    slides_text = "\n".join(
        f"{i}. {' '.join(s.text().split()) or '(blank)'}"
        for i, s in enumerate(presentation.slides, start=1)
    )
    structure = _chat(
        gateway, prompts.fill("extract_structure", slides_text=slides_text), "lm"
    )
    coherence_prompt = prompts.fill("judge_coherence", structure=structure.strip())
    verdicts.append(_judged(gateway, coherence_prompt, "coherence", None))
    return verdicts, aggregate_verdicts(verdicts)


def aggregate_verdicts(verdicts: list[JudgeVerdict]) -> dict:
    """Slide-dimension means plus the presentation-level coherence score."""
    out: dict = {}
    for dimension in ("content", "design"):
        scores = [v.score for v in verdicts if v.dimension == dimension]
        out[dimension] = sum(scores) / len(scores) if scores else None
    coherence = [v.score for v in verdicts if v.dimension == "coherence"]
    out["coherence"] = float(coherence[0]) if coherence else None
    dims = [out[d] for d in DIMENSIONS if out[d] is not None]
    out["average"] = sum(dims) / len(dims) if dims else None
    return out


# -- report -------------------------------------------------------------------


@dataclass
class EvalReport:
    """Everything one evaluation run produced, in fixed column order."""

    sr: float | None = None
    rouge: RougeScore | None = None
    fid_value: float | None = None
    content: float | None = None
    design: float | None = None
    coherence: float | None = None
    verdicts: list[JudgeVerdict] = field(default_factory=list)

    @property
    def average(self) -> float | None:
        dims = [d for d in (self.content, self.design, self.coherence) if d is not None]
        return sum(dims) / len(dims) if dims else None

    def weighted(self, value: float | None) -> float | None:
        if value is None or self.sr is None:
            return value
        return sr_weighted(value, self.sr)

    def to_json(self) -> dict:
        ppteval = {
            "content": self.content,
            "design": self.design,
            "coherence": self.coherence,
            "average": self.average,
        }
        return {
            "sr": _round(self.sr),
            "ppl": "not computed",
            "rouge_l": None
            if self.rouge is None
            else {
                "precision": _round(self.rouge.precision),
                "recall": _round(self.rouge.recall),
                "f1": _round(self.rouge.f1),
            },
            "fid": _round(self.fid_value),
            "ppteval": {k: _round(v) for k, v in ppteval.items()},
            "ppteval_sr_weighted": {
                k: _round(self.weighted(v)) for k, v in ppteval.items()
            },
            "verdicts": [v.to_json() for v in self.verdicts],
        }

    def render_table(self) -> str:
        headers = ["SR(%)", "PPL", "ROUGE-L", "FID", "Content", "Design", "Coherence", "Avg."]
        plain = [
            _cell(self.sr),
            "not computed",
            _cell(None if self.rouge is None else self.rouge.f1),
            _cell(self.fid_value),
            _cell(self.content),
            _cell(self.design),
            _cell(self.coherence),
            _cell(self.average),
        ]
        weighted = [
            "SR-weighted",
            "",
            "",
            "",
            _cell(self.weighted(self.content)),
            _cell(self.weighted(self.design)),
            _cell(self.weighted(self.coherence)),
            _cell(self.weighted(self.average)),
        ]
        widths = [
            max(len(h), len(p), len(w)) for h, p, w in zip(headers, plain, weighted)
        ]
        def row(cells):
            return "  ".join(c.ljust(n) for c, n in zip(cells, widths)).rstrip()
        return "\n".join([row(headers), row(plain), row(weighted)])


def _round(value, digits: int = 4):
    return None if value is None else round(float(value), digits)


def _cell(value) -> str:
    return "-" if value is None else f"{value:.4g}"
