"""Outline planning and self-correcting slide generation."""

import json
import os
import zipfile

import pytest

from deckbuilder import build_deck, png_bytes, text_shape
from deckgen.analysis import AnalysisResult, SlideRole
from deckgen.generation import (
    EmptyOutline,
    GenerationTrace,
    OutlineEntry,
    SlideFailed,
    UnresolvableReference,
    generate_outline,
    generate_presentation,
    generate_slide,
)
from deckgen.ingest import CatalogImage, ImageCatalog, parse_document
from deckgen.pptx import load_presentation, structural_equal


class StubGateway:
    def __init__(self, completions=()):
        self.endpoints = {}
        self.completions = list(completions)
        self.requests = []

    def complete(self, req, role="lm"):
        self.requests.append([(m.role, m.text) for m in req.messages])
        assert self.completions, "ran out of scripted completions"
        return self.completions.pop(0)


DOC_TEXT = """\
# Results
Revenue grew twelve percent year over year.

![revenue chart](chart.png)

# Outlook
Steady growth is expected through next year.
"""


def source_doc():
    return parse_document(DOC_TEXT)


def image_catalog():
    return ImageCatalog(
        [CatalogImage(ref="img1", data=png_bytes((10, 90, 200)), caption="revenue chart")]
    )


def reference_deck(tmp_path):
    title_box = (914400, 457200, 10363200, 1143000)
    body_box = (914400, 1828800, 10363200, 4114800)
    slides = [
        [text_shape([[("Welcome here", None)]])],
        [
            text_shape([[("Results Alpha", None)]], bbox=title_box),
            text_shape([[("Revenue grew twelve", None)]], bbox=body_box, sid=3),
        ],
        [text_shape([[("Thank you all", None)]])],
    ]
    path = build_deck(os.fspath(tmp_path / "reference.pptx"), slides)
    return load_presentation(path), path


def analysis_fixture():
    return AnalysisResult(
        roles=[
            SlideRole("slide1", "opening"),
            SlideRole("slide2", "content"),
            SlideRole("slide3", "ending"),
        ],
        clusters={
            "c1": {
                "slides": ["slide2"],
                "representative": "slide2",
                "schema": [
                    {"category": "Title", "description": "Heading", "content": "Results Alpha"},
                    {"category": "Body", "description": "Main point", "content": "Revenue grew twelve"},
                ],
            }
        },
        structural={
            "opening": {
                "slides": ["slide1"],
                "representative": "slide1",
                "schema": [{"category": "Title", "description": "Greeting", "content": "Welcome here"}],
            },
            "ending": {
                "slides": ["slide3"],
                "representative": "slide3",
                "schema": [{"category": "Title", "description": "Farewell", "content": "Thank you all"}],
            },
        },
        theta=0.65,
        mode="single-link",
    )


GOOD_OUTLINE = """\
title: Welcome
ref: structural:opening
sections:
images:

title: Findings
ref: cluster:c1
sections: 1
images: img1

title: Goodbye
ref: structural:ending
sections:
images:
"""


# -- outline ------------------------------------------------------------------


def test_generate_outline(tmp_path):
    gw = StubGateway([GOOD_OUTLINE])
    entries = generate_outline(source_doc(), analysis_fixture(), gw, catalog=image_catalog())
    assert [e.title for e in entries] == ["Welcome", "Findings", "Goodbye"]
    assert entries[0].ref_kind == "structural" and entries[0].ref == "opening"
    assert entries[1].ref_kind == "cluster" and entries[1].ref == "c1"
    assert entries[1].section_refs == ("1",)
    assert entries[1].image_refs == ("img1",)
    prompt = gw.requests[0][0][1]
    assert "structural:opening" in prompt
    assert "cluster:c1" in prompt
    assert "1: Results" in prompt
    assert "img1: revenue chart" in prompt


def test_outline_accepts_fenced_output():
    gw = StubGateway(["```\n" + GOOD_OUTLINE + "```"])
    entries = generate_outline(source_doc(), analysis_fixture(), gw, catalog=image_catalog())
    assert len(entries) == 3


def test_outline_unknown_cluster_fails_after_retry():
    bad = "title: Findings\nref: cluster:Z\nsections: 1\nimages:"
    gw = StubGateway([bad, bad])
    with pytest.raises(UnresolvableReference) as err:
        generate_outline(source_doc(), analysis_fixture(), gw, catalog=image_catalog())
    assert "Z" in str(err.value)
    assert len(gw.requests) == 2
    assert "invalid" in gw.requests[1][0][1]


def test_outline_retry_recovers():
    bad = "title: Findings\nref: cluster:c1\nsections: 9.9\nimages:"
    gw = StubGateway([bad, GOOD_OUTLINE])
    entries = generate_outline(source_doc(), analysis_fixture(), gw, catalog=image_catalog())
    assert len(entries) == 3
    assert "9.9" in gw.requests[1][0][1]


def test_outline_content_entries_need_sections():
    bad = "title: Findings\nref: cluster:c1\nsections:\nimages:"
    gw = StubGateway([bad, bad])
    with pytest.raises(UnresolvableReference) as err:
        generate_outline(source_doc(), analysis_fixture(), gw)
    assert "section" in str(err.value)


def test_outline_unknown_image_rejected():
    bad = "title: Findings\nref: cluster:c1\nsections: 1\nimages: img9"
    gw = StubGateway([bad, bad])
    with pytest.raises(UnresolvableReference):
        generate_outline(source_doc(), analysis_fixture(), gw, catalog=image_catalog())


def test_outline_truncated_to_max_slides():
    gw = StubGateway([GOOD_OUTLINE])
    entries = generate_outline(
        source_doc(), analysis_fixture(), gw, catalog=image_catalog(), max_slides=2
    )
    assert len(entries) == 2


def test_outline_requires_reference_groups():
    empty = AnalysisResult(roles=[], clusters={}, structural={}, theta=0.65, mode="single-link")
    gw = StubGateway()
    with pytest.raises(UnresolvableReference):
        generate_outline(source_doc(), empty, gw)
    assert not gw.requests


def test_outline_entry_json_round_trip():
    entry = OutlineEntry(
        title="Findings", ref_kind="cluster", ref="c1",
        section_refs=("1", "2"), image_refs=("img1",),
    )
    assert OutlineEntry.from_json(entry.to_json()) == entry


# -- single-slide generation --------------------------------------------------

CONTENT_ENTRY = OutlineEntry(
    title="Findings", ref_kind="cluster", ref="c1", section_refs=("1",), image_refs=()
)
GOOD_SCRIPT = 'replace_span(0, 0, 0, "Q3 Findings")\nreplace_span(1, 0, 0, "Revenue grew")'
BAD_INDEX_SCRIPT = 'replace_span(9, 0, 0, "Q3 Findings")'
SCHEMA = analysis_fixture().clusters["c1"]["schema"]


def test_generate_slide_first_attempt(tmp_path):
    pres, _ = reference_deck(tmp_path)
    gw = StubGateway([GOOD_SCRIPT])
    slide_id, trace = generate_slide(
        pres, CONTENT_ENTRY, SCHEMA, "slide2", "## Results\nRevenue grew.", gateway=gw
    )
    assert trace.final == "Success"
    assert len(trace.attempts) == 1
    assert trace.attempts[0]["outcome"] == "Applied"
    assert pres.slide(slide_id).text() == "Q3 Findings\nRevenue grew"
    assert pres.slide("slide2").text() == "Results Alpha\nRevenue grew twelve"
    prompt = gw.requests[0][0][1]
    assert "e0-p0-s0" in prompt
    assert "Title | Heading | Results Alpha" in prompt
    assert "Revenue grew." in prompt


def test_generate_slide_recovers_from_bad_index(tmp_path):
    pres, _ = reference_deck(tmp_path)
    gw = StubGateway([BAD_INDEX_SCRIPT, GOOD_SCRIPT])
    slide_id, trace = generate_slide(
        pres, CONTENT_ENTRY, SCHEMA, "slide2", "text", gateway=gw
    )
    assert trace.final == "Success"
    assert [a["outcome"] for a in trace.attempts] == ["Feedback", "Applied"]
    assert "IndexOutOfRange" in trace.attempts[0]["detail"]
    # retry conversation carries the previous script and the feedback
    roles = [role for role, _ in gw.requests[1]]
    assert roles == ["user", "assistant", "user"]
    assert gw.requests[1][1][1] == BAD_INDEX_SCRIPT
    assert "IndexOutOfRange" in gw.requests[1][2][1]
    assert pres.slide(slide_id).text() == "Q3 Findings\nRevenue grew"


def test_generate_slide_reports_syntax_errors(tmp_path):
    pres, _ = reference_deck(tmp_path)
    gw = StubGateway(["frobnicate(1)", GOOD_SCRIPT])
    _, trace = generate_slide(pres, CONTENT_ENTRY, SCHEMA, "slide2", "text", gateway=gw)
    assert trace.final == "Success"
    assert "Syntax error on line 1" in trace.attempts[0]["detail"]


def test_generate_slide_exhausts_retries(tmp_path):
    pres, _ = reference_deck(tmp_path)
    before = pres.slide_ids()
    gw = StubGateway([BAD_INDEX_SCRIPT] * 3)
    with pytest.raises(SlideFailed) as err:
        generate_slide(pres, CONTENT_ENTRY, SCHEMA, "slide2", "text", gateway=gw)
    assert len(err.value.trace.attempts) == 3
    assert all(a["outcome"] == "Feedback" for a in err.value.trace.attempts)
    # failed clones are removed again
    assert pres.slide_ids() == before


def test_generate_slide_zero_retry_limit(tmp_path):
    pres, _ = reference_deck(tmp_path)
    gw = StubGateway([BAD_INDEX_SCRIPT])
    with pytest.raises(SlideFailed) as err:
        generate_slide(
            pres, CONTENT_ENTRY, SCHEMA, "slide2", "text", gateway=gw, retry_limit=0
        )
    assert len(err.value.trace.attempts) == 1


def test_success_depends_on_which_attempt_lands(tmp_path):
    # with retry limit 2 the third attempt is the last chance
    for k in range(1, 5):
        pres, _ = reference_deck(tmp_path)
        scripts = [BAD_INDEX_SCRIPT] * (k - 1) + [GOOD_SCRIPT]
        gw = StubGateway(scripts[:3] if k > 3 else scripts)
        if k <= 3:
            _, trace = generate_slide(
                pres, CONTENT_ENTRY, SCHEMA, "slide2", "text", gateway=gw
            )
            assert trace.final == "Success"
            assert len(trace.attempts) == k
        else:
            with pytest.raises(SlideFailed) as err:
                generate_slide(pres, CONTENT_ENTRY, SCHEMA, "slide2", "text", gateway=gw)
            assert len(err.value.trace.attempts) == 3


def test_generate_slide_with_image_replacement(tmp_path):
    from deckbuilder import pic_shape

    slides = [
        [
            text_shape([[("Results Alpha", None)]]),
            pic_shape("image1.png", bbox=(914400, 1828800, 4572000, 3429000), alt="old"),
        ],
    ]
    path = build_deck(
        os.fspath(tmp_path / "pic.pptx"), slides, images={"image1.png": png_bytes()}
    )
    pres = load_presentation(path)
    entry = OutlineEntry(
        title="Chart", ref_kind="cluster", ref="c1", section_refs=("1",), image_refs=("img1",)
    )
    script = 'replace_span(0, 0, 0, "Fresh Chart")\nreplace_image(1, "img1")'
    gw = StubGateway([script])
    slide_id, trace = generate_slide(
        pres, entry, SCHEMA, "slide1", "text", catalog=image_catalog(), gateway=gw
    )
    assert trace.final == "Success"
    new = pres.slide(slide_id)
    assert new.elements[1].image_id != pres.slide("slide1").elements[1].image_id
    assert "img1: revenue chart" in gw.requests[0][0][1]


# -- whole runs ---------------------------------------------------------------

SLIDE_SCRIPTS = [
    'replace_span(0, 0, 0, "Hello")',
    GOOD_SCRIPT,
    'replace_span(0, 0, 0, "The End")',
]


def run_outline():
    return [
        OutlineEntry(title="Welcome", ref_kind="structural", ref="opening"),
        CONTENT_ENTRY,
        OutlineEntry(title="Goodbye", ref_kind="structural", ref="ending"),
    ]


def test_generate_presentation(tmp_path):
    pres, path = reference_deck(tmp_path)
    gw = StubGateway(SLIDE_SCRIPTS)
    run_dir = os.fspath(tmp_path / "run")
    deck, outline, trace = generate_presentation(
        source_doc(), pres, analysis_fixture(), gw,
        outline=run_outline(), run_dir=run_dir,
    )
    assert trace.succeeded
    assert len(deck.slides) == 3
    assert deck.slides[0].text() == "Hello"
    assert deck.slides[1].text() == "Q3 Findings\nRevenue grew"
    assert deck.slides[2].text() == "The End"
    # reference deck still matches its on-disk form
    assert structural_equal(pres, load_presentation(path))

    saved = load_presentation(os.path.join(run_dir, "output.pptx"))
    assert [s.text() for s in saved.slides] == ["Hello", "Q3 Findings\nRevenue grew", "The End"]
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    assert manifest["final"] == "Success"
    assert manifest["planned"] == 3 and manifest["generated"] == 3
    with open(os.path.join(run_dir, "outline.json")) as fh:
        outline_doc = json.load(fh)
    assert [OutlineEntry.from_json(e) for e in outline_doc] == outline
    with open(os.path.join(run_dir, "trace.json")) as fh:
        trace_doc = json.load(fh)
    assert trace_doc["final"] == "Success"
    assert [s["final"] for s in trace_doc["slides"]] == ["Success"] * 3


def test_generate_presentation_partial_failure(tmp_path):
    pres, path = reference_deck(tmp_path)
    scripts = [SLIDE_SCRIPTS[0]] + [BAD_INDEX_SCRIPT] * 3 + [SLIDE_SCRIPTS[2]]
    gw = StubGateway(scripts)
    run_dir = os.fspath(tmp_path / "run")
    deck, _, trace = generate_presentation(
        source_doc(), pres, analysis_fixture(), gw,
        outline=run_outline(), run_dir=run_dir,
    )
    assert not trace.succeeded
    assert [s.final for s in trace.slides] == ["Success", "Failed", "Success"]
    assert len(trace.slides[1].attempts) == 3
    assert [s.text() for s in deck.slides] == ["Hello", "The End"]
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    assert manifest["final"] == "Failed"
    assert manifest["generated"] == 2
    assert manifest["slides"][1]["attempts"] == 3
    # the partial deck is still a loadable archive
    assert len(load_presentation(os.path.join(run_dir, "output.pptx")).slides) == 2
    assert structural_equal(pres, load_presentation(path))


def test_generate_presentation_generates_outline_when_missing(tmp_path):
    pres, _ = reference_deck(tmp_path)
    gw = StubGateway([GOOD_OUTLINE] + SLIDE_SCRIPTS)
    deck, outline, trace = generate_presentation(
        source_doc(), pres, analysis_fixture(), gw, catalog=image_catalog()
    )
    assert [e.title for e in outline] == ["Welcome", "Findings", "Goodbye"]
    assert trace.succeeded
    assert len(deck.slides) == 3


def test_generate_presentation_rejects_empty_outline(tmp_path):
    pres, _ = reference_deck(tmp_path)
    with pytest.raises(EmptyOutline):
        generate_presentation(
            source_doc(), pres, analysis_fixture(), StubGateway(), outline=[]
        )


def test_unknown_outline_reference_rejected(tmp_path):
    pres, _ = reference_deck(tmp_path)
    outline = [OutlineEntry(title="X", ref_kind="cluster", ref="c9", section_refs=("1",))]
    with pytest.raises(UnresolvableReference):
        generate_presentation(
            source_doc(), pres, analysis_fixture(), StubGateway(["x"]), outline=outline
        )


def test_repeated_runs_are_byte_identical(tmp_path):
    out = []
    for name in ("a", "b"):
        pres, _ = reference_deck(tmp_path)
        gw = StubGateway(SLIDE_SCRIPTS)
        run_dir = os.fspath(tmp_path / name)
        generate_presentation(
            source_doc(), pres, analysis_fixture(), gw,
            outline=run_outline(), run_dir=run_dir,
        )
        with open(os.path.join(run_dir, "output.pptx"), "rb") as fh:
            out.append(fh.read())
    assert out[0] == out[1]
    assert zipfile.ZipFile(os.path.join(tmp_path, "a", "output.pptx")).testzip() is None


def test_trace_counts_as_run_for_success_rate():
    from deckgen.eval import success_rate

    good = GenerationTrace(slides=[], retry_limit=2)
    good.slides.append(
        type("T", (), {"final": "Success"})()
    )
    assert good.succeeded
    failed = GenerationTrace(slides=[type("T", (), {"final": "Failed"})()], retry_limit=2)
    assert not failed.succeeded
    assert success_rate([good, failed]) == 50.0
