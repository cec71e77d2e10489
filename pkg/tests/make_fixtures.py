"""Regenerates everything under tests/fixtures/.

Run as: python3 tests/make_fixtures.py

The end-to-end fixtures are produced by driving the real CLI in record
mode with the deterministic FakeTransport standing in for the provider,
so the committed cassettes hold exactly the requests the current code
emits and replaying them needs no network. Re-run this script and commit
the result whenever prompts or pipeline behavior change.

Layout:
  fixtures/e2e/            reference deck, source doc, assets, config,
                           cassette, and golden outputs of a full
                           analyze -> generate -> eval run
  fixtures/selfcorrection/ cassette of edit conversations that need
                           k = 1..4 attempts before a good script
  fixtures/judge3/         three-slide deck plus judging cassette with
                           known per-slide scores
"""

from __future__ import annotations

import copy
import json
import shutil
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

import deckgen.gateway
from deckgen.analysis import AnalysisResult
from deckgen.cli import main as cli_main
from deckgen.eval import judge_presentation
from deckgen.gateway import Cassette, Gateway
from deckgen.generation import OutlineEntry, SlideFailed, generate_slide
from deckgen.pptx import load_presentation

from deckbuilder import build_deck, pic_shape, png_bytes, text_shape
from fakeserver import FakeTransport, endpoints, endpoints_doc

FIXTURES = HERE / "fixtures"

TITLE_BOX = (914400, 457200, 10363200, 1143000)
BODY_BOX = (914400, 1828800, 10363200, 4114800)
TITLE_STYLE = 'lang="en-US" sz="4400" b="1"'
BODY_STYLE = 'lang="en-US" sz="2000"'

DOC_MD = """\
# Platform Overview

The platform ingests telemetry from field devices and renders live
dashboards for operators. [retry:1]

![architecture diagram](assets/diagram.png)

# Adoption Results

Adoption grew forty percent quarter over quarter across three regions.

![](assets/chart.png)
*Quarterly adoption by region*

# Launch Timeline

The next milestone ships in March, followed by a partner rollout in
June and general availability before the end of the year.

![](assets/photo.png)
"""


def title(text):
    return text_shape([[(text, TITLE_STYLE)]], bbox=TITLE_BOX, name="Title", sid=2)


def body(*paragraphs):
    return text_shape(
        [[(p, BODY_STYLE)] for p in paragraphs], bbox=BODY_BOX, name="Body", sid=3
    )


def build_reference_deck(path: Path) -> None:
    slides = [
        [title("Product Update 2024")],
        [title("Agenda"), body("Adoption results", "Roadmap outlook", "Platform architecture")],
        [title("Adoption Results"), body("Adoption grew strongly last quarter across regions.")],
        [title("Roadmap Outlook"), body("Three launches are planned for the next quarters.")],
        [pic_shape("image1.png", bbox=(0, 0, 12192000, 6858000), alt="", sid=2)],
        [title("Thank You")],
    ]
    build_deck(str(path), slides, images={"image1.png": png_bytes((40, 40, 60), (16, 9))})


def make_e2e() -> None:
    root = FIXTURES / "e2e"
    assets = root / "assets"
    assets.mkdir(parents=True)
    (assets / "diagram.png").write_bytes(png_bytes((20, 110, 220), (12, 8)))
    (assets / "chart.png").write_bytes(png_bytes((220, 140, 20), (12, 8)))
    (assets / "photo.png").write_bytes(png_bytes((60, 180, 90), (12, 8)))
    (root / "doc.md").write_text(DOC_MD, encoding="utf-8")
    (root / "config.json").write_text(
        json.dumps({"endpoints": endpoints_doc()}, indent=1) + "\n", encoding="utf-8"
    )
    build_reference_deck(root / "reference.pptx")

    cassette = str(root / "cassette.json")
    config = str(root / "config.json")
    common = ["--config", config, "--mode", "record", "--cassette", cassette]

    rc = cli_main(
        ["analyze", str(root / "reference.pptx"), "-o", str(root / "golden_analysis.json")]
        + common
    )
    assert rc == 0, f"analyze exited {rc}"

    run_dir = root / "record_run"
    rc = cli_main(
        [
            "generate",
            str(root / "doc.md"),
            str(root / "reference.pptx"),
            str(root / "golden_analysis.json"),
            "--run-dir", str(run_dir),
            "--assets", str(root),
        ]
        + common
    )
    assert rc == 0, f"generate exited {rc}"

    rc = cli_main(
        [
            "eval",
            str(run_dir),
            "--reference-doc", str(root / "doc.md"),
            "--reference-deck", str(root / "reference.pptx"),
            "-o", str(root / "golden_report.json"),
        ]
        + common
    )
    assert rc == 0, f"eval exited {rc}"

    for name in ("outline.json", "trace.json", "manifest.json"):
        shutil.copy(run_dir / name, root / f"golden_{name}")
    shutil.rmtree(run_dir)


def make_selfcorrection() -> None:
    root = FIXTURES / "selfcorrection"
    root.mkdir(parents=True)
    analysis = AnalysisResult.load(str(FIXTURES / "e2e" / "golden_analysis.json"))
    group = analysis.clusters["c1"]
    reference = load_presentation(str(FIXTURES / "e2e" / "reference.pptx"))
    gateway = Gateway(
        endpoints(),
        mode="record",
        cassette=Cassette(str(root / "cassette.json")),
        transport=FakeTransport(),
    )
    for k in range(1, 5):
        work = copy.deepcopy(reference)
        entry = OutlineEntry(
            title=f"Correction depth {k}",
            ref_kind="cluster",
            ref="c1",
            section_refs=("1",),
            image_refs=(),
        )
        content = (
            f"## Correction depth {k}\n"
            f"Deterministic content for correction depth {k}. [retry:{k - 1}]"
        )
        try:
            generate_slide(
                work,
                entry,
                group["schema"],
                group["representative"],
                content,
                gateway=gateway,
                retry_limit=2,
            )
        except SlideFailed:
            assert k == 4, f"depth {k} unexpectedly exhausted its retries"
        else:
            assert k <= 3, "depth 4 should exhaust retry_limit=2"


def make_judge3() -> None:
    root = FIXTURES / "judge3"
    root.mkdir(parents=True)
    slides = [
        [title("Alpha topic"), body("Alpha body line about the first theme.")],
        [title("Beta topic"), body("Beta body line about the middle theme.")],
        [title("Gamma topic"), body("Gamma body line about the closing theme.")],
    ]
    build_deck(str(root / "deck.pptx"), slides)
    gateway = Gateway(
        endpoints(),
        mode="record",
        cassette=Cassette(str(root / "cassette.json")),
        transport=FakeTransport(),
    )
    deck = load_presentation(str(root / "deck.pptx"))
    verdicts, aggregates = judge_presentation(deck, gateway)
    assert len(verdicts) == 7, f"expected 7 verdicts, got {len(verdicts)}"
    print("judge3 aggregates:", aggregates)


def main() -> None:
    if FIXTURES.exists():
        shutil.rmtree(FIXTURES)
    deckgen.gateway.HttpxTransport = FakeTransport  # the CLI builds its own transport
    make_e2e()
    make_selfcorrection()
    make_judge3()
    print("fixtures written under", FIXTURES)


if __name__ == "__main__":
    main()
