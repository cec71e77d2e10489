"""Command line entry point: analyze, generate, eval, render."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields

from deckgen import prompts
from deckgen.analysis import AnalysisResult, analyze_presentation, layout_vector
from deckgen.errors import ConfigInvalid, DeckgenError
from deckgen.eval import (
    EvalReport,
    RougeScore,
    fid,
    judge_presentation,
    rouge_l,
    tokenize,
)
from deckgen.gateway import MODES, Cassette, EndpointConfig, Gateway
from deckgen.generation import generate_presentation
from deckgen.htmlrender import render_masked, render_slide_html
from deckgen.ingest import ImageCatalog, check_sampling_bounds, parse_document
from deckgen.pptx import load_presentation

log = logging.getLogger(__name__)

_CONFIG_KEYS = (
    "mode", "cassette", "theta", "cluster_mode", "retry_limit",
    "max_slides", "rasterizer", "endpoints",
)


@dataclass
class RunConfig:
    mode: str = "replay"
    cassette: str | None = None
    theta: float = 0.65
    cluster_mode: str = "single-link"
    retry_limit: int = 2
    max_slides: int = 16
    rasterizer: str | None = None
    endpoints: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        cfg = cls()
        if path is None:
            return cfg
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        unknown = set(doc) - set(_CONFIG_KEYS)
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key, value in doc.items():
            setattr(cfg, key, value)
        return cfg

    def apply_flags(self, args: argparse.Namespace) -> "RunConfig":
        for name in _CONFIG_KEYS[:-1]:
            value = getattr(args, name, None)
            if value is not None:
                setattr(self, name, value)
        return self

    def validated(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigInvalid(f"mode must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.theta, (int, float)) or not 0.0 < self.theta <= 1.0:
            raise ConfigInvalid(f"theta must be in (0, 1], got {self.theta!r}")
        if self.cluster_mode not in ("literal", "single-link"):
            raise ConfigInvalid(f"unknown cluster mode {self.cluster_mode!r}")
        if self.retry_limit < 0:
            raise ConfigInvalid("retry limit must be >= 0")
        if self.max_slides < 1:
            raise ConfigInvalid("max slides must be >= 1")
        return self

    def gateway(self) -> Gateway:
        endpoints = {}
        for role, spec in self.endpoints.items():
            if not isinstance(spec, dict):
                raise ConfigInvalid(f"endpoint {role!r} must be an object")
            allowed = {f.name for f in fields(EndpointConfig)}
            unknown = set(spec) - allowed
            if unknown:
                raise ConfigInvalid(
                    f"endpoint {role!r} has unknown keys: {', '.join(sorted(unknown))}"
                )
            endpoints[role] = EndpointConfig(**spec)
        cassette = Cassette(self.cassette) if self.cassette else None
        return Gateway(endpoints, mode=self.mode, cassette=cassette)


class _JsonLogFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        doc = {
            "level": record.levelname.lower(),
            "logger": record.name,
            "event": record.getMessage(),
        }
        return json.dumps(doc, sort_keys=True)


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLogFormatter())
    root = logging.getLogger("deckgen")
    root.handlers = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


@contextlib.contextmanager
def _run_lock(run_dir: str):
    """One process per run directory; stale locks need manual removal."""
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, ".lock")
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigInvalid(f"run directory {run_dir} is locked (remove {path} if stale)")
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        os.unlink(path)


def _require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    return path


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


# -- commands -----------------------------------------------------------------


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = RunConfig.load(args.config).apply_flags(args).validated()
    deck = load_presentation(_require_file(args.deck))
    gateway = cfg.gateway()
    result = analyze_presentation(
        deck,
        gateway,
        theta=cfg.theta,
        mode=cfg.cluster_mode,
        rasterizer=cfg.rasterizer,
    )
    result.save(args.out)
    _emit(
        {
            "out": args.out,
            "slides": len(deck.slides),
            "clusters": len(result.clusters),
            "structural": sorted(result.structural),
        }
    )
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = RunConfig.load(args.config).apply_flags(args).validated()
    with open(_require_file(args.document), encoding="utf-8") as fh:
        text = fh.read()
    doc = parse_document(text, assets_dir=args.assets)
    catalog = ImageCatalog(doc.images)
    reference = load_presentation(_require_file(args.deck))
    analysis = AnalysisResult.load(_require_file(args.analysis))
    gateway = cfg.gateway()

    bounds = check_sampling_bounds(doc, reference)
    for warning in bounds["warnings"]:
        log.warning("%s", warning)

    if catalog.refs():
        catalog.ensure_captions(gateway, prompts.fill("caption"))

    with _run_lock(args.run_dir):
        _, outline, trace = generate_presentation(
            doc,
            reference,
            analysis,
            gateway,
            catalog=catalog,
            retry_limit=cfg.retry_limit,
            max_slides=cfg.max_slides,
            run_dir=args.run_dir,
        )
    generated = sum(1 for s in trace.slides if s.final == "Success")
    _emit(
        {
            "run_dir": args.run_dir,
            "final": "Success" if trace.succeeded else "Failed",
            "planned": len(outline),
            "generated": generated,
        }
    )
    return 0 if trace.succeeded else 1


def _resolve_eval_target(target: str) -> tuple[str, float | None]:
    """Deck path plus the run's success rate when a trace is present."""
    if os.path.isdir(target):
        deck_path = os.path.join(target, "output.pptx")
        trace_path = os.path.join(target, "trace.json")
        if not os.path.isfile(deck_path):
            raise ConfigInvalid(f"{target} is not a run directory (no output.pptx)")
        sr = None
        if os.path.isfile(trace_path):
            with open(trace_path, encoding="utf-8") as fh:
                sr = 100.0 if json.load(fh).get("final") == "Success" else 0.0
        return deck_path, sr
    return _require_file(target), None


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = RunConfig.load(args.config).apply_flags(args).validated()
    deck_path, sr = _resolve_eval_target(args.target)
    deck = load_presentation(deck_path)

    rouge: RougeScore | None = None
    if args.reference_doc:
        with open(_require_file(args.reference_doc), encoding="utf-8") as fh:
            ref_doc = parse_document(fh.read())
        reference_text = " ".join(
            f"{s.title} {s.body}" for s in ref_doc.all_sections()
        )
        candidate_text = " ".join(s.text() for s in deck.slides)
        rouge = rouge_l(tokenize(candidate_text), tokenize(reference_text))

    fid_value = None
    if args.reference_deck:
        reference = load_presentation(_require_file(args.reference_deck))
        fid_value = fid(
            [layout_vector(s) for s in deck.slides],
            [layout_vector(s) for s in reference.slides],
        )

    content = design = coherence = None
    verdicts = []
    if not args.skip_judge:
        gateway = cfg.gateway()
        verdicts, aggregates = judge_presentation(deck, gateway)
        content = aggregates["content"]
        design = aggregates["design"]
        coherence = aggregates["coherence"]

    report = EvalReport(
        sr=sr,
        rouge=rouge,
        fid_value=fid_value,
        content=content,
        design=design,
        coherence=coherence,
        verdicts=verdicts,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=1)
        fh.write("\n")
    print(report.render_table())
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    deck = load_presentation(_require_file(args.deck))
    slides = deck.slides
    if args.slide is not None:
        if not 0 <= args.slide < len(slides):
            raise ConfigInvalid(
                f"slide index {args.slide} out of range 0..{len(slides) - 1}"
            )
        slides = [slides[args.slide]]
    os.makedirs(args.out, exist_ok=True)
    written = []
    for slide in slides:
        if args.masked:
            html = render_masked(slide).html
            name = f"{slide.id}-masked.html"
        else:
            html = render_slide_html(slide).html
            name = f"{slide.id}.html"
        path = os.path.join(args.out, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(html)
            fh.write("\n")
        written.append(path)
    _emit({"written": written})
    return 0


# -- argument plumbing --------------------------------------------------------


def _shared_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--mode", choices=MODES, help="provider mode")
    parser.add_argument("--cassette", help="cassette path for record/replay")
    parser.add_argument("--theta", type=float, help="clustering threshold in (0, 1]")
    parser.add_argument(
        "--cluster-mode", dest="cluster_mode", choices=("literal", "single-link")
    )
    parser.add_argument("--retry-limit", dest="retry_limit", type=int)
    parser.add_argument("--rasterizer", help="command template with {input} {outdir}")
    parser.add_argument("--max-slides", dest="max_slides", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deckgen",
        description="Edit-based presentation generation and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="cluster a reference deck and extract schemas")
    p.add_argument("deck")
    p.add_argument("-o", "--out", default="analysis.json")
    _shared_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("generate", help="generate a deck from a document")
    p.add_argument("document")
    p.add_argument("deck", help="reference deck")
    p.add_argument("analysis", help="analysis JSON from the analyze step")
    p.add_argument("--run-dir", dest="run_dir", required=True)
    p.add_argument("--assets", help="directory for document image paths")
    _shared_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score a generated run or deck")
    p.add_argument("target", help="run directory or .pptx path")
    p.add_argument("--reference-doc", dest="reference_doc", help="source document")
    p.add_argument("--reference-deck", dest="reference_deck", help="deck for feature distance")
    p.add_argument("--skip-judge", dest="skip_judge", action="store_true")
    p.add_argument("-o", "--out", default="report.json")
    _shared_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="write per-slide HTML files")
    p.add_argument("deck")
    p.add_argument("--slide", type=int, help="0-based slide index; default all")
    p.add_argument("--masked", action="store_true")
    p.add_argument("-o", "--out", default="rendered")
    _shared_flags(p)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(getattr(args, "verbose", False))
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        missing = exc.filename or (exc.args[0] if exc.args else "unknown")
        _fail("FileNotFound", f"no such file: {missing}")
        return 2
    except DeckgenError as exc:
        _fail(exc.kind, str(exc))
        return exc.exit_code


def _fail(kind: str, message: str) -> None:
    print(json.dumps({"kind": kind, "message": message}, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
