"""Edit-action scripts: parsing and execution.

Scripts are plain text, one call per line, `#` comments, double-quoted
strings with backslash escapes. Exactly five functions exist:

    del_span(eid, pid, sid)
    del_image(eid)
    clone_paragraph(eid, pid)
    replace_span(eid, pid, sid, "text")
    replace_image(eid, "image-ref")

Execution is atomic: the first failing action rolls the slide back to
its pre-script state and is reported as structured feedback rather than
an exception, so a caller can hand the message back to the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from deckgen.errors import DeckgenError
from deckgen.pptx.model import ElementKind, Slide

SIGNATURES: dict[str, tuple[type, ...]] = {
    "del_span": (int, int, int),
    "del_image": (int,),
    "clone_paragraph": (int, int),
    "replace_span": (int, int, int, str),
    "replace_image": (int, str),
}


class ActionSyntaxError(DeckgenError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class FeedbackKind(Enum):
    INDEX_OUT_OF_RANGE = "IndexOutOfRange"
    NOT_A_TEXT_FRAME = "NotATextFrame"
    NOT_A_PICTURE = "NotAPicture"
    UNKNOWN_IMAGE_REF = "UnknownImageRef"
    EMPTY_REPLACEMENT = "EmptyReplacement"


@dataclass(frozen=True)
class EditAction:
    name: str
    args: tuple
    line: int
    text: str  # source line with comment stripped


@dataclass
class ActionScript:
    actions: list[EditAction] = field(default_factory=list)
    raw_text: str = ""


@dataclass
class ExecutionFeedback:
    failed_line: int
    action_text: str
    error_kind: FeedbackKind
    message: str
    prior_successes: int


def _scan_string(line: str, pos: int, lineno: int) -> tuple[str, int]:
    """Parse a double-quoted literal starting at line[pos] == '\"'."""
    out: list[str] = []
    escapes = {'"': '"', "\\": "\\", "n": "\n", "t": "\t", "r": "\r"}
    i = pos + 1
    while i < len(line):
        ch = line[i]
        if ch == "\\":
            if i + 1 >= len(line) or line[i + 1] not in escapes:
                raise ActionSyntaxError(lineno, f"bad escape at column {i + 1}")
            out.append(escapes[line[i + 1]])
            i += 2
        elif ch == '"':
            return "".join(out), i + 1
        else:
            out.append(ch)
            i += 1
    raise ActionSyntaxError(lineno, "unterminated string literal")


def _strip_comment(line: str, lineno: int) -> str:
    """Drop a trailing # comment, honoring quotes."""
    i = 0
    while i < len(line):
        ch = line[i]
        if ch == "#":
            return line[:i]
        if ch == '"':
            _, i = _scan_string(line, i, lineno)
        else:
            i += 1
    return line


def _parse_line(code: str, lineno: int) -> EditAction:
    i = 0
    while i < len(code) and (code[i].isalnum() or code[i] == "_"):
        i += 1
    name = code[:i]
    if not name or i >= len(code) or code[i] != "(":
        raise ActionSyntaxError(lineno, f"expected a function call, got {code!r}")
    if name not in SIGNATURES:
        raise ActionSyntaxError(lineno, f"unknown function {name!r}")

    args: list = []
    i += 1
    expect_arg = True
    while True:
        while i < len(code) and code[i] == " ":
            i += 1
        if i >= len(code):
            raise ActionSyntaxError(lineno, "missing closing parenthesis")
        ch = code[i]
        if ch == ")":
            if expect_arg and args:
                raise ActionSyntaxError(lineno, "trailing comma")
            i += 1
            break
        if not expect_arg:
            if ch != ",":
                raise ActionSyntaxError(lineno, f"expected ',' or ')' at column {i + 1}")
            i += 1
            expect_arg = True
            continue
        if ch == '"':
            value, i = _scan_string(code, i, lineno)
            args.append(value)
        elif ch.isdigit() or ch == "-":
            j = i + 1 if ch == "-" else i
            while j < len(code) and code[j].isdigit():
                j += 1
            token = code[i:j]
            if not token.lstrip("-").isdigit():
                raise ActionSyntaxError(lineno, f"unparseable literal {token!r}")
            value = int(token)
            if value < 0:
                raise ActionSyntaxError(lineno, f"negative index {value}")
            args.append(value)
            i = j
        else:
            raise ActionSyntaxError(lineno, f"unparseable argument at column {i + 1}")
        expect_arg = False
    if code[i:].strip():
        raise ActionSyntaxError(lineno, f"unexpected text after call: {code[i:].strip()!r}")

    sig = SIGNATURES[name]
    if len(args) != len(sig):
        raise ActionSyntaxError(
            lineno, f"{name} takes {len(sig)} arguments, got {len(args)}"
        )
    for k, (arg, want) in enumerate(zip(args, sig)):
        if not isinstance(arg, want):
            raise ActionSyntaxError(
                lineno, f"{name} argument {k + 1} must be {want.__name__}"
            )
    return EditAction(name=name, args=tuple(args), line=lineno, text=code.strip())


def parse_action_script(text: str) -> ActionScript:
    """Parse script text; blank lines and # comments are skipped."""
    actions = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        code = _strip_comment(raw, lineno).strip()
        if not code:
            continue
        actions.append(_parse_line(code, lineno))
    return ActionScript(actions=actions, raw_text=text)


def _range_text(count: int, noun: str) -> str:
    if count == 0:
        return f"no {noun}s exist"
    return f"valid {noun} range 0..{count - 1}"


def _fail(action: EditAction, kind: FeedbackKind, detail: str, prior: int) -> ExecutionFeedback:
    return ExecutionFeedback(
        failed_line=action.line,
        action_text=action.text,
        error_kind=kind,
        message=f"{action.text}: {detail}",
        prior_successes=prior,
    )


def _check_element(slide: Slide, action: EditAction, eid: int, prior: int):
    elements = slide.elements
    if eid >= len(elements):
        return None, _fail(
            action,
            FeedbackKind.INDEX_OUT_OF_RANGE,
            f"element index {eid} out of range; {_range_text(len(elements), 'element')}",
            prior,
        )
    return elements[eid], None


def _need_text_frame(slide, action, eid, prior):
    el, fb = _check_element(slide, action, eid, prior)
    if fb:
        return None, fb
    if el.kind is not ElementKind.TEXT_FRAME:
        return None, _fail(
            action,
            FeedbackKind.NOT_A_TEXT_FRAME,
            f"element {eid} is {el.kind.value}, not a text frame",
            prior,
        )
    return el, None


def _need_paragraph(el, action, eid, pid, prior):
    paras = el.paragraphs
    if pid >= len(paras):
        return None, _fail(
            action,
            FeedbackKind.INDEX_OUT_OF_RANGE,
            f"paragraph index {pid} out of range in element {eid}; "
            f"{_range_text(len(paras), 'paragraph')}",
            prior,
        )
    return paras[pid], None


def _need_span(para, action, eid, pid, sid, prior):
    spans = para.spans
    if sid >= len(spans):
        return None, _fail(
            action,
            FeedbackKind.INDEX_OUT_OF_RANGE,
            f"span index {sid} out of range in element {eid} paragraph {pid}; "
            f"{_range_text(len(spans), 'span')}",
            prior,
        )
    return spans[sid], None


def _execute(slide: Slide, action: EditAction, catalog, prior: int):
    name, args = action.name, action.args

    if name == "del_span":
        eid, pid, sid = args
        el, fb = _need_text_frame(slide, action, eid, prior)
        if fb:
            return fb
        para, fb = _need_paragraph(el, action, eid, pid, prior)
        if fb:
            return fb
        _, fb = _need_span(para, action, eid, pid, sid, prior)
        if fb:
            return fb
        para.remove_span(sid)
        if not para.spans:
            # Last span gone: drop the paragraph; an empty frame may remain.
            el.remove_paragraph(pid)
        return None

    if name == "del_image":
        (eid,) = args
        el, fb = _check_element(slide, action, eid, prior)
        if fb:
            return fb
        if el.kind is not ElementKind.PICTURE:
            return _fail(
                action,
                FeedbackKind.NOT_A_PICTURE,
                f"element {eid} is {el.kind.value}, not a picture",
                prior,
            )
        slide.remove_element(eid)
        return None

    if name == "clone_paragraph":
        eid, pid = args
        el, fb = _need_text_frame(slide, action, eid, prior)
        if fb:
            return fb
        _, fb = _need_paragraph(el, action, eid, pid, prior)
        if fb:
            return fb
        el.clone_paragraph(pid)
        return None

    if name == "replace_span":
        eid, pid, sid, text = args
        el, fb = _need_text_frame(slide, action, eid, prior)
        if fb:
            return fb
        para, fb = _need_paragraph(el, action, eid, pid, prior)
        if fb:
            return fb
        span, fb = _need_span(para, action, eid, pid, sid, prior)
        if fb:
            return fb
        if text == "":
            return _fail(
                action,
                FeedbackKind.EMPTY_REPLACEMENT,
                "replacement text is empty; use del_span to remove content",
                prior,
            )
        span.text = text
        return None

    if name == "replace_image":
        eid, ref = args
        el, fb = _check_element(slide, action, eid, prior)
        if fb:
            return fb
        if el.kind is not ElementKind.PICTURE:
            return _fail(
                action,
                FeedbackKind.NOT_A_PICTURE,
                f"element {eid} is {el.kind.value}, not a picture",
                prior,
            )
        image = catalog.resolve(ref) if catalog is not None else None
        if image is None:
            known = ", ".join(catalog.refs()[:8]) if catalog is not None else ""
            hint = f"; known refs: {known}" if known else "; catalog is empty"
            return _fail(
                action,
                FeedbackKind.UNKNOWN_IMAGE_REF,
                f"image ref {ref!r} not in catalog{hint}",
                prior,
            )
        media_id = slide.presentation.add_media(image.data, image.ext)
        el.set_image(media_id, alt_text=image.caption or None)
        return None

    raise AssertionError(f"unreachable action {name}")


def apply_actions(slide: Slide, script: ActionScript, catalog=None):
    """Run a parsed script against a slide clone.

    Returns the slide on success. On the first failure, restores the
    slide to its pre-script state and returns ExecutionFeedback; the
    caller owns retry policy.
    """
    state = slide.snapshot()
    for done, action in enumerate(script.actions):
        feedback = _execute(slide, action, catalog, prior=done)
        if feedback is not None:
            slide.restore(state)
            return feedback
    return slide
