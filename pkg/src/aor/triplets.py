"""Region-triplet text protocol.

A triplet is written ``NAME [x1, y1, x2, y2]`` with two-decimal coordinates,
optionally followed by its feature handle ``r_<name>``.  The stream parser
fires a region request as soon as the closing ``]`` of a well-formed span
arrives, regardless of how the text was chunked.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, Union

from .geometry import BoxError, NormalizedBox

NAME_CHARS = r"A-Za-z0-9_/"
_NAME = rf"[{NAME_CHARS}]+(?: [{NAME_CHARS}]+)*"
_NUM = r"(\d\.\d\d)"
TRIPLET_RE = re.compile(rf"({_NAME}) \[{_NUM}, {_NUM}, {_NUM}, {_NUM}\]")


def _prefix_pattern() -> str:
    # every proper prefix of " [d.dd, d.dd, d.dd, d.dd" (the part after NAME)
    parts: list[str] = [" ", r"\["]
    for i in range(4):
        parts += [r"\d", r"\.", r"\d", r"\d"]
        if i < 3:
            parts += [",", " "]
    pat = ""
    for p in reversed(parts):
        pat = f"{p}(?:{pat})?" if pat else p
    return pat


# a suffix of the buffer that may still grow into a triplet
_PENDING_RE = re.compile(rf"(?:{_NAME}(?:{_prefix_pattern()})?)?\Z")


class TripletError(ValueError):
    pass


class CoTParseError(ValueError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"at byte {offset}: {message}")
        self.offset = offset


def format_coord(v: float) -> str:
    return f"{v:.2f}"


def quantize_box(box: NormalizedBox) -> NormalizedBox:
    """Snap to the two-decimal wire grid, widening by one step if rounding collapses an axis."""

    def axis(lo: float, hi: float) -> tuple[float, float]:
        a, b = round(lo, 2), round(hi, 2)
        if b <= a:
            if b + 0.01 <= 1.0:
                b = round(a + 0.01, 2)
            else:
                a = round(b - 0.01, 2)
        return a, b

    x1, x2 = axis(box.x1, box.x2)
    y1, y2 = axis(box.y1, box.y2)
    return NormalizedBox(x1, y1, x2, y2)


def feature_handle(name: str) -> str:
    return "r_" + name.replace(" ", "_")


def serialize_triplet(name: str, box: NormalizedBox) -> str:
    if not re.fullmatch(_NAME, name):
        raise TripletError(f"region name {name!r} is not representable in the triplet grammar")
    if not isinstance(box, NormalizedBox):
        try:
            box = NormalizedBox.of(box)
        except (BoxError, TypeError) as exc:
            raise TripletError(str(exc)) from None
    coords = ", ".join(format_coord(v) for v in box.as_list())
    return f"{name} [{coords}]"


def _box_from_groups(groups: Sequence[str]) -> NormalizedBox | None:
    try:
        return NormalizedBox(*(float(g) for g in groups))
    except BoxError:
        return None


@dataclass(frozen=True, slots=True)
class RegionTriplet:
    name: str
    box: NormalizedBox
    feature: str | None = None

    def render(self) -> str:
        text = serialize_triplet(self.name, self.box)
        return f"{text} {self.feature}" if self.feature else text


# streaming -------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Text:
    text: str
    kind: str = field(default="text", init=False)


@dataclass(frozen=True, slots=True)
class RegionRequest:
    name: str
    box: NormalizedBox
    raw: str
    kind: str = field(default="region", init=False)


StreamEvent = Union[Text, RegionRequest]


class TripletStreamParser:
    """Incremental scanner; feed text chunks, collect events.

    Text is released as soon as no future input could make it part of a
    triplet.  A span that closes but fails the box check is released as text.
    """

    def __init__(self) -> None:
        self._buf = ""

    def feed(self, chunk: str) -> list[StreamEvent]:
        self._buf += chunk
        return self._drain(final=False)

    def close(self) -> list[StreamEvent]:
        return self._drain(final=True)

    def _drain(self, final: bool) -> list[StreamEvent]:
        events: list[StreamEvent] = []
        buf = self._buf
        pos = 0
        for m in TRIPLET_RE.finditer(buf):
            box = _box_from_groups(m.groups()[1:])
            if box is None:
                continue
            if m.start() > pos:
                events.append(Text(buf[pos : m.start()]))
            events.append(RegionRequest(m.group(1), box, m.group(0)))
            pos = m.end()
        rest = buf[pos:]
        if final:
            keep = len(rest)
        else:
            keep = _PENDING_RE.search(rest).start()
        if keep > 0:
            events.append(Text(rest[:keep]))
        self._buf = rest[keep:]
        return events


def coalesce(events: Iterable[StreamEvent]) -> list[StreamEvent]:
    out: list[StreamEvent] = []
    for e in events:
        if isinstance(e, Text):
            if not e.text:
                continue
            if out and isinstance(out[-1], Text):
                out[-1] = Text(out[-1].text + e.text)
                continue
        out.append(e)
    return out


def iter_stream(chunks: Iterable[str]) -> Iterator[StreamEvent]:
    parser = TripletStreamParser()
    for chunk in chunks:
        yield from parser.feed(chunk)
    yield from parser.close()


def parse_stream(chunks: Iterable[str]) -> list[StreamEvent]:
    return coalesce(iter_stream(chunks))


# CoT text --------------------------------------------------------------------


@dataclass(frozen=True)
class CoTStep:
    narration: str
    triplets: tuple[RegionTriplet, ...] = ()


Answer = Union[str, tuple[str, ...]]


@dataclass(frozen=True)
class CoTAnswer:
    steps: tuple[CoTStep, ...]
    final_answer: Answer

    @property
    def triplets(self) -> list[RegionTriplet]:
        return [t for s in self.steps for t in s.triplets]


_STEP_RE = re.compile(r"Step (\d+): (.*)")
_TRIPLET_LINE_RE = re.compile(rf"- {TRIPLET_RE.pattern} (r_[{NAME_CHARS}]+)")
_ANSWER_RE = re.compile(r"Answer: (.*)")


def render_answer(value: Answer) -> str:
    if isinstance(value, str):
        if value.startswith("[") or "\n" in value:
            raise TripletError(f"answer {value!r} cannot be rendered")
        return value
    for v in value:
        if any(c in v for c in ";[]\n"):
            raise TripletError(f"list item {v!r} cannot be rendered")
    return "[" + "; ".join(value) + "]"


def render_cot(answer: CoTAnswer) -> str:
    lines: list[str] = []
    for i, step in enumerate(answer.steps, 1):
        if "\n" in step.narration or "[" in step.narration or "]" in step.narration:
            raise TripletError(f"step {i} narration must be one line without brackets")
        lines.append(f"Step {i}: {step.narration}")
        for t in step.triplets:
            lines.append(f"- {serialize_triplet(t.name, t.box)} {t.feature or feature_handle(t.name)}")
    lines.append(f"Answer: {render_answer(answer.final_answer)}")
    return "\n".join(lines)


def parse_cot(text: str) -> CoTAnswer:
    """Inverse of :func:`render_cot`; errors carry the byte offset of the bad line."""
    steps: list[CoTStep] = []
    narration: str | None = None
    triplets: list[RegionTriplet] = []
    offset = 0
    body = text[:-1] if text.endswith("\n") else text
    lines = body.split("\n")
    for idx, line in enumerate(lines):
        here = offset
        offset += len(line.encode("utf-8")) + 1
        if m := _STEP_RE.fullmatch(line):
            if narration is not None:
                steps.append(CoTStep(narration, tuple(triplets)))
            if int(m.group(1)) != len(steps) + 1:
                raise CoTParseError(here, f"expected step {len(steps) + 1}, found {m.group(1)}")
            narration, triplets = m.group(2), []
        elif m := _TRIPLET_LINE_RE.fullmatch(line):
            if narration is None:
                raise CoTParseError(here, "triplet before any step")
            box = _box_from_groups(m.groups()[1:5])
            if box is None:
                raise CoTParseError(here, "invalid box")
            name, handle = m.group(1), m.group(6)
            triplets.append(RegionTriplet(name, box, handle))
        elif m := _ANSWER_RE.fullmatch(line):
            if idx != len(lines) - 1:
                raise CoTParseError(offset, "text after the answer line")
            if narration is not None:
                steps.append(CoTStep(narration, tuple(triplets)))
            raw = m.group(1)
            if raw.startswith("["):
                if not raw.endswith("]"):
                    raise CoTParseError(here, "unterminated list answer")
                inner = raw[1:-1]
                final: Answer = tuple(inner.split("; ")) if inner else ()
            else:
                final = raw
            return CoTAnswer(tuple(steps), final)
        else:
            raise CoTParseError(here, f"unrecognised line {line[:40]!r}")
    raise CoTParseError(len(text.encode("utf-8")), "missing answer line")
