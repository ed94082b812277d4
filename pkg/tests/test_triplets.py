from __future__ import annotations

import numpy as np
import pytest

from aor.geometry import NormalizedBox
from aor.triplets import (
    CoTAnswer,
    CoTParseError,
    CoTStep,
    RegionRequest,
    RegionTriplet,
    Text,
    TripletError,
    TripletStreamParser,
    parse_cot,
    parse_stream,
    quantize_box,
    render_cot,
    serialize_triplet,
)
from oracles import MALFORMED, random_cot, random_partition, reference_requests


def _requests(events):
    return [(e.name, e.box.as_list()) for e in events if isinstance(e, RegionRequest)]


def test_serialize_examples():
    assert serialize_triplet("svc", NormalizedBox(0.27, 0.08, 0.92, 0.81)) == "svc [0.27, 0.08, 0.92, 0.81]"
    assert serialize_triplet("x", NormalizedBox(0, 0, 1, 1)) == "x [0.00, 0.00, 1.00, 1.00]"
    text = serialize_triplet("a b", NormalizedBox(0.5, 0.5, 0.6, 0.6))
    assert text == "a b [0.50, 0.50, 0.60, 0.60]"
    ans = parse_cot(f"Step 1: look\n- {text} r_a_b\nAnswer: yes")
    assert ans.triplets[0].name == "a b" and ans.triplets[0].box == NormalizedBox(0.5, 0.5, 0.6, 0.6)


def test_serialize_errors():
    with pytest.raises(TripletError):
        serialize_triplet("svc", (0.5, 0.5, 0.4, 0.6))
    with pytest.raises(TripletError):
        serialize_triplet("bad[name", NormalizedBox(0, 0, 1, 1))


def test_quantize_widens_collapsed_axis():
    q = quantize_box(NormalizedBox(0.501, 0.2, 0.503, 0.3))
    assert q.x1 < q.x2


def test_split_at_every_character():
    text = "svc [0.27, 0.08, 0.92, 0.81] is clear"
    events = parse_stream(list(text))
    assert _requests(events) == [("svc", [0.27, 0.08, 0.92, 0.81])]
    assert events == parse_stream([text])


def test_no_brackets_and_arity():
    assert _requests(parse_stream(["no brackets here"])) == []
    events = parse_stream(["bad [0.9, 0.1, 0.2]"])
    assert events == [Text("bad [0.9, 0.1, 0.2]")]


@pytest.mark.parametrize("span", MALFORMED)
def test_malformed_spans_degrade_to_text(span):
    text = f"look at {span} now"
    for chunks in ([text], list(text)):
        events = parse_stream(chunks)
        assert _requests(events) == []
        assert "".join(e.text for e in events) == text


def test_request_fires_on_closing_bracket():
    p = TripletStreamParser()
    assert not any(isinstance(e, RegionRequest) for e in p.feed("left lung [0.10, 0.20, 0.30, 0.40"))
    assert [e.name for e in p.feed("] ok") if isinstance(e, RegionRequest)] == ["left lung"]


def test_text_released_early():
    p = TripletStreamParser()
    out = p.feed("Hello, world. ")
    assert "".join(e.text for e in out if isinstance(e, Text)) == "Hello, world. "


def test_round_trip_three_steps():
    ans = CoTAnswer(
        (
            CoTStep("Identify the sub-objects", (RegionTriplet("svc", NormalizedBox(0.27, 0.08, 0.92, 0.81), "r_svc"),)),
            CoTStep("Consider the findings"),
            CoTStep("Observe", (RegionTriplet("left lung", NormalizedBox(0.5, 0.1, 0.9, 0.8), "r_left_lung"),)),
        ),
        ("atelectasis", "lung opacity"),
    )
    assert parse_cot(render_cot(ans)) == ans
    assert parse_cot(render_cot(ans) + "\n") == ans


def test_truncated_text_offset():
    text = render_cot(CoTAnswer((CoTStep("a"),), "yes"))
    cut = text[: text.index("Answer")]
    with pytest.raises(CoTParseError) as exc:
        parse_cot(cut)
    assert exc.value.offset == len(cut.encode())
    bad = "Step 1: fine\n- svc [0.27, 0.08"
    with pytest.raises(CoTParseError) as exc:
        parse_cot(bad + "\nAnswer: no")
    assert exc.value.offset == bad.index("- svc")


def test_step_numbering_checked():
    with pytest.raises(CoTParseError):
        parse_cot("Step 2: skip\nAnswer: no")


def test_render_rejects_brackets_in_narration():
    with pytest.raises(TripletError):
        render_cot(CoTAnswer((CoTStep("see [x]"),), "no"))


@pytest.mark.parametrize("seed", range(10))
def test_random_round_trip_and_fragmentation(seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        ans = random_cot(rng)
        text = render_cot(ans)
        assert parse_cot(text) == ans
        whole = parse_stream([text])
        assert len(_requests(whole)) == len(ans.triplets)
        assert _requests(whole) == [(n, list(b)) for n, b in reference_requests(text)]
        for _ in range(5):
            assert parse_stream(random_partition(rng, text)) == whole
