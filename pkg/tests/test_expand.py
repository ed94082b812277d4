from __future__ import annotations

import json
from dataclasses import replace

import pytest

from aor.expand import (
    GoldMismatchError,
    InvalidQuestionError,
    UnknownStudyError,
    expand_corpus,
    expand_sample,
)
from aor.geometry import NormalizedBox
from aor.records import dumps
from aor.study import Status, StudyGraph
from aor.synth import synth_fixtures
from aor.study import load_graphs
from aor.triplets import parse_cot

CS = "cardiac_silhouette"


def _graph(kb, facts=None):
    boxes = {o: NormalizedBox(0.1, 0.1, 0.5, 0.5) for o in kb.object_ids}
    return StudyGraph("s1", {**{p: Status.ABSENT for p in kb.restrictions}, **(facts or {})}, boxes)


def _q(targets, answer, semantic_type="verify", combinator="NONE", scope="local", qid="q1"):
    return {
        "qid": qid,
        "study_id": "s1",
        "semantic_type": semantic_type,
        "scope": scope,
        "targets": [{"object": o, "focus_kind": k, "focus_value": v} for o, k, v in targets],
        "combinator": combinator,
        "answer": answer,
    }


def test_local_verify(ref_kb):
    s = expand_sample(_q([(CS, "any", None)], "no"), ref_kb, _graph(ref_kb))
    assert s.cot_answer is not None and s.final_answer == "no"
    assert {o for o, _ in s.region_boxes} == {CS, "right_atrium", "cavoatrial_junction"}
    assert s.question_text == "Is the cardiac silhouette abnormal?"


def test_global_pass_through(ref_kb):
    s = expand_sample(_q([], "yes", scope="global"), ref_kb, _graph(ref_kb))
    assert s.cot_answer is None and s.region_boxes == () and s.final_answer == "yes"
    assert s.question_text == "Are there any abnormalities?"


def test_gold_mismatch_with_diff(ref_kb):
    g = _graph(ref_kb, {(CS, "enlarged_cardiac_silhouette"): Status.PRESENT})
    with pytest.raises(GoldMismatchError) as exc:
        expand_sample(_q([(CS, "any", None)], "no"), ref_kb, g)
    assert exc.value.diff == {"expected": "no", "derived": "yes"}


def test_unknown_study(ref_kb):
    with pytest.raises(UnknownStudyError):
        expand_sample(_q([(CS, "any", None)], "no"), ref_kb, None)


def test_invalid_question(ref_kb):
    with pytest.raises(InvalidQuestionError):
        expand_sample(_q([("left_flipper", "any", None)], "no"), ref_kb, _graph(ref_kb))
    with pytest.raises(InvalidQuestionError):
        expand_sample(_q([(CS, "any", None), ("svc", "any", None)], [], semantic_type="query"), ref_kb, _graph(ref_kb))


def test_compound_and_choose_and_query(ref_kb):
    g = _graph(ref_kb, {("left_lung", "atelectasis"): Status.PRESENT})
    s = expand_sample(
        _q([("left_lung", "attribute", "atelectasis"), ("right_lung", "attribute", "atelectasis")], "no", combinator="AND"),
        ref_kb,
        g,
    )
    assert s.cot_answer.steps[-1].narration.startswith("Combining")
    s = expand_sample(
        _q([("left_lung", "attribute", "atelectasis"), ("right_lung", "attribute", "atelectasis")], ["left lung"], "choose"),
        ref_kb,
        g,
    )
    assert s.final_answer == ("left lung",)
    s = expand_sample(_q([("left_lung", "any", None)], "atelectasis", "query"), ref_kb, g)
    assert s.final_answer == ("atelectasis",)


def test_impossible_target_answers_no(ref_kb):
    s = expand_sample(_q([(CS, "attribute", "fracture")], "no"), ref_kb, _graph(ref_kb))
    assert s.final_answer == "no" and [o for o, _ in s.region_boxes] == [CS]


def test_record_schema_and_cot_text(ref_kb):
    rec = expand_sample(_q([(CS, "any", None)], "no"), ref_kb, _graph(ref_kb)).to_record()
    for key in ("qid", "study_id", "question_text", "region_boxes", "cot_answer", "final_answer"):
        assert key in rec
    parsed = parse_cot(rec["cot_answer"]["text"])
    assert len(parsed.steps) == len(rec["cot_answer"]["steps"])
    json.loads(dumps(rec))


def test_empty_corpus(ref_kb):
    res = expand_corpus([], ref_kb, {})
    assert res.records == [] and res.errors == []
    assert res.stats == {"total": 0, "expanded": 0, "pass_through": 0, "errors": {}, "error_count": 0}


def test_world_is_consistent(world, world_graphs):
    res = expand_corpus(world.questions, world.kb, world_graphs)
    assert res.stats["error_count"] == 0
    assert [r["qid"] for r in res.records] == sorted(q["qid"] for q in world.questions)
    assert expand_corpus(world.questions, world.kb, world_graphs).records == res.records


def _corrupt(world, graphs, n=3):
    """Flip the decisive facts of ``n`` single-attribute verify questions."""
    kb = world.kb
    graphs = dict(graphs)
    chosen = []
    for q in world.questions:
        t = q["targets"]
        if q["scope"] != "local" or q["semantic_type"] != "verify" or len(t) != 1 or t[0]["focus_kind"] != "attribute":
            continue
        obj, attr = t[0]["object"], t[0]["focus_value"]
        if not kb.is_allowed(obj, attr):
            continue
        g = graphs[q["study_id"]]
        facts = dict(g.facts)
        scope = [o for o in [obj, *kb.children(obj)] if kb.is_allowed(o, attr)]
        if q["answer"] == "yes":
            for o in scope:
                facts[(o, attr)] = Status.ABSENT
        else:
            facts[(obj, attr)] = Status.PRESENT
        graphs[q["study_id"]] = replace(g, facts=facts)
        chosen.append(q["qid"])
        if len(chosen) == n:
            break
    return graphs, chosen


def test_three_corrupted_graphs_collect():
    world = synth_fixtures(seed=7, n_studies=100, questions_per_study=1)
    graphs, chosen = _corrupt(world, load_graphs(world.annotations, world.kb))
    res = expand_corpus(world.questions, world.kb, graphs, collect_errors=True)
    assert len(res.records) == 97
    assert sorted(e["qid"] for e in res.errors) == sorted(chosen)
    assert res.stats["errors"] == {"gold_mismatch": 3}
    with pytest.raises(GoldMismatchError) as exc:
        expand_corpus(world.questions, world.kb, graphs)
    assert exc.value.qid == sorted(chosen)[0]


def test_parallel_matches_serial(world, world_graphs):
    a = expand_corpus(world.questions, world.kb, world_graphs, jobs=1)
    b = expand_corpus(world.questions, world.kb, world_graphs, jobs=4)
    assert [dumps(r) for r in a.records] == [dumps(r) for r in b.records]
