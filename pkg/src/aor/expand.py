"""Expand (image, question, answer) samples into (image, question, region boxes, CoT answer)."""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .cot import NONE, NarrationTable, combine_answers, compile_template, default_narration, instantiate
from .geometry import NormalizedBox
from .ontology import KBError, OntologyKB
from .questions import Question, QuestionError, decompose_question, option_label, parse_question, render_question_text
from .study import CausalConflictError, MissingBoxError, StudyGraph
from .triplets import Answer, CoTAnswer, CoTStep, render_cot


class ExpansionError(ValueError):
    kind = "expansion_error"

    def __init__(self, message: str, qid: str | None = None, study_id: str | None = None, diff: dict | None = None):
        super().__init__(message)
        self.qid = qid
        self.study_id = study_id
        self.diff = diff

    def to_record(self) -> dict[str, Any]:
        rec = {"qid": self.qid, "study_id": self.study_id, "kind": self.kind, "message": str(self)}
        if self.diff is not None:
            rec["diff"] = self.diff
        return rec


class GoldMismatchError(ExpansionError):
    kind = "gold_mismatch"


class UnknownStudyError(ExpansionError):
    kind = "unknown_study"


class InvalidQuestionError(ExpansionError):
    kind = "invalid_question"


class MissingRegionBoxError(ExpansionError):
    kind = "missing_box"


@dataclass(frozen=True)
class ExpandedSample:
    question: Question
    question_text: str
    region_boxes: tuple[tuple[str, NormalizedBox], ...]
    cot_answer: CoTAnswer | None
    final_answer: Answer

    @property
    def qid(self) -> str:
        return self.question.qid

    @property
    def study_id(self) -> str:
        return self.question.study_id

    def to_record(self) -> dict[str, Any]:
        q = self.question
        rec: dict[str, Any] = {
            "qid": q.qid,
            "study_id": q.study_id,
            "question_text": self.question_text,
            "semantic_type": q.semantic_type,
            "scope": q.scope,
            "targets": [{"object": t.object, "focus_kind": t.focus_kind, "focus_value": t.focus_value} for t in q.targets],
            "combinator": q.combinator,
            "answer": q.answer,
            "region_boxes": [{"object": o, "box": b.as_list()} for o, b in self.region_boxes],
            "cot_answer": None,
            "final_answer": _jsonable(self.final_answer),
        }
        if self.cot_answer is not None:
            rec["cot_answer"] = {
                "steps": [
                    {
                        "narration": s.narration,
                        "triplets": [{"name": t.name, "box": t.box.as_list(), "feature": t.feature} for t in s.triplets],
                    }
                    for s in self.cot_answer.steps
                ],
                "final": _jsonable(self.cot_answer.final_answer),
                "text": render_cot(self.cot_answer),
            }
        return rec


def _jsonable(ans: Answer) -> Any:
    return list(ans) if isinstance(ans, tuple) else ans


def canonical_answer(value: Any) -> Any:
    """Comparable form: lowercased string, or sorted tuple of lowercased strings for lists."""
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (list, tuple)):
        return tuple(sorted(" ".join(str(v).lower().split()) for v in value))
    if value is None:
        return None
    return " ".join(str(value).lower().split())


def _answers_match(gold: Any, got: Answer, semantic_type: str) -> bool:
    g = canonical_answer(gold)
    if semantic_type in ("choose", "query") and isinstance(g, str):
        g = (g,) if g not in ("", "none") else ()
    return g == canonical_answer(got)


def _region_boxes(answer: CoTAnswer, kb: OntologyKB, graph: StudyGraph) -> tuple[tuple[str, NormalizedBox], ...]:
    seen: dict[str, NormalizedBox] = {}
    for t in answer.triplets:
        oid = kb.resolve_object(t.name)
        if oid not in seen:
            seen[oid] = graph.box(oid)
    return tuple(seen.items())


def expand_sample(
    sample: Question | Mapping[str, Any],
    kb: OntologyKB,
    graph: StudyGraph | None,
    texts: NarrationTable | None = None,
) -> ExpandedSample:
    texts = texts or default_narration()
    try:
        q = sample if isinstance(sample, Question) else parse_question(sample, kb)
    except QuestionError as exc:
        qid = sample.get("qid") if isinstance(sample, Mapping) else None
        sid = sample.get("study_id") if isinstance(sample, Mapping) else None
        raise InvalidQuestionError(str(exc), qid, sid) from None
    qtext = render_question_text(q, kb)
    if graph is None:
        raise UnknownStudyError(f"no study graph for {q.study_id!r}", q.qid, q.study_id)
    if graph.study_id != q.study_id:
        raise UnknownStudyError(f"graph {graph.study_id!r} does not match study {q.study_id!r}", q.qid, q.study_id)
    if q.scope == "global":
        return ExpandedSample(q, qtext, (), None, q.answer)

    try:
        targets, comb = decompose_question(q)
        if q.semantic_type == "query" and len(targets) != 1:
            raise QuestionError(f"{q.qid}: query questions take exactly one target")
        steps: list[CoTStep] = []
        subs: list[str] = []
        mode = "query" if q.semantic_type == "query" else "verify"
        final: Answer
        for t in targets:
            tpl = compile_template(t, kb, texts, allow_impossible=True)
            ans = instantiate(tpl, graph, kb, texts, mode=mode)
            steps.extend(ans.steps)
            subs.append(ans.final_answer)
        if q.semantic_type == "query":
            final = subs[0]
        elif q.semantic_type == "choose":
            labels = [option_label(q, t, kb) for t in targets]
            chosen = tuple(sorted(lab for lab, s in zip(labels, subs) if s == "yes"))
            final = chosen
            steps.append(
                CoTStep(texts["choose"].format(options=", ".join(labels), chosen=", ".join(chosen) or texts["nothing"]))
            )
        elif comb == NONE:
            final = subs[0]
        else:
            final = combine_answers(subs, comb)
            steps.append(CoTStep(texts["combine"].format(answers=", ".join(subs), combinator=comb, final=final)))
        cot = CoTAnswer(tuple(steps), final)
        boxes = _region_boxes(cot, kb, graph)
    except MissingBoxError as exc:
        raise MissingRegionBoxError(str(exc), q.qid, q.study_id) from None
    except (QuestionError, KBError, ValueError) as exc:
        if isinstance(exc, ExpansionError):
            raise
        raise InvalidQuestionError(str(exc), q.qid, q.study_id) from None

    if not _answers_match(q.answer, final, q.semantic_type):
        raise GoldMismatchError(
            f"{q.qid}: derived answer {_jsonable(final)!r} != gold {q.answer!r}",
            q.qid,
            q.study_id,
            {"expected": q.answer, "derived": _jsonable(final)},
        )
    return ExpandedSample(q, qtext, boxes, cot, final)


# corpus ----------------------------------------------------------------------


@dataclass
class CorpusResult:
    records: list[dict[str, Any]]
    errors: list[dict[str, Any]]
    stats: dict[str, Any] = field(default_factory=dict)


_WORKER: dict[str, Any] = {}


def _init_worker(kb: OntologyKB, graphs: Mapping[str, StudyGraph], texts: NarrationTable) -> None:
    _WORKER.update(kb=kb, graphs=graphs, texts=texts)


def _expand_one(rec: Mapping[str, Any]) -> tuple[str, dict[str, Any]]:
    kb, graphs, texts = _WORKER["kb"], _WORKER["graphs"], _WORKER["texts"]
    try:
        sample = expand_sample(rec, kb, graphs.get(str(rec.get("study_id"))), texts)
    except ExpansionError as exc:
        return "error", exc.to_record()
    return "ok", sample.to_record()


def _qid_key(rec: Mapping[str, Any]) -> tuple[str, str]:
    return str(rec.get("qid", "")), str(rec.get("study_id", ""))


def expand_corpus(
    samples: Iterable[Mapping[str, Any]],
    kb: OntologyKB,
    graphs: Mapping[str, StudyGraph],
    *,
    collect_errors: bool = False,
    jobs: int = 1,
    texts: NarrationTable | None = None,
) -> CorpusResult:
    """Expand every sample, ordered by qid.

    In fail-fast mode (the default) the first error in qid order is raised;
    with ``collect_errors`` errors are returned as records instead.
    """
    texts = texts or default_narration()
    ordered = sorted(samples, key=_qid_key)
    results: list[tuple[str, dict[str, Any]]] = []
    if jobs <= 1:
        _init_worker(kb, graphs, texts)
        for rec in ordered:
            kind, out = _expand_one(rec)
            results.append((kind, out))
            if kind == "error" and not collect_errors:
                break
    else:
        chunk = max(1, len(ordered) // (jobs * 4))
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(kb, graphs, texts)) as pool:
            results = list(pool.map(_expand_one, ordered, chunksize=chunk))

    records = [r for k, r in results if k == "ok"]
    errors = [r for k, r in results if k == "error"]
    if errors and not collect_errors:
        first = errors[0]
        cls = {c.kind: c for c in (GoldMismatchError, UnknownStudyError, InvalidQuestionError, MissingRegionBoxError)}
        raise cls.get(first["kind"], ExpansionError)(first["message"], first["qid"], first["study_id"], first.get("diff"))
    stats = {
        "total": len(ordered),
        "expanded": sum(1 for r in records if r["scope"] == "local"),
        "pass_through": sum(1 for r in records if r["scope"] == "global"),
        "errors": dict(sorted(Counter(e["kind"] for e in errors).items())),
        "error_count": len(errors),
    }
    return CorpusResult(records, errors, stats)


__all__ = [
    "CausalConflictError",
    "CorpusResult",
    "ExpandedSample",
    "ExpansionError",
    "GoldMismatchError",
    "InvalidQuestionError",
    "MissingRegionBoxError",
    "UnknownStudyError",
    "canonical_answer",
    "expand_corpus",
    "expand_sample",
]
