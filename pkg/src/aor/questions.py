"""Canonical question schema, decomposition, and a small grammar for templated question text."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Mapping

from .cot import AND, ANY, ATTRIBUTE, CATEGORY, NONE, OR, QueryTarget
from .ontology import KBError, OntologyKB

SEMANTIC_TYPES = ("verify", "choose", "query")
SCOPES = ("global", "local")
_FOCUS_ALIASES = {"attribute": ATTRIBUTE, "attr": ATTRIBUTE, "category": CATEGORY, "any": ANY, "abnormality": ANY, "anyabnormality": ANY}


class QuestionError(ValueError):
    pass


@dataclass(frozen=True)
class Question:
    qid: str
    study_id: str
    semantic_type: str
    scope: str
    targets: tuple[QueryTarget, ...] = ()
    combinator: str = NONE
    answer: Any = None
    question_text: str | None = None
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.semantic_type not in SEMANTIC_TYPES:
            raise QuestionError(f"{self.qid}: semantic_type must be one of {SEMANTIC_TYPES}")
        if self.scope not in SCOPES:
            raise QuestionError(f"{self.qid}: scope must be one of {SCOPES}")
        if self.combinator not in (AND, OR, NONE):
            raise QuestionError(f"{self.qid}: combinator must be AND, OR or NONE")
        if self.scope == "local" and not self.targets:
            raise QuestionError(f"{self.qid}: local question without targets")


def parse_question(record: Mapping[str, Any], kb: OntologyKB | None = None) -> Question:
    """Validate one canonical question record; object/attribute names resolve through ``kb`` when given."""
    try:
        qid = str(record["qid"])
        study = str(record["study_id"])
        stype = str(record["semantic_type"]).lower()
        scope = str(record["scope"]).lower()
    except KeyError as exc:
        raise QuestionError(f"question record missing {exc}") from None
    targets = []
    for t in record.get("targets") or []:
        try:
            kind = _FOCUS_ALIASES[str(t.get("focus_kind", "any")).lower()]
            obj = str(t["object"])
        except (KeyError, AttributeError):
            raise QuestionError(f"{qid}: malformed target {t!r}") from None
        value = t.get("focus_value")
        if kb is not None:
            try:
                obj = kb.resolve_object(obj)
                if kind == ATTRIBUTE:
                    value = kb.resolve_attribute(str(value))
            except KBError as exc:
                raise QuestionError(f"{qid}: {exc}") from None
        try:
            targets.append(QueryTarget(obj, kind, None if kind == ANY else str(value)))
        except ValueError as exc:
            raise QuestionError(f"{qid}: {exc}") from None
    combinator = str(record.get("combinator") or NONE).upper()
    known = {"qid", "study_id", "semantic_type", "scope", "targets", "combinator", "answer", "question_text"}
    return Question(
        qid, study, stype, scope, tuple(targets), combinator, record.get("answer"), record.get("question_text"),
        {k: v for k, v in record.items() if k not in known},
    )


def question_to_record(q: Question) -> dict[str, Any]:
    rec = {
        "qid": q.qid,
        "study_id": q.study_id,
        "semantic_type": q.semantic_type,
        "scope": q.scope,
        "targets": [{"object": t.object, "focus_kind": t.focus_kind, "focus_value": t.focus_value} for t in q.targets],
        "combinator": q.combinator,
    }
    if q.question_text is not None:
        rec["question_text"] = q.question_text
    if q.answer is not None:
        rec["answer"] = q.answer
    return rec


def decompose_question(question: Question | Mapping[str, Any] | str, kb: OntologyKB | None = None) -> tuple[list[QueryTarget], str]:
    """Split a question into its sub-targets and the combinator that joins their answers."""
    if isinstance(question, str):
        if kb is None:
            raise QuestionError("parsing question text needs a KB")
        targets, comb, scope = parse_question_text(question, kb)
        if scope == "global":
            return [], NONE
        return targets, comb
    if not isinstance(question, Question):
        question = parse_question(question, kb)
    targets, comb = list(question.targets), question.combinator
    if question.scope == "global":
        return [], NONE
    if comb == NONE and len(targets) != 1 and question.semantic_type != "choose":
        raise QuestionError(f"{question.qid}: {len(targets)} targets need AND or OR")
    if comb != NONE and len(targets) < 2:
        raise QuestionError(f"{question.qid}: {comb} needs at least two targets")
    return targets, comb


# templated question text -----------------------------------------------------

_GLOBAL = re.compile(r"(are there any abnormalities|is there any abnormality)( in the image| in this image)?\??", re.I)


def _attr(kb: OntologyKB, text: str) -> str:
    return kb.resolve_attribute(text.strip())


def _obj(kb: OntologyKB, text: str) -> str:
    return kb.resolve_object(re.sub(r"^the\s+", "", text.strip(), flags=re.I))


def parse_question_text(text: str, kb: OntologyKB) -> tuple[list[QueryTarget], str, str]:
    """Parse the templated verify-question forms into ``(targets, combinator, scope)``."""
    s = " ".join(text.strip().split())
    if _GLOBAL.fullmatch(s):
        return [], NONE, "global"
    body = s.rstrip("?")
    try:
        if m := re.fullmatch(r"is (?:the )?(.+?) abnormal", body, re.I):
            return [QueryTarget(_obj(kb, m[1]), ANY)], NONE, "local"
        if m := re.fullmatch(r"are there any abnormalities in (?:the )?(.+)", body, re.I):
            return [QueryTarget(_obj(kb, m[1]), ANY)], NONE, "local"
        if m := re.fullmatch(r"is there (either|both) (.+?) (or|and) (.+?) in (?:the )?(.+)", body, re.I):
            want = "or" if m[1].lower() == "either" else "and"
            if m[3].lower() != want:
                raise QuestionError(f"mismatched {m[1]}/{m[3]} in {text!r}")
            o = _obj(kb, m[5])
            return [QueryTarget(o, ATTRIBUTE, _attr(kb, m[2])), QueryTarget(o, ATTRIBUTE, _attr(kb, m[4]))], want.upper(), "local"
        if m := re.fullmatch(r"is there any (.+?) in (?:the )?(.+)", body, re.I):
            cat = m[1].strip().lower()
            for key, name in kb.categories:
                if cat in (key, name.lower()):
                    return [QueryTarget(_obj(kb, m[2]), CATEGORY, key)], NONE, "local"
        if m := re.fullmatch(r"is there (.+?) in (?:the )?(.+?) (and|or) (.+?) in (?:the )?(.+)", body, re.I):
            return (
                [
                    QueryTarget(_obj(kb, m[2]), ATTRIBUTE, _attr(kb, m[1])),
                    QueryTarget(_obj(kb, m[5]), ATTRIBUTE, _attr(kb, m[4])),
                ],
                m[3].upper(),
                "local",
            )
        if m := re.fullmatch(r"is there (?:an? )?(.+?) in (?:the )?(.+)", body, re.I):
            return [QueryTarget(_obj(kb, m[2]), ATTRIBUTE, _attr(kb, m[1]))], NONE, "local"
    except KBError as exc:
        raise QuestionError(f"cannot parse {text!r}: {exc}") from None
    raise QuestionError(f"cannot parse {text!r}")


def render_question_text(q: Question, kb: OntologyKB) -> str:
    if q.question_text:
        return q.question_text
    if q.scope == "global":
        return "Are there any abnormalities?"

    def focus(t: QueryTarget) -> str:
        if t.focus_kind == ATTRIBUTE:
            return kb.attr(t.focus_value).display_name
        if t.focus_kind == CATEGORY:
            return f"any {kb.category_name(t.focus_value)}"
        return "any abnormality"

    def where(t: QueryTarget) -> str:
        return f"the {kb.obj(t.object).display_name}"

    ts = q.targets
    if q.semantic_type == "query":
        t = ts[0]
        if t.focus_kind == CATEGORY:
            return f"List all {kb.category_name(t.focus_value)} findings in {where(t)}."
        return f"List all abnormalities in {where(t)}."
    if q.semantic_type == "choose":
        opts = " or ".join(option_label(q, t, kb) for t in ts)
        if len({t.object for t in ts}) == 1:
            return f"Which is present in {where(ts[0])}, {opts}?"
        return f"Where is {focus(ts[0])} present, {opts}?"
    if len(ts) == 1:
        t = ts[0]
        if t.focus_kind == ANY:
            return f"Is {where(t)} abnormal?"
        return f"Is there {focus(t)} in {where(t)}?"
    joiner = " and " if q.combinator == AND else " or "
    if len({t.object for t in ts}) == 1 and all(t.focus_kind == ATTRIBUTE for t in ts) and len(ts) == 2:
        lead = "both" if q.combinator == AND else "either"
        return f"Is there {lead} {focus(ts[0])}{joiner}{focus(ts[1])} in {where(ts[0])}?"
    return "Is there " + joiner.join(f"{focus(t)} in {where(t)}" for t in ts) + "?"


def option_label(q: Question, t: QueryTarget, kb: OntologyKB) -> str:
    """Label echoed back for a choose option: whichever of object/focus varies across options."""
    same_object = len({x.object for x in q.targets}) == 1
    if same_object:
        if t.focus_kind == ATTRIBUTE:
            return kb.attr(t.focus_value).display_name
        if t.focus_kind == CATEGORY:
            return kb.category_name(t.focus_value)
        return "abnormality"
    return kb.obj(t.object).display_name


