"""Chain-of-thought templates: compilation over the KB and instantiation on a study.

A template walks three stages: identify the sub-objects of the queried
object (skipped for leaves), enumerate the attributes in scope, then assess
each attribute at the object or sub-objects that may carry it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Literal, Sequence

from .ontology import KBError, OntologyKB
from .study import RestrictionError, Status, StudyGraph, attribute_status
from .triplets import Answer, CoTAnswer, CoTStep, RegionTriplet, feature_handle, quantize_box

ATTRIBUTE = "attribute"
CATEGORY = "category"
ANY = "any"
FOCUS_KINDS = (ATTRIBUTE, CATEGORY, ANY)

AND, OR, NONE = "AND", "OR", "NONE"


@dataclass(frozen=True, slots=True)
class QueryTarget:
    object: str
    focus_kind: str = ANY
    focus_value: str | None = None

    def __post_init__(self) -> None:
        if self.focus_kind not in FOCUS_KINDS:
            raise ValueError(f"focus_kind must be one of {FOCUS_KINDS}, got {self.focus_kind!r}")
        if (self.focus_kind == ANY) != (self.focus_value is None):
            raise ValueError("focus_value is required for attribute/category focus and forbidden for any")

    def key(self) -> str:
        return f"{self.object}|{self.focus_kind}|{self.focus_value or ''}"


@dataclass(frozen=True, slots=True)
class FollowUp:
    trigger: str
    cue: str
    attribute: str
    regions: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class StepSchema:
    kind: Literal["sub_objects", "attributes", "assess", "impossible"]
    narration: str
    regions: tuple[str, ...] = ()
    attributes: tuple[str, ...] = ()
    follow_ups: tuple[FollowUp, ...] = ()


@dataclass(frozen=True)
class CoTTemplate:
    target: QueryTarget
    steps: tuple[StepSchema, ...]
    impossible: bool = False

    def inspected_pairs(self) -> list[tuple[str, str]]:
        """(object, attribute) pairs whose status decides the answer."""
        return [(r, s.attributes[0]) for s in self.steps if s.kind == "assess" for r in s.regions]

    def region_ids(self) -> set[str]:
        out: set[str] = set()
        for s in self.steps:
            out.update(s.regions)
            for f in s.follow_ups:
                out.update(f.regions)
        return out

    def to_record(self) -> dict[str, Any]:
        return {
            "target": {"object": self.target.object, "focus_kind": self.target.focus_kind, "focus_value": self.target.focus_value},
            "impossible": self.impossible,
            "steps": [
                {
                    "kind": s.kind,
                    "narration": s.narration,
                    "regions": list(s.regions),
                    "attributes": list(s.attributes),
                    "follow_ups": [f.attribute for f in s.follow_ups],
                }
                for s in self.steps
            ],
        }


# narration table -------------------------------------------------------------


@dataclass(frozen=True)
class NarrationTable:
    texts: dict[str, Any]
    follow_ups: tuple[FollowUp, ...] = field(default=())

    @classmethod
    def load(cls, path: str | Path | None = None) -> "NarrationTable":
        if path is None:
            raw = (resources.files("aor") / "data" / "narration.json").read_text(encoding="utf-8")
        else:
            raw = Path(path).read_text(encoding="utf-8")
        doc = json.loads(raw)
        ups = tuple(
            FollowUp(f["trigger"], f["cue"], f["attribute"], tuple(f["regions"])) for f in doc.get("follow_ups", [])
        )
        return cls(doc, ups)

    def __getitem__(self, key: str) -> Any:
        return self.texts[key]

    def follow_ups_for(self, kb: OntologyKB, trigger: str) -> tuple[FollowUp, ...]:
        # entries that reference ids missing from this KB are ignored
        out = []
        for f in self.follow_ups:
            if f.trigger != trigger or not kb.has_attribute(f.attribute):
                continue
            regions = tuple(r for r in f.regions if kb.has_object(r) and kb.is_allowed(r, f.attribute))
            if regions:
                out.append(FollowUp(f.trigger, f.cue, f.attribute, regions))
        return tuple(out)


@lru_cache(maxsize=1)
def default_narration() -> NarrationTable:
    return NarrationTable.load()


def _names(kb: OntologyKB, ids: Iterable[str], kind: str = "object") -> str:
    get = kb.obj if kind == "object" else kb.attr
    return ", ".join(get(i).display_name for i in ids)


# compilation -----------------------------------------------------------------


def check_target(target: QueryTarget, kb: OntologyKB) -> None:
    kb.obj(target.object)
    if target.focus_kind == ATTRIBUTE:
        kb.attr(target.focus_value)
        if not kb.is_allowed(target.object, target.focus_value):
            raise RestrictionError(f"{target.focus_value!r} cannot occur at {target.object!r}")
    elif target.focus_kind == CATEGORY and target.focus_value not in kb.category_ids:
        raise KBError(f"unknown category {target.focus_value!r}")


def compile_template(
    target: QueryTarget,
    kb: OntologyKB,
    texts: NarrationTable | None = None,
    *,
    allow_impossible: bool = False,
) -> CoTTemplate:
    texts = texts or default_narration()
    obj = kb.obj(target.object)
    try:
        check_target(target, kb)
    except RestrictionError:
        if not allow_impossible:
            raise
        narration = texts["impossible"].format(attribute=kb.attr(target.focus_value).display_name, object=obj.display_name)
        step = StepSchema("impossible", narration[0].upper() + narration[1:], (obj.id,))
        return CoTTemplate(target, (step,), impossible=True)

    kids = kb.children(obj.id)
    scope = (obj.id, *kids)
    steps: list[StepSchema] = []
    if kids:
        steps.append(
            StepSchema("sub_objects", texts["sub_objects"].format(object=obj.display_name, children=_names(kb, kids)), scope)
        )

    if target.focus_kind == ATTRIBUTE:
        attrs = [target.focus_value]
        line = texts["attributes"]["attribute"].format(attribute=kb.attr(target.focus_value).display_name)
    else:
        pool = set().union(*(kb.allowed_attributes(o) for o in scope))
        if target.focus_kind == CATEGORY:
            pool = {a for a in pool if kb.attr(a).category == target.focus_value}
            key = "category"
            fmt = {"category": kb.category_name(target.focus_value)}
        else:
            key = "any"
            fmt = {}
        attrs = sorted(pool)
        if not attrs:
            key += "_empty"
        line = texts["attributes"][key].format(object=obj.display_name, attributes=_names(kb, attrs, "attr"), **fmt)
    # with nothing to assess, still ground the answer on the queried object
    steps.append(StepSchema("attributes", line, () if attrs else (obj.id,), tuple(attrs)))

    for a in attrs:
        regions = tuple(r for r in scope if kb.is_allowed(r, a))
        steps.append(StepSchema("assess", "", regions, (a,), texts.follow_ups_for(kb, a)))
    return CoTTemplate(target, tuple(steps))


def enumerate_templates(kb: OntologyKB, texts: NarrationTable | None = None) -> list[CoTTemplate]:
    """One template per (object, focus): every attribute, every category, and any-abnormality."""
    texts = texts or default_narration()
    out = []
    for o in kb.object_ids:
        for a in kb.attribute_ids:
            out.append(compile_template(QueryTarget(o, ATTRIBUTE, a), kb, texts, allow_impossible=True))
        for c in kb.category_ids:
            out.append(compile_template(QueryTarget(o, CATEGORY, c), kb, texts))
        out.append(compile_template(QueryTarget(o, ANY), kb, texts))
    return out


def count_templates(kb: OntologyKB) -> int:
    return len(enumerate_templates(kb))


# instantiation ---------------------------------------------------------------


def _triplet(kb: OntologyKB, graph: StudyGraph, oid: str) -> RegionTriplet:
    name = kb.obj(oid).display_name
    return RegionTriplet(name, quantize_box(graph.box(oid)), feature_handle(name))


def _summarize(statuses: Sequence[Status]) -> str:
    if Status.PRESENT in statuses:
        return "present"
    if statuses and all(s is Status.ABSENT for s in statuses):
        return "absent"
    return "unknown"


def instantiate(
    template: CoTTemplate,
    graph: StudyGraph,
    kb: OntologyKB,
    texts: NarrationTable | None = None,
    *,
    mode: Literal["verify", "query"] = "verify",
) -> CoTAnswer:
    """Resolve a template against one study.

    ``verify`` answers yes/no (yes iff any inspected pair is present);
    ``query`` answers the sorted names of attributes found present.
    """
    texts = texts or default_narration()
    # fail on missing boxes before any narration is produced
    for s in template.steps:
        for r in s.regions:
            graph.box(r)

    steps: list[CoTStep] = []
    found: list[str] = []
    for s in template.steps:
        if s.kind in ("sub_objects", "impossible", "attributes"):
            steps.append(CoTStep(s.narration, tuple(_triplet(kb, graph, r) for r in s.regions)))
            continue
        a = s.attributes[0]
        aname = kb.attr(a).display_name
        statuses = [attribute_status(graph, r, a, kb) for r in s.regions]
        outcome = _summarize(statuses)
        hits = [r for r, st in zip(s.regions, statuses) if st is Status.PRESENT]
        if hits:
            found.append(aname)
        text = texts["assess"][outcome].format(
            attribute=aname, regions=_names(kb, s.regions), hits=_names(kb, hits)
        )
        triplets = [_triplet(kb, graph, r) for r in s.regions]
        if outcome == "present":
            for f in s.follow_ups:
                f_stat = [attribute_status(graph, r, f.attribute, kb) for r in f.regions]
                f_hits = [r for r, st in zip(f.regions, f_stat) if st is Status.PRESENT]
                f_out = texts["follow_up_outcome"][_summarize(f_stat)].format(hits=_names(kb, f_hits))
                text += texts["follow_up"].format(
                    trigger=aname, cue=f.cue, attribute=kb.attr(f.attribute).display_name, outcome=f_out
                )
                triplets.extend(_triplet(kb, graph, r) for r in f.regions)
        steps.append(CoTStep(text[0].upper() + text[1:], tuple(triplets)))

    final: Answer
    if mode == "query":
        final = tuple(sorted(found))
        steps.append(CoTStep(texts["query"].format(found=", ".join(final) or texts["nothing"])))
    else:
        final = "yes" if found else "no"
    return CoTAnswer(tuple(steps), final)


def combine_answers(sub_answers: Sequence[str | bool], combinator: str) -> str:
    if not sub_answers:
        raise ValueError("need at least one sub-answer")
    if combinator != NONE and len(sub_answers) < 2:
        raise ValueError(f"{combinator} needs at least two sub-answers")
    if combinator == NONE and len(sub_answers) != 1:
        raise ValueError("NONE takes exactly one sub-answer")
    vals = [_truth(v) for v in sub_answers]
    if combinator == AND:
        ok = all(vals)
    elif combinator == OR:
        ok = any(vals)
    elif combinator == NONE:
        ok = vals[0]
    else:
        raise ValueError(f"unknown combinator {combinator!r}")
    return "yes" if ok else "no"


def _truth(v: str | bool) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s not in ("yes", "no"):
        raise ValueError(f"not a yes/no answer: {v!r}")
    return s == "yes"
