"""Per-image study graphs: object/attribute statuses plus region boxes."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from .geometry import BoxError, NormalizedBox, normalize_box
from .ontology import KBError, OntologyKB, UnknownIdError


class Status(str, enum.Enum):
    PRESENT = "present"
    ABSENT = "absent"
    UNKNOWN = "unknown"

    @classmethod
    def parse(cls, value: Any) -> "Status":
        if isinstance(value, Status):
            return value
        if isinstance(value, bool):
            return cls.PRESENT if value else cls.ABSENT
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise AnnotationError(f"bad status {value!r}") from None


class AnnotationError(ValueError):
    pass


class RestrictionError(KBError):
    """An (object, attribute) pair outside the KB restriction table."""


class CausalConflictError(ValueError):
    pass


class MissingBoxError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class StudyGraph:
    study_id: str
    facts: Mapping[tuple[str, str], Status] = field(default_factory=dict)
    boxes: Mapping[str, NormalizedBox] = field(default_factory=dict)
    image_size: tuple[int, int] | None = None

    def box(self, object_id: str) -> NormalizedBox:
        try:
            return self.boxes[object_id]
        except KeyError:
            raise MissingBoxError(f"study {self.study_id}: no box for {object_id!r}") from None


def build_study_graph(annotation: Mapping[str, Any], kb: OntologyKB) -> StudyGraph:
    """Ingest one annotation record (pixel boxes + explicit facts)."""
    try:
        study_id = str(annotation["study_id"])
        w, h = annotation["image_width"], annotation["image_height"]
    except KeyError as exc:
        raise AnnotationError(f"annotation missing {exc}") from None
    boxes: dict[str, NormalizedBox] = {}
    for reg in annotation.get("regions", []):
        oid = kb.resolve_object(str(reg["name"]))
        try:
            boxes[oid] = normalize_box(reg["box"], w, h)
        except BoxError as exc:
            raise AnnotationError(f"study {study_id}, region {reg['name']!r}: {exc}") from None
    facts: dict[tuple[str, str], Status] = {}
    for f in annotation.get("facts", []):
        oid = kb.resolve_object(str(f["region"]))
        aid = kb.resolve_attribute(str(f["attribute"]))
        if not kb.is_allowed(oid, aid):
            raise RestrictionError(f"study {study_id}: {aid!r} cannot occur at {oid!r}")
        status = Status.parse(f["status"])
        if status is not Status.UNKNOWN:
            facts[(oid, aid)] = status
    return StudyGraph(study_id, facts, boxes, (int(w), int(h)))


def propagate_causal(graph: StudyGraph, kb: OntologyKB) -> StudyGraph:
    """Close Present facts under the causal relation at each object."""
    facts = dict(graph.facts)
    for (oid, aid), status in sorted(graph.facts.items()):
        if status is not Status.PRESENT:
            continue
        for parent in kb.causal_parents(aid):
            current = facts.get((oid, parent), Status.UNKNOWN)
            if current is Status.ABSENT:
                raise CausalConflictError(
                    f"study {graph.study_id}: {aid!r} present at {oid!r} but implied {parent!r} is absent"
                )
            if not kb.is_allowed(oid, parent):
                raise RestrictionError(f"implied {parent!r} not allowed at {oid!r}")
            facts[(oid, parent)] = Status.PRESENT
    if facts == graph.facts:
        return graph
    return replace(graph, facts=facts)


def attribute_status(graph: StudyGraph, obj: str, attr: str, kb: OntologyKB | None = None) -> Status:
    if kb is not None:
        kb.obj(obj)
        kb.attr(attr)
        if not kb.is_allowed(obj, attr):
            raise RestrictionError(f"{attr!r} cannot occur at {obj!r}")
    return graph.facts.get((obj, attr), Status.UNKNOWN)


def study_graph_to_record(graph: StudyGraph) -> dict[str, Any]:
    """Normalized-box form used by internal tooling and tests."""
    return {
        "study_id": graph.study_id,
        "boxes": {k: v.as_list() for k, v in sorted(graph.boxes.items())},
        "facts": [
            {"region": o, "attribute": a, "status": s.value} for (o, a), s in sorted(graph.facts.items())
        ],
    }


def load_graphs(annotations, kb: OntologyKB) -> dict[str, StudyGraph]:
    """Build and propagate graphs for an iterable of annotation records."""
    out: dict[str, StudyGraph] = {}
    for rec in annotations:
        g = propagate_causal(build_study_graph(rec, kb), kb)
        if g.study_id in out:
            raise AnnotationError(f"duplicate study {g.study_id}")
        out[g.study_id] = g
    return out


__all__ = [
    "AnnotationError",
    "CausalConflictError",
    "MissingBoxError",
    "RestrictionError",
    "Status",
    "StudyGraph",
    "UnknownIdError",
    "attribute_status",
    "build_study_graph",
    "load_graphs",
    "propagate_causal",
]
