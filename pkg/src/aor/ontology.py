"""Anatomical ontology knowledge base.

A KB holds three relation graphs over anatomical objects and attributes:
the part-whole hierarchy between objects, causal implication between
attributes (child present => parent present), and the restriction table of
which attributes may occur at which objects.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable


class KBError(ValueError):
    """Base class for knowledge-base loading and query failures."""


class KBParseError(KBError):
    """The document is not a well-formed KB document."""


class DanglingReferenceError(KBError):
    """An edge or restriction references an id that does not exist."""


class CycleError(KBError):
    """The hierarchy or causal graph contains a cycle."""


class UnknownIdError(KBError, KeyError):
    """A query used an object or attribute id missing from the KB."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True, slots=True)
class AnatomicalObject:
    id: str
    display_name: str
    is_leaf: bool = True


@dataclass(frozen=True, slots=True)
class Attribute:
    id: str
    display_name: str
    category: str


@dataclass(frozen=True, slots=True)
class Violation:
    kind: str  # duplicate_id | empty_name | unknown_category | dangling_reference | cycle | leaf_mismatch | restriction_closure | empty
    location: str
    message: str

    def as_dict(self) -> dict[str, str]:
        return {"kind": self.kind, "location": self.location, "message": self.message}


@dataclass(frozen=True)
class OntologyKB:
    """Immutable KB. Build through :func:`load_kb` to get a validated instance."""

    objects: tuple[AnatomicalObject, ...]
    attributes: tuple[Attribute, ...]
    categories: tuple[tuple[str, str], ...]  # (key, display name)
    hierarchy: tuple[tuple[str, str], ...]  # (parent object, child object)
    causal: tuple[tuple[str, str], ...]  # (child attribute, parent attribute)
    restrictions: frozenset[tuple[str, str]]  # (object, attribute)
    declared_leaf: dict[str, bool] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        obj = {o.id: o for o in self.objects}
        attr = {a.id: a for a in self.attributes}
        kids: dict[str, set[str]] = {}
        for p, c in self.hierarchy:
            kids.setdefault(p, set()).add(c)
        parents: dict[str, set[str]] = {}
        for c, p in self.causal:
            parents.setdefault(c, set()).add(p)
        allowed: dict[str, set[str]] = {}
        for o, a in self.restrictions:
            allowed.setdefault(o, set()).add(a)
        object.__setattr__(self, "_obj", obj)
        object.__setattr__(self, "_attr", attr)
        object.__setattr__(self, "_kids", {k: tuple(sorted(v)) for k, v in kids.items()})
        object.__setattr__(self, "_cparents", {k: tuple(sorted(v)) for k, v in parents.items()})
        object.__setattr__(self, "_allowed", {k: frozenset(v) for k, v in allowed.items()})
        object.__setattr__(self, "_closure", {})
        # is_leaf is derived from the hierarchy, never trusted from input
        fixed = tuple(
            AnatomicalObject(o.id, o.display_name, o.id not in kids) for o in self.objects
        )
        object.__setattr__(self, "objects", fixed)
        object.__setattr__(self, "_obj", {o.id: o for o in fixed})

    # lookups -----------------------------------------------------------

    @property
    def object_ids(self) -> list[str]:
        return sorted(self._obj)

    @property
    def attribute_ids(self) -> list[str]:
        return sorted(self._attr)

    @property
    def category_ids(self) -> list[str]:
        return sorted(k for k, _ in self.categories)

    def obj(self, object_id: str) -> AnatomicalObject:
        try:
            return self._obj[object_id]
        except KeyError:
            raise UnknownIdError(f"unknown object id: {object_id!r}") from None

    def attr(self, attribute_id: str) -> Attribute:
        try:
            return self._attr[attribute_id]
        except KeyError:
            raise UnknownIdError(f"unknown attribute id: {attribute_id!r}") from None

    def has_object(self, object_id: str) -> bool:
        return object_id in self._obj

    def has_attribute(self, attribute_id: str) -> bool:
        return attribute_id in self._attr

    def category_name(self, key: str) -> str:
        for k, name in self.categories:
            if k == key:
                return name
        raise UnknownIdError(f"unknown category: {key!r}")

    def resolve_object(self, name: str) -> str:
        """Map an id or a display name (any case) to an object id."""
        if name in self._obj:
            return name
        key = " ".join(name.lower().replace("_", " ").split())
        for o in self.objects:
            if o.display_name.lower() == key or o.id.replace("_", " ") == key:
                return o.id
        raise UnknownIdError(f"unknown region: {name!r}")

    def resolve_attribute(self, name: str) -> str:
        if name in self._attr:
            return name
        key = " ".join(name.lower().replace("_", " ").split())
        for a in self.attributes:
            if a.display_name.lower() == key or a.id.replace("_", " ") == key:
                return a.id
        raise UnknownIdError(f"unknown attribute: {name!r}")

    # queries -----------------------------------------------------------

    def children(self, object_id: str) -> list[str]:
        self.obj(object_id)
        return list(self._kids.get(object_id, ()))

    def descendants(self, object_id: str) -> set[str]:
        seen: set[str] = set()
        stack = list(self.children(object_id))
        while stack:
            o = stack.pop()
            if o not in seen:
                seen.add(o)
                stack.extend(self._kids.get(o, ()))
        return seen

    def causal_parents(self, attribute_id: str) -> list[str]:
        """All attributes implied by ``attribute_id``, transitively, sorted by id."""
        self.attr(attribute_id)
        cache = self._closure
        if attribute_id not in cache:
            seen: set[str] = set()
            queue = deque(self._cparents.get(attribute_id, ()))
            while queue:
                a = queue.popleft()
                if a in seen or a == attribute_id:
                    continue
                seen.add(a)
                queue.extend(self._cparents.get(a, ()))
            cache[attribute_id] = tuple(sorted(seen))
        return list(cache[attribute_id])

    def allowed_attributes(self, object_id: str) -> frozenset[str]:
        self.obj(object_id)
        return self._allowed.get(object_id, frozenset())

    def is_allowed(self, object_id: str, attribute_id: str) -> bool:
        return (object_id, attribute_id) in self.restrictions

    def attributes_in_category(self, category: str) -> list[str]:
        return sorted(a.id for a in self.attributes if a.category == category)


# document <-> KB -----------------------------------------------------------

_REQUIRED_KEYS = ("objects", "attributes", "categories", "hierarchy", "causal", "restrictions")


def _edge(item: Any, a: str, b: str, where: str) -> tuple[str, str]:
    if isinstance(item, dict) and a in item and b in item:
        return str(item[a]), str(item[b])
    if isinstance(item, (list, tuple)) and len(item) == 2:
        return str(item[0]), str(item[1])
    raise KBParseError(f"{where}: expected {{{a!r}, {b!r}}} or a 2-element list, got {item!r}")


def kb_from_document(doc: dict[str, Any]) -> OntologyKB:
    """Build an (unvalidated) KB from the parsed document structure."""
    if not isinstance(doc, dict):
        raise KBParseError("KB document must be a mapping")
    missing = [k for k in _REQUIRED_KEYS if k not in doc]
    if missing:
        raise KBParseError(f"missing keys: {', '.join(missing)}")
    for k in _REQUIRED_KEYS:
        if not isinstance(doc[k], list):
            raise KBParseError(f"{k} must be a list")
    try:
        objects = tuple(
            AnatomicalObject(str(o["id"]), str(o.get("name", o.get("display_name", "")))) for o in doc["objects"]
        )
        declared = {str(o["id"]): bool(o["is_leaf"]) for o in doc["objects"] if "is_leaf" in o}
        attributes = tuple(
            Attribute(str(a["id"]), str(a.get("name", a.get("display_name", ""))), str(a["category"]))
            for a in doc["attributes"]
        )
        categories = tuple(
            (str(c["id"]), str(c.get("name", c["id"]))) if isinstance(c, dict) else (str(c), str(c))
            for c in doc["categories"]
        )
    except (KeyError, TypeError) as exc:
        raise KBParseError(f"malformed entry: {exc}") from None
    hierarchy = tuple(_edge(e, "parent", "child", "hierarchy") for e in doc["hierarchy"])
    causal = tuple(_edge(e, "child", "parent", "causal") for e in doc["causal"])
    pairs: set[tuple[str, str]] = set()
    for r in doc["restrictions"]:
        if isinstance(r, dict) and "attributes" in r:
            pairs.update((str(r["object"]), str(a)) for a in r["attributes"])
        else:
            pairs.add(_edge(r, "object", "attribute", "restrictions"))
    return OntologyKB(objects, attributes, categories, hierarchy, causal, frozenset(pairs), declared)


def kb_to_document(kb: OntologyKB) -> dict[str, Any]:
    grouped: dict[str, list[str]] = {}
    for o, a in sorted(kb.restrictions):
        grouped.setdefault(o, []).append(a)
    return {
        "objects": [{"id": o.id, "name": o.display_name} for o in kb.objects],
        "attributes": [{"id": a.id, "name": a.display_name, "category": a.category} for a in kb.attributes],
        "categories": [{"id": k, "name": n} for k, n in kb.categories],
        "hierarchy": [{"parent": p, "child": c} for p, c in kb.hierarchy],
        "causal": [{"child": c, "parent": p} for c, p in kb.causal],
        "restrictions": [{"object": o, "attributes": v} for o, v in grouped.items()],
    }


def _find_cycles(nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[list[str]]:
    """Strongly connected components that contain a cycle (Tarjan)."""
    adj: dict[str, list[str]] = {n: [] for n in nodes}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, [])
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    out: list[list[str]] = []
    counter = 0

    for root in sorted(adj):
        if root in index:
            continue
        work = [(root, iter(sorted(adj[root])))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(sorted(adj[w]))))
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            else:
                work.pop()
                if work:
                    low[work[-1][0]] = min(low[work[-1][0]], low[v])
                if low[v] == index[v]:
                    comp = []
                    while True:
                        w = stack.pop()
                        on_stack.discard(w)
                        comp.append(w)
                        if w == v:
                            break
                    if len(comp) > 1 or v in adj[v]:
                        out.append(sorted(comp))
    return out


def validate_kb(kb: OntologyKB) -> list[Violation]:
    """Every invariant violation in ``kb``; an empty list means the KB is valid."""
    report: list[Violation] = []
    if not kb.objects:
        report.append(Violation("empty", "objects", "no objects"))

    def dupes(ids: list[str], where: str) -> set[str]:
        seen: set[str] = set()
        for i in ids:
            if i in seen:
                report.append(Violation("duplicate_id", f"{where}/{i}", f"duplicate id {i!r}"))
            seen.add(i)
        return seen

    obj_ids = dupes([o.id for o in kb.objects], "objects")
    attr_ids = dupes([a.id for a in kb.attributes], "attributes")
    cat_ids = dupes([k for k, _ in kb.categories], "categories")

    for o in kb.objects:
        if not o.display_name.strip():
            report.append(Violation("empty_name", f"objects/{o.id}", "display_name is empty"))
    for a in kb.attributes:
        if not a.display_name.strip():
            report.append(Violation("empty_name", f"attributes/{a.id}", "display_name is empty"))
        if a.category not in cat_ids:
            report.append(Violation("unknown_category", f"attributes/{a.id}", f"unknown category {a.category!r}"))

    for i, (p, c) in enumerate(kb.hierarchy):
        for end in (p, c):
            if end not in obj_ids:
                report.append(Violation("dangling_reference", f"hierarchy[{i}]", f"unknown object {end!r}"))
    for i, (c, p) in enumerate(kb.causal):
        for end in (c, p):
            if end not in attr_ids:
                report.append(Violation("dangling_reference", f"causal[{i}]", f"unknown attribute {end!r}"))
    for o, a in sorted(kb.restrictions):
        if o not in obj_ids:
            report.append(Violation("dangling_reference", f"restrictions/{o}", f"unknown object {o!r}"))
        if a not in attr_ids:
            report.append(Violation("dangling_reference", f"restrictions/{o}/{a}", f"unknown attribute {a!r}"))

    for comp in _find_cycles(obj_ids, kb.hierarchy):
        report.append(Violation("cycle", "hierarchy", "cycle through " + " -> ".join(comp)))
    causal_cycles = _find_cycles(attr_ids, kb.causal)
    for comp in causal_cycles:
        report.append(Violation("cycle", "causal", "cycle through " + " -> ".join(comp)))

    parents_of = {o for o, _ in kb.hierarchy}
    for oid, flag in kb.declared_leaf.items():
        if oid in obj_ids and flag != (oid not in parents_of):
            report.append(Violation("leaf_mismatch", f"objects/{oid}", f"is_leaf={flag} contradicts hierarchy"))

    # propagation writes parents at the child's object, so they must be allowed there
    if not causal_cycles:
        for o, a in sorted(kb.restrictions):
            if a not in attr_ids or o not in obj_ids:
                continue
            for p in kb.causal_parents(a):
                if (o, p) not in kb.restrictions:
                    report.append(
                        Violation("restriction_closure", f"restrictions/{o}/{a}", f"implied attribute {p!r} not allowed at {o!r}")
                    )
    return report


_ERROR_FOR_KIND = {
    "cycle": CycleError,
    "dangling_reference": DanglingReferenceError,
}


def load_kb(source: str | Path | dict[str, Any]) -> OntologyKB:
    """Load and validate a KB from a path, JSON text, or an already parsed mapping."""
    if isinstance(source, dict):
        doc = source
    else:
        text = source
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            text = Path(source).read_text(encoding="utf-8")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise KBParseError(f"not valid JSON: {exc}") from None
    kb = kb_from_document(doc)
    violations = validate_kb(kb)
    if violations:
        # the most structural problem wins
        for kind in ("empty", "duplicate_id", "dangling_reference", "cycle"):
            hits = [v for v in violations if v.kind == kind]
            if hits:
                raise _ERROR_FOR_KIND.get(kind, KBParseError)("; ".join(v.message for v in hits))
        raise KBParseError("; ".join(v.message for v in violations))
    return kb


def reference_kb_path() -> Path:
    return Path(str(resources.files("aor") / "data" / "reference_kb.json"))


def reference_kb() -> OntologyKB:
    return load_kb(reference_kb_path())


def sub_kb(kb: OntologyKB, object_ids: Iterable[str], attribute_ids: Iterable[str]) -> OntologyKB:
    """Restrict ``kb`` to the given objects and attributes, keeping all categories."""
    objs = set(object_ids)
    attrs = set(attribute_ids)
    for a in list(attrs):
        attrs.update(kb.causal_parents(a))
    return OntologyKB(
        tuple(o for o in kb.objects if o.id in objs),
        tuple(a for a in kb.attributes if a.id in attrs),
        kb.categories,
        tuple((p, c) for p, c in kb.hierarchy if p in objs and c in objs),
        tuple((c, p) for c, p in kb.causal if c in attrs and p in attrs),
        frozenset((o, a) for o, a in kb.restrictions if o in objs and a in attrs),
    )
