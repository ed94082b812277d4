"""Deterministic synthetic world for desk-scale tests.

Gold answers here are computed by scanning facts directly and do not go
through the CoT compiler, so expansion over this corpus is a real
end-to-end consistency check.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .align import RegionLexicon
from .ontology import OntologyKB, kb_to_document, reference_kb, sub_kb
from .records import write_json, write_jsonl

SYNTH_LAYOUT: dict[str, tuple[float, float, float, float]] = {
    "right_lung": (0.10, 0.12, 0.47, 0.85),
    "right_upper_lung_zone": (0.12, 0.15, 0.45, 0.40),
    "right_lower_lung_zone": (0.11, 0.58, 0.46, 0.83),
    "right_costophrenic_angle": (0.08, 0.76, 0.22, 0.90),
    "left_lung": (0.53, 0.12, 0.90, 0.85),
    "left_upper_lung_zone": (0.55, 0.15, 0.88, 0.40),
    "left_lower_lung_zone": (0.54, 0.58, 0.89, 0.83),
    "left_costophrenic_angle": (0.78, 0.76, 0.92, 0.90),
    "mediastinum": (0.38, 0.08, 0.68, 0.80),
    "upper_mediastinum": (0.40, 0.08, 0.62, 0.38),
    "cardiac_silhouette": (0.38, 0.42, 0.72, 0.80),
    "right_atrium": (0.38, 0.52, 0.50, 0.74),
    "cavoatrial_junction": (0.42, 0.44, 0.50, 0.52),
    "svc": (0.42, 0.20, 0.50, 0.44),
    "trachea": (0.46, 0.05, 0.54, 0.32),
    "spine": (0.45, 0.05, 0.55, 0.95),
}

SYNTH_ATTRIBUTES = (
    "lung_opacity", "consolidation", "atelectasis", "lobar_segmental_collapse", "pleural_effusion",
    "pneumothorax", "enlarged_cardiac_silhouette", "mediastinal_widening", "picc", "endotracheal_tube",
    "fracture", "spinal_fracture", "scoliosis", "pneumonia", "low_lung_volumes",
)

NORMAL_PHRASES = ("is unremarkable", "is clear", "is normal", "appears normal")


def synth_kb() -> OntologyKB:
    return sub_kb(reference_kb(), SYNTH_LAYOUT, SYNTH_ATTRIBUTES)


@dataclass
class SynthWorld:
    kb: OntologyKB
    lexicon: RegionLexicon
    annotations: list[dict[str, Any]]
    questions: list[dict[str, Any]]
    reports: list[dict[str, Any]]
    boxes: list[dict[str, Any]]
    seed: int

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "kb": out / "kb.json",
            "lexicon": out / "lexicon.txt",
            "studies": out / "studies.jsonl",
            "questions": out / "questions.jsonl",
            "reports": out / "reports.jsonl",
            "boxes": out / "boxes.jsonl",
        }
        write_json(paths["kb"], kb_to_document(self.kb))
        paths["lexicon"].write_text(self.lexicon.dump(), encoding="utf-8")
        write_jsonl(paths["studies"], self.annotations)
        write_jsonl(paths["questions"], self.questions)
        write_jsonl(paths["reports"], self.reports)
        write_jsonl(paths["boxes"], self.boxes)
        return paths


def _closure(kb: OntologyKB, facts: dict[tuple[str, str], str]) -> None:
    for (o, a), s in list(facts.items()):
        if s == "present":
            for p in kb.causal_parents(a):
                facts[(o, p)] = "present"


def _scope(kb: OntologyKB, obj: str) -> list[str]:
    return [obj, *kb.children(obj)]


def _present_attrs(kb: OntologyKB, facts: Mapping[tuple[str, str], str], obj: str, kind: str, value: str | None) -> list[str]:
    found = set()
    for o in _scope(kb, obj):
        for a in kb.allowed_attributes(o):
            if kind == "attribute" and a != value:
                continue
            if kind == "category" and kb.attr(a).category != value:
                continue
            if facts.get((o, a)) == "present":
                found.add(a)
    return sorted(found)


def _yes(b: bool) -> str:
    return "yes" if b else "no"


def _make_question(rng: np.random.Generator, kb: OntologyKB, facts, study_id: str, qid: str) -> dict[str, Any]:
    objs = kb.object_ids
    kind = rng.choice(["attr", "attr", "any", "category", "compound", "choose", "query", "global"])
    base = {"qid": qid, "study_id": study_id, "combinator": "NONE"}

    def pick_attr_target(obj: str) -> dict[str, Any] | None:
        allowed = sorted(kb.allowed_attributes(obj))
        if not allowed:
            return None
        return {"object": obj, "focus_kind": "attribute", "focus_value": str(rng.choice(allowed))}

    def gold(t: dict[str, Any]) -> bool:
        return bool(_present_attrs(kb, facts, t["object"], t["focus_kind"], t.get("focus_value")))

    if kind == "global":
        any_present = any(s == "present" for s in facts.values())
        return {**base, "semantic_type": "verify", "scope": "global", "targets": [],
                "question_text": "Are there any abnormalities?", "answer": _yes(any_present)}
    if kind == "any":
        t = {"object": str(rng.choice(objs)), "focus_kind": "any", "focus_value": None}
        return {**base, "semantic_type": "verify", "scope": "local", "targets": [t], "answer": _yes(gold(t))}
    if kind == "category":
        t = {"object": str(rng.choice(objs)), "focus_kind": "category", "focus_value": str(rng.choice(kb.category_ids))}
        return {**base, "semantic_type": "verify", "scope": "local", "targets": [t], "answer": _yes(gold(t))}
    if kind == "query":
        obj = str(rng.choice(objs))
        found = _present_attrs(kb, facts, obj, "any", None)
        t = {"object": obj, "focus_kind": "any", "focus_value": None}
        return {**base, "semantic_type": "query", "scope": "local", "targets": [t],
                "answer": sorted(kb.attr(a).display_name for a in found)}
    if kind == "compound":
        ts = [pick_attr_target(str(o)) for o in rng.choice(objs, size=2, replace=False)]
        if all(ts):
            comb = str(rng.choice(["AND", "OR"]))
            vals = [gold(t) for t in ts]
            ans = all(vals) if comb == "AND" else any(vals)
            return {**base, "semantic_type": "verify", "scope": "local", "targets": ts, "combinator": comb, "answer": _yes(ans)}
    if kind == "choose":
        obj = str(rng.choice(objs))
        allowed = sorted(kb.allowed_attributes(obj))
        if len(allowed) >= 2:
            opts = [str(a) for a in rng.choice(allowed, size=2, replace=False)]
            ts = [{"object": obj, "focus_kind": "attribute", "focus_value": a} for a in opts]
            chosen = sorted(kb.attr(t["focus_value"]).display_name for t in ts if gold(t))
            return {**base, "semantic_type": "choose", "scope": "local", "targets": ts, "answer": chosen}
    # attribute verify; occasionally an anatomically impossible pair
    obj = str(rng.choice(objs))
    if rng.random() < 0.1:
        banned = sorted(set(kb.attribute_ids) - kb.allowed_attributes(obj))
        if banned:
            t = {"object": obj, "focus_kind": "attribute", "focus_value": str(rng.choice(banned))}
            return {**base, "semantic_type": "verify", "scope": "local", "targets": [t], "answer": "no"}
    t = pick_attr_target(obj) or {"object": obj, "focus_kind": "any", "focus_value": None}
    return {**base, "semantic_type": "verify", "scope": "local", "targets": [t], "answer": _yes(gold(t))}


def _cap(s: str) -> str:
    return s[0].upper() + s[1:]


def _make_report(rng: np.random.Generator, kb: OntologyKB, facts, study_id: str) -> dict[str, Any]:
    objs = kb.object_ids
    chosen = sorted(rng.choice(objs, size=min(5, len(objs)), replace=False))
    sentences = []
    for o in chosen:
        name = kb.obj(str(o)).display_name
        present = sorted(kb.attr(a).display_name for (oo, a), s in facts.items() if oo == o and s == "present")
        if present:
            sentences.append(f"The {name} shows {', '.join(present)}.")
        else:
            sentences.append(f"The {name} {rng.choice(NORMAL_PHRASES)}.")
    a, b = (str(x) for x in rng.choice(objs, size=2, replace=False))
    coordinated = (
        f"{_cap(kb.obj(a).display_name)} {rng.choice(NORMAL_PHRASES)} and "
        f"{kb.obj(b).display_name} {rng.choice(NORMAL_PHRASES)}."
    )
    sentences.insert(int(rng.integers(0, len(sentences) + 1)), coordinated)
    imp = f"No acute change in the {kb.obj(str(rng.choice(objs))).display_name}."
    text = "FINDINGS: " + " ".join(sentences) + " IMPRESSION: " + imp
    return {"study_id": study_id, "text": text, "coordinated": [coordinated]}


def synth_fixtures(seed: int = 7, n_studies: int = 100, questions_per_study: int = 3) -> SynthWorld:
    rng = np.random.default_rng(seed)
    kb = synth_kb()
    lexicon = RegionLexicon({o.id: [o.display_name] for o in kb.objects})
    annotations, questions, reports, boxes = [], [], [], []
    for i in range(n_studies):
        sid = f"s{i:05d}"
        w, h = int(rng.integers(2000, 3001)), int(rng.integers(2000, 3001))
        regions = []
        for oid in kb.object_ids:
            x1, y1, x2, y2 = (c + rng.uniform(-0.015, 0.015) for c in SYNTH_LAYOUT[oid])
            px = [int(round(min(max(x1, 0.0), 1.0) * w)), int(round(min(max(y1, 0.0), 1.0) * h)),
                  int(round(min(max(x2, 0.0), 1.0) * w)), int(round(min(max(y2, 0.0), 1.0) * h))]
            regions.append({"name": kb.obj(oid).display_name, "box": px})
            boxes.append({"study_id": sid, "object": oid, "box": [px[0] / w, px[1] / h, px[2] / w, px[3] / h]})
        facts: dict[tuple[str, str], str] = {}
        for oid in kb.object_ids:
            for a in sorted(kb.allowed_attributes(oid)):
                u = rng.random()
                if u < 0.08:
                    facts[(oid, a)] = "present"
                elif u < 0.6:
                    facts[(oid, a)] = "absent"
        _closure(kb, facts)
        annotations.append({
            "study_id": sid, "image_width": w, "image_height": h, "regions": regions,
            "facts": [{"region": o, "attribute": a, "status": s} for (o, a), s in sorted(facts.items())],
        })
        for j in range(questions_per_study):
            questions.append(_make_question(rng, kb, facts, sid, f"q{i:05d}_{j}"))
        reports.append(_make_report(rng, kb, facts, sid))
    return SynthWorld(kb, lexicon, annotations, questions, reports, boxes, seed)
