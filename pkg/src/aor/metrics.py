"""Scoring for VQA answers, report text and region grounding."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

from .geometry import NormalizedBox, iou

THRESHOLDS = (0.3, 0.5, 0.7)


class MetricError(ValueError):
    pass


@lru_cache(maxsize=1)
def _canon_table() -> dict[str, Any]:
    return json.loads((resources.files("aor") / "data" / "canonical.json").read_text(encoding="utf-8"))


def canonical(text: Any) -> str:
    """Case-fold, trim and collapse whitespace."""
    return " ".join(str(text).lower().split())


def tokens(text: Any, *, drop_articles: bool = False) -> list[str]:
    """Lowercased word tokens with punctuation removed."""
    table = _canon_table()
    s = str(text).lower()
    s = re.sub(r"[^\w\s/-]", " ", s)
    toks = [t.strip(table["strip_chars"]) for t in s.split()]
    toks = [t for t in toks if t]
    if drop_articles:
        arts = set(table["articles"])
        toks = [t for t in toks if t not in arts]
    return toks


@dataclass(frozen=True)
class EvalRecord:
    qid: str
    gold: Any
    pred: Any
    gold_box: NormalizedBox | None = None
    pred_box: NormalizedBox | None = None


def _pairs(records: Iterable[EvalRecord | tuple[Any, Any]]) -> list[tuple[Any, Any]]:
    out = []
    for r in records:
        out.append((r.gold, r.pred) if isinstance(r, EvalRecord) else (r[0], r[1]))
    return out


def accuracy(records: Iterable[EvalRecord | tuple[Any, Any]]) -> float:
    pairs = _pairs(records)
    if not pairs:
        raise MetricError("accuracy of an empty record set")
    hits = sum(canonical(g) == canonical(p) for g, p in pairs)
    return hits / len(pairs)


def referring_accuracy(records: Iterable[EvalRecord | tuple[Any, Any]]) -> float:
    return accuracy(records)


def _label_set(value: Any) -> set[str]:
    if value is None:
        return set()
    if isinstance(value, str):
        value = [v for v in re.split(r"[;,]", value)] if value.strip() else []
    return {canonical(v) for v in value if canonical(v)}


def f1_counts(records: Iterable[EvalRecord | tuple[Any, Any]]) -> tuple[int, int, int]:
    tp = fp = fn = 0
    for g, p in _pairs(records):
        gs, ps = _label_set(g), _label_set(p)
        tp += len(gs & ps)
        fp += len(ps - gs)
        fn += len(gs - ps)
    return tp, fp, fn


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp + fp + fn == 0:
        return 1.0  # nothing to find and nothing predicted
    return 2 * tp / (2 * tp + fp + fn)


def f1_micro(records: Iterable[EvalRecord | tuple[Any, Any]]) -> float:
    records = list(records)
    if not records:
        raise MetricError("f1 of an empty record set")
    return f1_from_counts(*f1_counts(records))


def recall_open(pred: str, gold: str) -> float:
    """Fraction of gold tokens (articles dropped) that appear in the prediction."""
    g = set(tokens(gold, drop_articles=True))
    if not g:
        raise MetricError("empty gold answer")
    return len(g & set(tokens(pred, drop_articles=True))) / len(g)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(pred: str, gold: str, beta: float = 1.0) -> float:
    p, g = tokens(pred), tokens(gold)
    lcs = lcs_length(p, g)
    if lcs == 0:
        return 0.0
    prec, rec = lcs / len(p), lcs / len(g)
    return (1 + beta**2) * prec * rec / (rec + beta**2 * prec)


def grounding_recall(
    records: Iterable[EvalRecord | tuple[NormalizedBox, NormalizedBox]], thresholds: Sequence[float] = THRESHOLDS
) -> dict[float, float]:
    pairs = []
    for r in records:
        g, p = (r.gold_box, r.pred_box) if isinstance(r, EvalRecord) else r
        if g is None or p is None:
            qid = getattr(r, "qid", "?")
            raise MetricError(f"record {qid} is missing a gold or predicted box")
        pairs.append(iou(g, p))
    if not pairs:
        raise MetricError("grounding recall of an empty record set")
    return {t: sum(v >= t for v in pairs) / len(pairs) for t in thresholds}


# file-level evaluation --------------------------------------------------------


def _index(records: Iterable[Mapping[str, Any]]) -> dict[str, Mapping[str, Any]]:
    out = {}
    for r in records:
        key = str(r.get("qid", r.get("id", r.get("study_id"))))
        out[key] = r
    return out


def evaluate_vqa(gold: Iterable[Mapping[str, Any]], pred: Iterable[Mapping[str, Any]]) -> dict[str, Any]:
    preds = _index(pred)
    by_type: dict[str, list[tuple[Any, Any]]] = {}
    for g in gold:
        key = str(g.get("qid", g.get("id")))
        p = preds.get(key, {})
        ans = p.get("answer", p.get("final_answer"))
        by_type.setdefault(str(g.get("semantic_type", "verify")), []).append((g.get("answer", g.get("final_answer")), ans))
    out: dict[str, Any] = {}
    for kind, pairs in sorted(by_type.items()):
        out[f"{kind}_n"] = len(pairs)
        if kind == "query":
            out["query_f1_micro"] = f1_micro(pairs)
        elif kind == "open":
            out["open_recall"] = sum(recall_open("" if p is None else str(p), str(g)) for g, p in pairs) / len(pairs)
        else:
            out[f"{kind}_accuracy"] = accuracy([(g, "" if p is None else p) for g, p in pairs])
    return out


def evaluate_report(gold: Iterable[Mapping[str, Any]], pred: Iterable[Mapping[str, Any]]) -> dict[str, Any]:
    preds = _index(pred)
    scores = []
    external: dict[str, list[float]] = {}
    for g in gold:
        key = str(g.get("qid", g.get("id", g.get("study_id"))))
        p = preds.get(key, {})
        scores.append(rouge_l(str(p.get("text", "")), str(g.get("text", ""))))
        for col in ("bertscore", "f1chexbert"):
            if col in p:
                external.setdefault(col, []).append(float(p[col]))
    if not scores:
        raise MetricError("no gold reports")
    out: dict[str, Any] = {"n": len(scores), "rouge_l": sum(scores) / len(scores)}
    for col, vals in sorted(external.items()):
        out[col] = sum(vals) / len(vals)
    return out


def evaluate_grounding(gold: Iterable[Mapping[str, Any]], pred: Iterable[Mapping[str, Any]]) -> dict[str, Any]:
    preds = _index(pred)
    recs: list[EvalRecord] = []
    for g in gold:
        key = str(g.get("qid", g.get("id")))
        p = preds.get(key, {})
        gb = NormalizedBox.of(g["box"]) if g.get("box") is not None else None
        pb = NormalizedBox.of(p["box"]) if p.get("box") is not None else None
        recs.append(EvalRecord(key, g.get("object"), p.get("object"), gb, pb))
    out: dict[str, Any] = {"n": len(recs)}
    named = [r for r in recs if r.gold is not None and r.pred is not None]
    if named:
        out["referring_accuracy"] = referring_accuracy(named)
    for t, v in grounding_recall(recs).items():
        out[f"R@{t}"] = v
    return out
