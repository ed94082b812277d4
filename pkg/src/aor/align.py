"""Report-to-region alignment: split reports into sentences bound to one anatomical region each.

Mentions come from a lexicon matcher, or from pre-parsed entity spans when an
upstream parser is available.  A short sentence that coordinates two regions,
each with its own predicate, is split in two.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .study import StudyGraph

Span = tuple[int, int]


@dataclass(frozen=True)
class AlignRules:
    version: int
    sections: tuple[str, ...]
    other_headers: tuple[str, ...]
    abbreviations: frozenset[str]
    boundaries: tuple[str, ...]
    predicates: frozenset[str]
    anaphora: frozenset[str]

    @classmethod
    def load(cls, path: str | Path | None = None) -> "AlignRules":
        if path is None:
            raw = (resources.files("aor") / "data" / "align_rules.json").read_text(encoding="utf-8")
        else:
            raw = Path(path).read_text(encoding="utf-8")
        d = json.loads(raw)
        return cls(
            int(d["version"]),
            tuple(s.lower() for s in d["sections"]),
            tuple(s.lower() for s in d.get("other_headers", [])),
            frozenset(a.lower() for a in d.get("abbreviations", [])),
            tuple(b.lower() for b in d.get("boundaries", [])),
            frozenset(p.lower() for p in d.get("predicates", [])),
            frozenset(a.lower() for a in d.get("anaphora", [])),
        )


@lru_cache(maxsize=1)
def default_rules() -> AlignRules:
    return AlignRules.load()


class RegionLexicon:
    """Surface forms (lowercase) to object ids.  Shared forms keep file order as priority."""

    def __init__(self, entries: Mapping[str, Sequence[str]]):
        self.entries = {k: tuple(" ".join(f.lower().split()) for f in v) for k, v in entries.items()}
        self.forms: dict[str, list[str]] = {}
        for oid, forms in self.entries.items():
            for f in forms:
                if f and oid not in self.forms.setdefault(f, []):
                    self.forms[f].append(oid)
        ordered = sorted(self.forms, key=lambda f: (-len(f), f))
        alts = "|".join(r"\s+".join(map(re.escape, f.split())) for f in ordered)
        self._re = re.compile(rf"(?<![\w/-])(?:{alts})(?![\w/-])", re.I) if ordered else None

    @classmethod
    def load(cls, path: str | Path | None = None) -> "RegionLexicon":
        if path is None:
            text = (resources.files("aor") / "data" / "lexicon.txt").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.parse(text)

    @classmethod
    def parse(cls, text: str) -> "RegionLexicon":
        entries: dict[str, list[str]] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise ValueError(f"lexicon line {lineno}: expected 'object_id: form; form'")
            oid, forms = line.split(":", 1)
            entries.setdefault(oid.strip(), []).extend(f.strip() for f in forms.split(";") if f.strip())
        return cls(entries)

    def dump(self) -> str:
        return "".join(f"{k}: {'; '.join(v)}\n" for k, v in self.entries.items())

    def restrict(self, object_ids: Iterable[str]) -> "RegionLexicon":
        keep = set(object_ids)
        return RegionLexicon({k: v for k, v in self.entries.items() if k in keep})

    def finditer(self, text: str) -> Iterable[re.Match]:
        return self._re.finditer(text) if self._re else ()


@dataclass(frozen=True, slots=True)
class Mention:
    object: str
    start: int
    end: int


@dataclass(frozen=True)
class RegionSentencePair:
    study_id: str
    object: str
    box: list[float]
    sentence: str

    def to_record(self) -> dict[str, Any]:
        return {"study_id": self.study_id, "object": self.object, "box": self.box, "sentence": self.sentence}


@dataclass
class AlignmentResult:
    study_id: str
    pairs: list[RegionSentencePair]
    sentences: int = 0
    unaligned: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def coverage(self) -> dict[str, Any]:
        return {
            "study_id": self.study_id,
            "sentences": self.sentences,
            "aligned": self.sentences - len(self.unaligned),
            "unaligned": len(self.unaligned),
            "unaligned_sentences": list(self.unaligned),
            "warnings": list(self.warnings),
        }


# sections and sentences --------------------------------------------------------


def _header_re(rules: AlignRules) -> re.Pattern:
    names = sorted(set(rules.sections) | set(rules.other_headers), key=len, reverse=True)
    return re.compile(r"(?<![\w])(" + "|".join(re.escape(n).replace(r"\ ", r"\s+") for n in names) + r")\s*:", re.I)


def section_spans(report: str, rules: AlignRules | None = None) -> dict[str, Span]:
    rules = rules or default_rules()
    heads = list(_header_re(rules).finditer(report))
    out: dict[str, Span] = {}
    for i, m in enumerate(heads):
        name = " ".join(m.group(1).lower().split())
        if name not in rules.sections or name in out:
            continue
        end = heads[i + 1].start() if i + 1 < len(heads) else len(report)
        start = m.end()
        while start < end and report[start].isspace():
            start += 1
        while end > start and report[end - 1].isspace():
            end -= 1
        out[name] = (start, end)
    return out


def extract_sections(report: str, rules: AlignRules | None = None) -> tuple[str, str]:
    """(findings, impression) bodies; a missing section is the empty string."""
    spans = section_spans(report, rules)
    get = lambda k: report[slice(*spans[k])] if k in spans else ""  # noqa: E731
    return get("findings"), get("impression")


def sentence_spans(text: str, rules: AlignRules | None = None, offset: int = 0) -> list[Span]:
    rules = rules or default_rules()
    spans: list[Span] = []
    start = 0
    n = len(text)
    for i, ch in enumerate(text):
        if ch not in ".;":
            continue
        if ch == "." and i + 1 < n and not text[i + 1].isspace():
            continue  # decimals, inner abbreviation dots
        if ch == ".":
            j = i
            while j > 0 and not text[j - 1].isspace():
                j -= 1
            token = text[j : i + 1].lower().lstrip("(\"'")
            if token in rules.abbreviations:
                continue
        spans.append((start, i + 1))
        start = i + 1
    spans.append((start, n))
    out = []
    for a, b in spans:
        while a < b and text[a].isspace():
            a += 1
        while b > a and text[b - 1].isspace():
            b -= 1
        if b > a and any(c.isalnum() for c in text[a:b]):
            out.append((a + offset, b + offset))
    return out


def split_sentences(text: str, rules: AlignRules | None = None) -> list[str]:
    return [text[a:b] for a, b in sentence_spans(text, rules)]


# mentions and splitting -------------------------------------------------------


def extract_mentions(sentence: str, lexicon: RegionLexicon) -> list[tuple[str, Span]]:
    """Longest-match, non-overlapping, case-insensitive lexicon hits, left to right."""
    out = []
    for m in lexicon.finditer(sentence):
        form = " ".join(m.group(0).lower().split())
        for oid in lexicon.forms[form]:
            out.append((oid, (m.start(), m.end())))
    return out


def _groups(mentions: Sequence[tuple[str, Span]]) -> list[tuple[Span, tuple[str, ...]]]:
    by_span: dict[Span, list[str]] = {}
    for oid, span in mentions:
        ids = by_span.setdefault(span, [])
        if oid not in ids:
            ids.append(oid)
    return [(s, tuple(v)) for s, v in sorted(by_span.items())]


def _words(text: str) -> list[str]:
    return re.findall(r"[a-z]+", text.lower())


def _split_spans(
    sentence: str, mentions: Sequence[tuple[str, Span]], rules: AlignRules
) -> list[tuple[Span, tuple[str, ...]]]:
    groups = _groups(mentions)
    whole = [((0, len(sentence)), tuple(dict.fromkeys(o for _, ids in groups for o in ids)))]
    if len(groups) != 2 or set(groups[0][1]) == set(groups[1][1]):
        return whole
    (s1, ids1), (s2, ids2) = groups
    between = sentence[s1[1] : s2[0]]
    bound = re.search(r"\s*(?:,\s*(?:(?:" + "|".join(rules.boundaries) + r")\s+)?|\s(?:" + "|".join(rules.boundaries) + r")\s+)", between, re.I)
    if not bound:
        return whole
    # the boundary must be the last thing before the second mention (modulo a determiner/side word)
    tail = between[bound.end() :]
    if len(_words(tail)) > 2:
        return whole
    left_pred = between[: bound.start()]
    right_pred = sentence[s2[1] :]
    if not (set(_words(left_pred)) & rules.predicates and set(_words(right_pred)) & rules.predicates):
        return whole
    a_end = s1[1] + bound.start()
    b_start = s1[1] + bound.end()
    return [((0, a_end), ids1), ((b_start, len(sentence)), ids2)]


def split_multi_region(
    sentence: str, mentions: Sequence[tuple[str, Span]], rules: AlignRules | None = None
) -> list[tuple[str, tuple[str, ...]]]:
    """Split ``A is x and B is y`` into two sub-sentences; anything else stays whole."""
    rules = rules or default_rules()
    return [(sentence[a:b].strip(), ids) for (a, b), ids in _split_spans(sentence, mentions, rules)]


# alignment -------------------------------------------------------------------


def _entity_mentions(entities: Sequence[Mapping[str, Any]], a: int, b: int) -> list[tuple[str, Span]]:
    out = []
    for e in entities:
        s, t = int(e["start"]), int(e["end"])
        if a <= s and t <= b:
            out.append((str(e["object"]), (s - a, t - a)))
    return sorted(out, key=lambda m: (m[1], m[0]))


def align(
    report: str,
    graph: StudyGraph,
    lexicon: RegionLexicon,
    rules: AlignRules | None = None,
    entities: Sequence[Mapping[str, Any]] | None = None,
) -> AlignmentResult:
    """Pair every region mentioned in findings/impression with its (sub-)sentence.

    ``entities`` (``{"start", "end", "object"}`` offsets into ``report``) replace
    lexicon matching when supplied.
    """
    rules = rules or default_rules()
    result = AlignmentResult(graph.study_id, [])
    spans = section_spans(report, rules)
    if not spans and not re.search(_header_re(rules), report):
        spans = {"findings": (0, len(report))}
    seen: set[tuple[str, str]] = set()
    previous: tuple[str, ...] = ()
    for name in rules.sections:
        if name not in spans:
            continue
        sa, sb = spans[name]
        for a, b in sentence_spans(report[sa:sb], rules, sa):
            sent = report[a:b]
            result.sentences += 1
            mentions = _entity_mentions(entities, a, b) if entities is not None else extract_mentions(sent, lexicon)
            if mentions:
                parts = split_multi_region(sent, mentions, rules)
            else:
                first = _words(sent)[:1]
                parts = [(sent, previous)] if previous and first and first[0] in rules.anaphora else []
            if not parts:
                result.unaligned.append(sent)
                continue
            for text, ids in parts:
                for oid in ids:
                    if oid not in graph.boxes:
                        result.warnings.append(f"{graph.study_id}: no box for {oid!r}; skipped pair for {text!r}")
                        continue
                    if (oid, text) in seen:
                        continue
                    seen.add((oid, text))
                    result.pairs.append(RegionSentencePair(graph.study_id, oid, graph.boxes[oid].as_list(), text))
            previous = parts[-1][1]
    return result


_WORKER: dict[str, Any] = {}


def _init_worker(graphs: Mapping[str, StudyGraph], lexicon: RegionLexicon, rules: AlignRules) -> None:
    _WORKER.update(graphs=graphs, lexicon=lexicon, rules=rules)


def _align_one(rec: Mapping[str, Any]) -> AlignmentResult:
    sid = str(rec["study_id"])
    graph = _WORKER["graphs"].get(sid)
    if graph is None:
        res = AlignmentResult(sid, [])
        res.warnings.append(f"{sid}: unknown study; report skipped")
        return res
    return align(str(rec.get("text", "")), graph, _WORKER["lexicon"], _WORKER["rules"], rec.get("entities"))


def align_corpus(
    reports: Iterable[Mapping[str, Any]],
    graphs: Mapping[str, StudyGraph],
    lexicon: RegionLexicon,
    rules: AlignRules | None = None,
    *,
    jobs: int = 1,
) -> tuple[list[dict[str, Any]], dict[str, Any]]:
    """Align every report; returns (pair records, coverage summary) in input order."""
    rules = rules or default_rules()
    reports = list(reports)
    if jobs <= 1:
        _init_worker(graphs, lexicon, rules)
        results = [_align_one(r) for r in reports]
    else:
        chunk = max(1, len(reports) // (jobs * 4))
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(graphs, lexicon, rules)) as pool:
            results = list(pool.map(_align_one, reports, chunksize=chunk))
    pairs = [p.to_record() for r in results for p in r.pairs]
    total = sum(r.sentences for r in results)
    unaligned = sum(len(r.unaligned) for r in results)
    summary = {
        "rules_version": rules.version,
        "reports": len(results),
        "sentences": total,
        "aligned": total - unaligned,
        "unaligned": unaligned,
        "coverage": (total - unaligned) / total if total else 1.0,
        "pairs": len(pairs),
        "warnings": sum(len(r.warnings) for r in results),
        "studies": [r.coverage() for r in results],
    }
    return pairs, summary
