"""Independent reference implementations used as test oracles.

None of these import the code under test beyond plain data types, so an
agreement is evidence rather than a tautology.
"""

from __future__ import annotations

import re
from collections import deque
from typing import Any

import numpy as np

# -- ontology -------------------------------------------------------------------


def random_kb_doc(rng: np.random.Generator, n_obj: int, n_attr: int, n_cat: int, p_edge: float = 0.3) -> dict[str, Any]:
    """Random valid KB document: DAG hierarchy, DAG causal graph, causally closed restrictions."""
    objs = [f"o{i}" for i in range(n_obj)]
    attrs = [f"a{i}" for i in range(n_attr)]
    cats = [f"c{i}" for i in range(n_cat)]
    hierarchy = [[objs[i], objs[j]] for i in range(n_obj) for j in range(i + 1, n_obj) if rng.random() < p_edge]
    # edges only point from higher to lower index, so the causal graph is acyclic
    causal = [[attrs[j], attrs[i]] for i in range(n_attr) for j in range(i + 1, n_attr) if rng.random() < p_edge]
    pairs = {(o, a) for o in objs for a in attrs if rng.random() < 0.5}
    closed = set(pairs)
    for o, a in pairs:
        closed.update((o, p) for p in bfs_reach(causal, a))
    restrictions = {}
    for o, a in sorted(closed):
        restrictions.setdefault(o, []).append(a)
    return {
        "objects": [{"id": o, "name": f"object {o}"} for o in objs],
        "attributes": [{"id": a, "name": f"attribute {a}", "category": cats[int(rng.integers(0, n_cat))]} for a in attrs]
        if n_cat
        else [],
        "categories": [{"id": c, "name": f"category {c}"} for c in cats],
        "hierarchy": hierarchy,
        "causal": causal,
        "restrictions": [{"object": o, "attributes": v} for o, v in restrictions.items()],
    }


def bfs_reach(edges, start: str) -> set[str]:
    """Nodes reachable from ``start`` along (src, dst) edges, excluding ``start``."""
    adj: dict[str, list[str]] = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
    seen: set[str] = set()
    q = deque(adj.get(start, []))
    while q:
        n = q.popleft()
        if n not in seen and n != start:
            seen.add(n)
            q.extend(adj.get(n, []))
    return seen


# -- text -----------------------------------------------------------------------

REF_TRIPLET = re.compile(
    r"([A-Za-z0-9_/]+(?: [A-Za-z0-9_/]+)*) \[([0-9]\.[0-9]{2}), ([0-9]\.[0-9]{2}), ([0-9]\.[0-9]{2}), ([0-9]\.[0-9]{2})\]"
)


def reference_requests(text: str) -> list[tuple[str, tuple[float, ...]]]:
    """Whole-string scan: every grammatical span whose box is valid."""
    out = []
    for m in REF_TRIPLET.finditer(text):
        x1, y1, x2, y2 = (float(g) for g in m.groups()[1:])
        if 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1:
            out.append((m.group(1), (x1, y1, x2, y2)))
    return out


def naive_lcs(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    if a[0] == b[0]:
        return 1 + naive_lcs(a[1:], b[1:])
    return max(naive_lcs(a[1:], b), naive_lcs(a, b[1:]))


# -- geometry -------------------------------------------------------------------


def box_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _axis_sample_weights(coords: np.ndarray, size: int) -> np.ndarray:
    """Linear-interpolation weight rows for pixel coordinates; centers at i + 0.5, edge-clamped."""
    t = np.clip(coords - 0.5, 0, size - 1)
    lo = np.floor(t).astype(int)
    hi = np.minimum(lo + 1, size - 1)
    w = np.zeros((coords.size, size))
    for r, (a, b, f) in enumerate(zip(lo, hi, t - lo)):
        w[r, a] += 1 - f
        w[r, b] += f
    return w


def dense_roi(M: np.ndarray, box, out: int = 14, n: int = 200) -> np.ndarray:
    """Average n x n bilinear samples per bin.

    Bilinear interpolation is a tensor product of 1-D linear interpolation,
    so the mean over the n x n sample grid of a bin factorises into per-axis
    sample means; this is the same average, evaluated without materialising
    every sample.
    """
    C, H, W = M.shape
    x1, y1, x2, y2 = box[0] * W, box[1] * H, box[2] * W, box[3] * H
    sub = (np.arange(n) + 0.5) / n
    xs = x1 + (np.arange(out)[:, None] + sub[None, :]) * (x2 - x1) / out
    ys = y1 + (np.arange(out)[:, None] + sub[None, :]) * (y2 - y1) / out
    ax = _axis_sample_weights(xs.ravel(), W).reshape(out, n, W).mean(axis=1)
    ay = _axis_sample_weights(ys.ravel(), H).reshape(out, n, H).mean(axis=1)
    return np.stack([ay @ M[c] @ ax.T for c in range(C)])


def dense_roi_pointwise(M: np.ndarray, box, out: int = 14, n: int = 20) -> np.ndarray:
    """Literal per-sample loop, used to cross-check :func:`dense_roi` at small n."""
    C, H, W = M.shape
    x1, y1, x2, y2 = box[0] * W, box[1] * H, box[2] * W, box[3] * H
    res = np.zeros((C, out, out))
    for i in range(out):
        for j in range(out):
            acc = np.zeros(C)
            for a in range(n):
                y = y1 + (i + (a + 0.5) / n) * (y2 - y1) / out
                ty = min(max(y - 0.5, 0), H - 1)
                r0 = int(ty)
                r1, fy = min(r0 + 1, H - 1), ty - int(ty)
                for b in range(n):
                    x = x1 + (j + (b + 0.5) / n) * (x2 - x1) / out
                    tx = min(max(x - 0.5, 0), W - 1)
                    c0 = int(tx)
                    c1, fx = min(c0 + 1, W - 1), tx - int(tx)
                    acc += (M[:, r0, c0] * (1 - fy) * (1 - fx) + M[:, r0, c1] * (1 - fy) * fx
                            + M[:, r1, c0] * fy * (1 - fx) + M[:, r1, c1] * fy * fx)
            res[:, i, j] = acc / (n * n)
    return res


# -- generators -----------------------------------------------------------------

_WORDS = ["left", "right", "lung", "svc", "zone", "upper", "a/b", "x_1", "hilar", "apical", "angle", "mid"]
_PROSE = ["observe", "the", "no", "finding", "is", "seen", "present", "at", "clear", "-", ",", "(", ")", ":", "0.5", "r_x"]


def random_box(rng: np.random.Generator) -> tuple[float, float, float, float]:
    xs = sorted(rng.choice(101, size=2, replace=False))
    ys = sorted(rng.choice(101, size=2, replace=False))
    return xs[0] / 100, ys[0] / 100, xs[1] / 100, ys[1] / 100


def random_cot(rng: np.random.Generator):
    """Random CoTAnswer within the renderable grammar."""
    from aor.geometry import NormalizedBox
    from aor.triplets import CoTAnswer, CoTStep, RegionTriplet

    steps = []
    for _ in range(int(rng.integers(0, 5))):
        narration = " ".join(rng.choice(_PROSE, size=int(rng.integers(1, 9))))
        trips = []
        for _ in range(int(rng.integers(0, 4))):
            name = " ".join(rng.choice(_WORDS, size=int(rng.integers(1, 4))))
            trips.append(RegionTriplet(name, NormalizedBox(*random_box(rng)), "r_" + name.replace(" ", "_")))
        steps.append(CoTStep(narration, tuple(trips)))
    kind = rng.integers(0, 3)
    if kind == 0:
        final = str(rng.choice(["yes", "no"]))
    elif kind == 1:
        final = tuple(str(w) for w in rng.choice(_WORDS, size=int(rng.integers(0, 4)), replace=False))
    else:
        final = " ".join(rng.choice(_PROSE[:9], size=2))
    return CoTAnswer(tuple(steps), final)


def random_partition(rng: np.random.Generator, text: str) -> list[str]:
    if len(text) < 2:
        return [text]
    k = int(rng.integers(0, min(len(text), 40)))
    cuts = sorted(set(int(c) for c in rng.integers(1, len(text), size=k)))
    bounds = [0, *cuts, len(text)]
    return [text[a:b] for a, b in zip(bounds, bounds[1:])]


MALFORMED = [
    "bad [0.9, 0.1, 0.2]",
    "x [0.9, 0.1, 0.2, 0.3]",
    "x [0.10,0.20,0.30,0.40]",
    "x [1.50, 0.10, 1.90, 0.20]",
    "x [0.1, 0.2, 0.3, 0.4]",
    "x  [0.10, 0.20, 0.30, 0.40]",
    "x: [0.10, 0.20, 0.30, 0.40]",
    "x [0.10, 0.20, 0.30, 0.40",
    "x [0.10, 0.20, 0.10, 0.40]",
]
