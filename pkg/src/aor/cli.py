"""``aor``: one entry point for every pipeline.

Exit status is 0 on success, 2 on usage errors (bad flags, missing inputs)
and 1 on pipeline errors.  Commands that write files also write a run
manifest next to their main output; ``aor replay`` re-runs it and checks
the output hashes.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .align import RegionLexicon, align_corpus
from .cot import count_templates, enumerate_templates
from .expand import expand_corpus
from .geometry import PERTURB_LEVELS, FeatureMap, NormalizedBox, perturb_box, perturbation_mismatch, write_feature_map
from .metrics import evaluate_grounding, evaluate_report, evaluate_vqa
from .ontology import OntologyKB, load_kb, reference_kb, reference_kb_path, validate_kb
from .records import dumps, read_jsonl, sha256_file, write_json, write_jsonl
from .study import load_graphs
from .synth import synth_fixtures

MANIFEST_VERSION = 1
REFERENCE_ALIASES = ("reference", "ref", "ref_kb")


class UsageError(Exception):
    pass


def package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# helpers ---------------------------------------------------------------------


def _kb_path(arg: str | None) -> Path:
    if arg is None or arg.lower() in REFERENCE_ALIASES:
        return reference_kb_path()
    return Path(arg)


def _load_kb(arg: str | None) -> OntologyKB:
    if arg is None or arg.lower() in REFERENCE_ALIASES:
        return reference_kb()
    return load_kb(Path(arg))


def _require(*paths: str | Path | None) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise UsageError(f"input file not found: {p}")


def _write_out(path: str | None, records: list[Any]) -> None:
    if path is None:
        for r in records:
            print(dumps(r))
    else:
        write_jsonl(path, records)


class Run:
    """Collects inputs, outputs and stats for the manifest."""

    def __init__(self, args: argparse.Namespace, argv: Sequence[str]):
        self.args = args
        self.argv = list(argv)
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.stats: dict[str, Any] = {}
        self.manifest_path: Path | None = Path(args.manifest) if getattr(args, "manifest", None) else None

    def input(self, p: str | Path | None) -> None:
        if p is not None:
            self.inputs.append(Path(p))

    def output(self, p: str | Path | None, *, manifest_here: bool = False) -> None:
        if p is None:
            return
        self.outputs.append(Path(p))
        if manifest_here and self.manifest_path is None:
            self.manifest_path = Path(str(p) + ".manifest.json")

    def document(self) -> dict[str, Any]:
        return {
            "manifest_version": MANIFEST_VERSION,
            "tool": "aor",
            "subcommand": self.args.command,
            "argv": self.argv,
            "cwd": os.getcwd(),
            "seed": getattr(self.args, "seed", None),
            "versions": {"aor": package_version(), "python": platform.python_version(), "numpy": np.__version__},
            "inputs": {str(p): sha256_file(p) for p in self.inputs if p.is_file()},
            "outputs": {str(p): sha256_file(p) for p in self.outputs if p.is_file()},
            "stats": self.stats,
        }

    def finish(self) -> None:
        if self.manifest_path is not None:
            write_json(self.manifest_path, self.document())


# subcommands -----------------------------------------------------------------


def cmd_kb_validate(args: argparse.Namespace, run: Run) -> int:
    path = _kb_path(args.path)
    _require(path)
    run.input(path)
    kb = load_kb(path)
    violations = [v.as_dict() for v in validate_kb(kb)]
    run.stats = {"objects": len(kb.object_ids), "attributes": len(kb.attribute_ids), "violations": len(violations)}
    print(json.dumps(violations, indent=2))
    return 1 if violations else 0


def cmd_templates(args: argparse.Namespace, run: Run) -> int:
    path = _kb_path(args.kb)
    _require(path)
    run.input(path)
    kb = load_kb(path)
    if args.count_only:
        n = count_templates(kb)
        run.stats = {"templates": n}
        print(n)
        return 0
    tpls = [t.to_record() for t in enumerate_templates(kb)]
    run.stats = {"templates": len(tpls), "impossible": sum(t["impossible"] for t in tpls)}
    _write_out(args.out, tpls)
    run.output(args.out, manifest_here=True)
    return 0


def cmd_expand(args: argparse.Namespace, run: Run) -> int:
    _require(_kb_path(args.kb), args.graphs, args.questions)
    for p in (_kb_path(args.kb), args.graphs, args.questions):
        run.input(p)
    kb = _load_kb(args.kb)
    graphs = load_graphs(read_jsonl(args.graphs), kb)
    result = expand_corpus(read_jsonl(args.questions), kb, graphs, collect_errors=args.collect_errors, jobs=args.jobs)
    write_jsonl(args.out, result.records)
    run.output(args.out, manifest_here=True)
    if args.collect_errors:
        err_path = args.errors or f"{args.out}.errors.jsonl"
        write_jsonl(err_path, result.errors)
        run.output(err_path)
    run.stats = result.stats
    print(json.dumps(result.stats, sort_keys=True))
    return 0


def cmd_align(args: argparse.Namespace, run: Run) -> int:
    _require(_kb_path(args.kb), args.graphs, args.reports, args.lexicon)
    for p in (_kb_path(args.kb), args.graphs, args.reports, args.lexicon):
        run.input(p)
    kb = _load_kb(args.kb)
    graphs = load_graphs(read_jsonl(args.graphs), kb)
    lexicon = RegionLexicon.load(args.lexicon).restrict(kb.object_ids)
    pairs, summary = align_corpus(read_jsonl(args.reports), graphs, lexicon, jobs=args.jobs)
    write_jsonl(args.out, pairs)
    run.output(args.out, manifest_here=True)
    summary_path = args.summary or f"{args.out}.summary.json"
    write_json(summary_path, summary)
    run.output(summary_path)
    run.stats = {k: v for k, v in summary.items() if k != "studies"}
    print(json.dumps(run.stats, sort_keys=True))
    return 0


def _check_level(p: float) -> float:
    if not any(abs(p - lvl) < 1e-9 for lvl in PERTURB_LEVELS):
        raise UsageError(f"--p must be one of {PERTURB_LEVELS}")
    return p


def cmd_perturb(args: argparse.Namespace, run: Run) -> int:
    _require(args.boxes)
    run.input(args.boxes)
    p = _check_level(args.p)
    rng = np.random.default_rng(args.seed)
    lines = Path(args.boxes).read_text(encoding="utf-8").splitlines(keepends=True)
    out_lines = []
    moved = 0
    for raw in lines:
        if not raw.strip():
            continue
        rec = json.loads(raw)
        box = NormalizedBox.of(rec["box"])
        new = perturb_box(box, p, rng=rng, independent=args.independent)
        if new is box:
            # untouched boxes are copied byte for byte
            out_lines.append(raw if raw.endswith("\n") else raw + "\n")
            continue
        moved += 1
        out_lines.append(dumps({**rec, "box": new.as_list()}) + "\n")
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(out_lines)
    run.output(args.out, manifest_here=True)
    run.stats = {"boxes": len(out_lines), "moved": moved, "p": p}
    print(json.dumps(run.stats, sort_keys=True))
    return 0


def cmd_perturb_study(args: argparse.Namespace, run: Run) -> int:
    _require(args.boxes)
    run.input(args.boxes)
    studies: dict[str, dict[str, NormalizedBox]] = {}
    for rec in read_jsonl(args.boxes):
        studies.setdefault(str(rec["study_id"]), {})[str(rec["object"])] = NormalizedBox.of(rec["box"])
    levels = [_check_level(p) for p in args.levels] if args.levels else list(PERTURB_LEVELS)
    rates = perturbation_mismatch(list(studies.values()), levels, args.draws, args.seed, independent=args.independent)
    doc = {"draws": args.draws, "independent": args.independent, "mismatch_rate": {str(k): v for k, v in rates.items()}}
    run.stats = doc
    if args.out:
        write_json(args.out, doc)
        run.output(args.out, manifest_here=True)
    print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_eval(args: argparse.Namespace, run: Run) -> int:
    _require(args.gold, args.pred)
    run.input(args.gold)
    run.input(args.pred)
    fn: Callable = {"vqa": evaluate_vqa, "report": evaluate_report, "grounding": evaluate_grounding}[args.task]
    doc = {"task": args.task, **fn(read_jsonl(args.gold), read_jsonl(args.pred))}
    run.stats = doc
    if args.out:
        write_json(args.out, doc)
        run.output(args.out, manifest_here=True)
    print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_synth(args: argparse.Namespace, run: Run) -> int:
    world = synth_fixtures(args.seed, args.studies, args.questions_per_study)
    paths = world.write(args.out_dir)
    for p in paths.values():
        run.output(p)
    if run.manifest_path is None:
        run.manifest_path = Path(args.out_dir) / "manifest.json"
    run.stats = {
        "studies": len(world.annotations),
        "questions": len(world.questions),
        "reports": len(world.reports),
        "objects": len(world.kb.object_ids),
        "attributes": len(world.kb.attribute_ids),
    }
    print(json.dumps(run.stats, sort_keys=True))
    return 0


def cmd_featmap(args: argparse.Namespace, run: Run) -> int:
    rng = np.random.default_rng(args.seed)
    fmap = FeatureMap(rng.standard_normal((args.channels, args.height, args.width)))
    write_feature_map(args.out, fmap)
    run.output(args.out, manifest_here=True)
    run.stats = {"h": fmap.height, "w": fmap.width, "c": fmap.channels}
    print(json.dumps(run.stats, sort_keys=True))
    return 0


def cmd_replay(args: argparse.Namespace, run: Run) -> int:
    _require(args.manifest_file)
    doc = json.loads(Path(args.manifest_file).read_text(encoding="utf-8"))
    argv = doc["argv"]
    prev = os.getcwd()
    os.chdir(doc.get("cwd", prev))
    try:
        status = main(argv, _stdout_quiet=True)
        if status != 0:
            print(f"replay exited with status {status}", file=sys.stderr)
            return 1
        mismatched = [p for p, h in doc["outputs"].items() if not Path(p).is_file() or sha256_file(p) != h]
    finally:
        os.chdir(prev)
    run.stats = {"outputs": len(doc["outputs"]), "mismatched": mismatched}
    print(json.dumps(run.stats, sort_keys=True))
    return 1 if mismatched else 0


# parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aor", description="Anatomical-ontology CXR instruction-data toolkit.")
    ap.add_argument("--version", action="version", version=f"aor {package_version()}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name: str, fn: Callable, help: str, parent=sub) -> argparse.ArgumentParser:
        p = parent.add_parser(name, help=help, description=help)
        p.set_defaults(func=fn)
        p.add_argument("--manifest", help="where to write the run manifest")
        return p

    kb = sub.add_parser("kb", help="knowledge-base utilities")
    kb_sub = kb.add_subparsers(dest="kb_command", required=True)
    p = add("validate", cmd_kb_validate, "validate a KB document; prints the violation list", kb_sub)
    p.add_argument("path", nargs="?", default="reference", help="KB file, or 'reference' for the bundled KB")

    p = add("templates", cmd_templates, "enumerate CoT templates")
    p.add_argument("--kb", default="reference")
    p.add_argument("--count-only", action="store_true")
    p.add_argument("--out")

    p = add("expand", cmd_expand, "expand questions into CoT samples")
    p.add_argument("--kb", default="reference")
    p.add_argument("--graphs", required=True, help="study annotation records")
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--collect-errors", action="store_true")
    p.add_argument("--errors", help="error records (default: <out>.errors.jsonl)")
    p.add_argument("--jobs", type=int, default=1)

    p = add("align", cmd_align, "align report sentences to regions")
    p.add_argument("--kb", default="reference")
    p.add_argument("--graphs", required=True, help="study annotation records")
    p.add_argument("--reports", required=True)
    p.add_argument("--lexicon", help="lexicon file (default: bundled)")
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="coverage summary (default: <out>.summary.json)")
    p.add_argument("--jobs", type=int, default=1)

    p = add("perturb", cmd_perturb, "translate boxes by the +-r perturbation")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--boxes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--independent", action="store_true", help="draw r separately per axis")

    p = add("perturb-study", cmd_perturb_study, "box-to-region mismatch rate per perturbation level")
    p.add_argument("--boxes", required=True)
    p.add_argument("--levels", type=float, nargs="*")
    p.add_argument("--draws", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--independent", action="store_true")
    p.add_argument("--out")

    p = add("eval", cmd_eval, "score predictions")
    p.add_argument("--task", choices=("vqa", "report", "grounding"), required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out")

    p = add("synth", cmd_synth, "generate the synthetic fixture world")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--studies", type=int, default=100)
    p.add_argument("--questions-per-study", type=int, default=3)
    p.add_argument("--out-dir", required=True)

    p = add("featmap", cmd_featmap, "write a synthetic feature map")
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)

    p = add("replay", cmd_replay, "re-run a manifest and verify its output hashes")
    p.add_argument("manifest_file")
    return ap


def main(argv: Sequence[str] | None = None, *, _stdout_quiet: bool = False) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "jobs", 1) < 1:
        parser.print_usage(sys.stderr)
        print("aor: error: --jobs must be >= 1", file=sys.stderr)
        return 2
    run = Run(args, argv)
    stdout = sys.stdout
    if _stdout_quiet:
        sys.stdout = open(os.devnull, "w")
    try:
        status = args.func(args, run)
        run.finish()
        return status
    except UsageError as exc:
        print(f"aor: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"aor: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    finally:
        if _stdout_quiet:
            sys.stdout.close()
            sys.stdout = stdout


if __name__ == "__main__":
    sys.exit(main())
