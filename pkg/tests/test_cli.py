from __future__ import annotations

import json
import subprocess
import sys

import pytest

from aor.cli import main
from aor.ontology import kb_to_document
from aor.records import read_jsonl


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("w")
    assert main(["synth", "--seed", "7", "--studies", "30", "--out-dir", str(d)]) == 0
    return d


def test_kb_validate(capsys, tmp_path, ref_kb):
    assert main(["kb", "validate", "ref_kb"]) == 0
    assert json.loads(capsys.readouterr().out) == []
    doc = kb_to_document(ref_kb)
    doc["hierarchy"].append({"parent": "carina", "child": "mediastinum"})
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["kb", "validate", str(bad)]) == 1


def test_templates_count(capsys):
    assert main(["templates", "--kb", "ref_kb", "--count-only"]) == 0
    assert capsys.readouterr().out.strip() == "2812"


def test_templates_out(tmp_path):
    out = tmp_path / "t.jsonl"
    assert main(["templates", "--out", str(out)]) == 0
    recs = read_jsonl(out)
    assert len(recs) == 2812 and sum(r["impossible"] for r in recs) > 0


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["bogus"]) == 2
    assert main(["expand", "--graphs", str(tmp_path / "nope"), "--questions", "x", "--out", "y"]) == 2
    assert main(["perturb", "--p", "0.25", "--boxes", __file__, "--out", str(tmp_path / "o")]) == 2
    assert main(["expand", "--graphs", "a", "--questions", "b", "--out", "c", "--jobs", "0"]) == 2


def test_pipeline_error_exit(tmp_path, synth_dir):
    qs = read_jsonl(synth_dir / "questions.jsonl")
    local = next(q for q in qs if q["semantic_type"] == "verify" and q["scope"] == "local")
    local["answer"] = "no" if local["answer"] == "yes" else "yes"
    bad = tmp_path / "q.jsonl"
    bad.write_text(json.dumps(local) + "\n")
    args = ["expand", "--kb", str(synth_dir / "kb.json"), "--graphs", str(synth_dir / "studies.jsonl"), "--questions", str(bad)]
    assert main([*args, "--out", str(tmp_path / "e.jsonl")]) == 1
    assert main([*args, "--out", str(tmp_path / "e.jsonl"), "--collect-errors"]) == 0
    errs = read_jsonl(tmp_path / "e.jsonl.errors.jsonl")
    assert errs[0]["kind"] == "gold_mismatch" and "diff" in errs[0]


def test_perturb_zero_byte_identical(tmp_path, synth_dir):
    out = tmp_path / "p.jsonl"
    assert main(["perturb", "--p", "0", "--boxes", str(synth_dir / "boxes.jsonl"), "--out", str(out)]) == 0
    assert out.read_bytes() == (synth_dir / "boxes.jsonl").read_bytes()


def test_perturb_seeded(tmp_path, synth_dir):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.jsonl"
        assert main(["perturb", "--p", "0.2", "--seed", "3", "--boxes", str(synth_dir / "boxes.jsonl"), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_manifest_and_replay(tmp_path, synth_dir):
    out = tmp_path / "e.jsonl"
    args = [
        "expand", "--kb", str(synth_dir / "kb.json"), "--graphs", str(synth_dir / "studies.jsonl"),
        "--questions", str(synth_dir / "questions.jsonl"), "--out", str(out),
    ]
    assert main(args) == 0
    manifest = json.loads((tmp_path / "e.jsonl.manifest.json").read_text())
    assert manifest["argv"] == args and manifest["stats"]["error_count"] == 0
    assert set(manifest["versions"]) == {"aor", "python", "numpy"}
    before = out.read_bytes()
    out.unlink()
    assert main(["replay", str(tmp_path / "e.jsonl.manifest.json")]) == 0
    assert out.read_bytes() == before
    out.write_text("tampered\n")
    (tmp_path / "e.jsonl.manifest.json").write_text(json.dumps({**manifest, "argv": ["templates", "--count-only"]}))
    assert main(["replay", str(tmp_path / "e.jsonl.manifest.json")]) == 1


def test_align_and_eval(tmp_path, synth_dir, capsys):
    out = tmp_path / "a.jsonl"
    assert main([
        "align", "--kb", str(synth_dir / "kb.json"), "--graphs", str(synth_dir / "studies.jsonl"),
        "--reports", str(synth_dir / "reports.jsonl"), "--lexicon", str(synth_dir / "lexicon.txt"), "--out", str(out),
    ]) == 0
    summary = json.loads((tmp_path / "a.jsonl.summary.json").read_text())
    assert summary["coverage"] == 1.0 and len(summary["studies"]) == 30
    gold = tmp_path / "g.jsonl"
    gold.write_text(json.dumps({"qid": "1", "semantic_type": "verify", "answer": "yes"}) + "\n")
    metrics = tmp_path / "m.json"
    assert main(["eval", "--task", "vqa", "--gold", str(gold), "--pred", str(gold), "--out", str(metrics)]) == 0
    assert json.loads(metrics.read_text())["verify_accuracy"] == 1.0


def test_perturb_study_and_featmap(tmp_path, synth_dir):
    out = tmp_path / "ps.json"
    assert main(["perturb-study", "--boxes", str(synth_dir / "boxes.jsonl"), "--draws", "500", "--out", str(out)]) == 0
    rates = json.loads(out.read_text())["mismatch_rate"]
    assert rates["0.0"] == 0.0
    fm = tmp_path / "f.bin"
    assert main(["featmap", "--out", str(fm), "--height", "4", "--width", "5", "--channels", "2"]) == 0
    assert fm.read_bytes().split(b"\n", 1)[0] == b'{"h": 4, "w": 5, "c": 2}'


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "aor.cli", "templates", "--count-only"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "2812"
