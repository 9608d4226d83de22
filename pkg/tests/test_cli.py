import json
import subprocess
import sys

import pytest

from diffdistill.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def corpus(tmp_path, capsys):
    for vid, seed in (("a", 1), ("b", 2)):
        assert main(["gen", "--n-frames", "24", "--m-patches", "3", "--d-f", "6", "--d-p", "6",
                     "--centers", "4", "--blend", "0.8", "--video-id", vid, "--seed", str(seed),
                     "--attention-top-frac", "0.1", "--out-dir", str(tmp_path)]) == 0
    capsys.readouterr()
    return tmp_path


def test_budget_text(capsys):
    code, out, _ = run(capsys, "budget", "--n", "128", "--m", "729", "--k", "32")
    assert code == 0
    assert "compressed=23424" in out and "reduction=74.90%" in out


def test_budget_json_carries_meta(capsys):
    code, out, _ = run(capsys, "--format", "json", "budget", "--n", "4", "--m", "2", "--k", "1")
    doc = json.loads(out)
    assert code == 0 and doc["budget"]["compressed_tokens"] == 5
    assert doc["meta"]["version"] and doc["meta"]["config"]["k"] == 1


def test_usage_errors_exit_2(capsys):
    assert run(capsys, "frobnicate")[0] == 2
    code, _, err = run(capsys, "distill")
    assert code == 2 and "usage:" in err
    assert run(capsys, "budget", "--n", "x", "--m", "1", "--k", "1")[0] == 2


def test_data_errors_exit_1(capsys, tmp_path):
    code, _, err = run(capsys, "budget", "--n", "3", "--m", "1", "--k", "5")
    assert code == 1 and "exceeds" in err
    bad = tmp_path / "bad.vlmp"
    bad.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNK")
    assert run(capsys, "validate", str(bad))[0] == 1
    assert run(capsys, "validate", str(tmp_path / "absent.vlmp"))[0] == 1


def test_single_frame_distill(capsys, tmp_path):
    main(["gen", "--n-frames", "1", "--video-id", "one", "--d-f", "4", "--d-p", "4",
          "--out-dir", str(tmp_path)])
    code, out, _ = run(capsys, "distill", str(tmp_path / "one.json"),
                       "--query", str(tmp_path / "one.query.vlmp"))
    doc = json.loads(out)
    assert code == 0
    assert [it["type"] for it in doc["items"]] == ["keyframe"]


def test_distill_meta_and_defaults(capsys, corpus):
    code, out, _ = run(capsys, "distill", str(corpus / "a.json"), "--query", str(corpus / "a.query.vlmp"))
    meta = json.loads(out)["meta"]
    assert {k: meta["config"][k] for k in ("tau", "k_max", "lambda", "alpha")} == {
        "tau": 0.85, "k_max": 32, "lambda": 1.0, "alpha": 0.01}
    assert len(meta["inputs"]) == 4 and all(len(d) == 64 for d in meta["inputs"].values())
    assert "timestamp" not in out


def test_outputs_independent_of_jobs_and_repeatable(capsys, corpus, tmp_path):
    outs = []
    for jobs, name in (("1", "x"), ("4", "y"), ("1", "z")):
        assert main(["distill", str(corpus / "a.json"), str(corpus / "b.json"),
                     "--query", str(corpus / "a.query.vlmp"), "--jobs", jobs,
                     "--out-dir", str(tmp_path / name)]) == 0
        outs.append([(tmp_path / name / f"{v}.distilled.json").read_bytes() for v in "ab"])
    capsys.readouterr()
    assert outs[0] == outs[1] == outs[2]


def test_stream_externalize_and_weights(capsys, corpus, tmp_path):
    out_dir = tmp_path / "out"
    weights = tmp_path / "w.csv"
    code, _, _ = run(capsys, "distill", str(corpus / "a.json"), "--query", str(corpus / "a.query.vlmp"),
                     "--stream", "--externalize", "--dump-weights", str(weights),
                     "--out-dir", str(out_dir))
    assert code == 0
    doc = json.loads((out_dir / "a.distilled.json").read_text())
    assert doc["tokens_file"] == "a.tokens.vlmp" and (out_dir / "a.tokens.vlmp").exists()
    lines = weights.read_text().splitlines()
    assert lines[0].startswith("# meta: ") and lines[1] == "frame_index,paired_keyframe,patch,weight"


def test_env_out_dir(capsys, monkeypatch, tmp_path):
    monkeypatch.setenv("VLMP_OUT_DIR", str(tmp_path / "env"))
    assert run(capsys, "budget", "--n", "2", "--m", "2", "--k", "1")[0] == 0
    assert (tmp_path / "env" / "budget.txt").read_text().startswith("original=4")


def test_validate_reports_clean_files(capsys, corpus):
    code, out, _ = run(capsys, "validate", str(corpus / "a.json"), str(corpus / "a.frames.vlmp"))
    assert code == 0
    assert all(v == [] for v in json.loads(out)["violations"].values())


def test_profile_and_sweep(capsys, corpus):
    code, out, _ = run(capsys, "profile", "frame", "--attention", str(corpus / "a.attention.vlmp"),
                       "--video", str(corpus / "a.json"), "--pairs", "20")
    assert code == 0 and out.splitlines()[1] == "percentile,cumulative_mass,mean_similarity"
    code, out, _ = run(capsys, "profile", "patch", "--attention", str(corpus / "a.attention.vlmp"),
                       "--video", str(corpus / "a.json"), "--k-top", "24")
    assert code == 0 and "# EmptyProfile" in out
    code, out, _ = run(capsys, "sweep", str(corpus / "a.json"), str(corpus / "b.json"),
                       "--query", str(corpus / "a.query.vlmp"))
    assert code == 0 and len(out.splitlines()) == 2 + 16


def test_niah_flow(capsys, tmp_path):
    for vid, n, seed in (("hay", 80, 1), ("ndl", 40, 2)):
        main(["gen", "--n-frames", str(n), "--video-id", vid, "--seed", str(seed),
              "--d-f", "4", "--d-p", "4", "--out-dir", str(tmp_path)])
    catalog = tmp_path / "catalog.json"
    catalog.write_text(json.dumps([
        {"video_id": "hay", "length": 80},
        {"video_id": "ndl", "length": 40, "role": "needle", "answer_key": "yes"}]))
    nd = tmp_path / "niah"
    assert main(["niah", "build", "--catalog", str(catalog), "--lengths", "60,80",
                 "--cases-per-length", "4", "--needle-min", "10", "--needle-max", "30",
                 "--out-dir", str(nd)]) == 0
    manifest = nd / "niah-manifest.json"
    assert main(["niah", "splice", "--manifest", str(manifest), "--case-id", "L60-00001",
                 "--haystack", str(tmp_path / "hay.json"), "--needle", str(tmp_path / "ndl.json"),
                 "--out-dir", str(nd)]) == 0
    assert (nd / "L60-00001.json").exists() and (nd / "L60-00001.index.json").exists()
    preds = tmp_path / "preds.jsonl"
    preds.write_text('{"case_id": "L60-00000", "answer": "yes"}\n')
    capsys.readouterr()
    code, out, err = run(capsys, "niah", "score", "--manifest", str(manifest), "--predictions", str(preds))
    assert code == 0 and "7 cases without predictions" in err
    code, out, _ = run(capsys, "--strict", "niah", "score", "--manifest", str(manifest),
                       "--predictions", str(preds))
    assert code == 0 and '"strict": true' in out.splitlines()[0]
    assert run(capsys, "niah", "splice", "--manifest", str(manifest), "--case-id", "nope",
               "--haystack", "x", "--needle", "y")[0] == 1


def test_global_flags_after_subcommand(capsys):
    code, out, _ = run(capsys, "budget", "--n", "2", "--m", "2", "--k", "1", "--format", "csv")
    assert code == 0 and out.startswith("# meta: ")


def test_manual_lists_every_subcommand(capsys):
    code, out, _ = run(capsys, "manual")
    assert code == 0
    for name in ("validate", "distill", "budget", "profile", "niah build", "niah splice",
                 "niah score", "sweep", "gen"):
        assert f"\n{name}\n" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "diffdistill", "budget", "--n", "128",
                           "--m", "729", "--k", "32"], capture_output=True, text=True)
    assert proc.returncode == 0 and "compressed=23424" in proc.stdout
