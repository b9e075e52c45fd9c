from __future__ import annotations

import json
import subprocess
import sys

import pytest

from facecurate.cli import main
from facecurate.corpus import load_corpus

GEN = [
    "gen-synth", "--identities", "60", "--dim", "32", "--test-identities", "2",
    "--seed", "17", "--provider-scales", "0.45,0.35,0.28",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(GEN + ["--out", str(data)]) == 0
    return root


def _clean_args(workspace, out, workers="1"):
    data = workspace / "data"
    return [
        "clean",
        "--manifest", str(data / "manifest.tsv"),
        "--embeddings", str(data / "embeddings.emb"),
        "--provider-embeddings", str(data / "provider_iter{i}.emb"),
        "--exclusion-manifest", str(data / "exclusion_manifest.tsv"),
        "--exclusion-embeddings", str(data / "exclusion_embeddings.emb"),
        "--out", str(out),
        "--workers", workers,
    ]


def test_gen_synth_outputs(workspace):
    data = workspace / "data"
    for name in (
        "manifest.tsv", "embeddings.emb", "truth.tsv",
        "exclusion_manifest.tsv", "exclusion_embeddings.emb",
        "provider_iter1.emb", "provider_iter2.emb", "provider_iter3.emb",
    ):
        assert (data / name).exists(), name
    corpus = load_corpus(data / "manifest.tsv", data / "embeddings.emb")
    assert corpus.dim == 32


def test_clean_end_to_end(workspace, capsys):
    out = workspace / "cleaned"
    assert main(_clean_args(workspace, out)) == 0
    stdout = capsys.readouterr().out
    assert "iter1-intra" in stdout and "dedup" in stdout
    for name in (
        "manifest.tsv", "embeddings.emb", "stage_stats.tsv",
        "merge_plan_iter1.tsv", "merge_plan_iter2.tsv", "merge_plan_iter3.tsv",
    ):
        assert (out / name).exists(), name
    stages = (out / "stage_stats.tsv").read_text().splitlines()
    assert stages[0].startswith("stage\t")
    assert len(stages) == 1 + 8  # 3x(intra+inter) + dedup + overlap
    # cleaned output loads and shrank
    cleaned = load_corpus(out / "manifest.tsv", out / "embeddings.emb")
    raw = load_corpus(
        workspace / "data" / "manifest.tsv", workspace / "data" / "embeddings.emb"
    )
    assert cleaned.num_faces < raw.num_faces
    # retained faces keep their original embeddings
    for fid in list(cleaned.faces)[:10]:
        assert cleaned.row(fid).tobytes() == raw.row(fid).tobytes()


def test_clean_rerun_and_workers_byte_identical(workspace):
    outs = [workspace / f"c{k}" for k in range(3)]
    assert main(_clean_args(workspace, outs[0], workers="1")) == 0
    assert main(_clean_args(workspace, outs[1], workers="1")) == 0
    assert main(_clean_args(workspace, outs[2], workers="4")) == 0
    ref = {p.name: p.read_bytes() for p in sorted(outs[0].glob("*")) if p.is_file()}
    for other in outs[1:]:
        got = {p.name: p.read_bytes() for p in sorted(other.glob("*")) if p.is_file()}
        assert got == ref


def test_evaluate_report(workspace):
    out = workspace / "cleaned"
    if not (out / "manifest.tsv").exists():
        assert main(_clean_args(workspace, out)) == 0
    rpt = workspace / "rpt"
    code = main([
        "evaluate",
        "--manifest", str(out / "manifest.tsv"),
        "--embeddings", str(out / "embeddings.emb"),
        "--slices", "all,cross-age-10,cross-scene",
        "--fmr", "1e-2",
        "--fairness", "gender",
        "--out", str(rpt),
    ])
    assert code == 0
    report = json.loads((rpt / "report.json").read_text())
    assert report["target_fmr"] == 1e-2
    assert set(report["slices"]) == {"all", "cross-age-10", "cross-scene"}
    for entry in report["slices"].values():
        assert 0.0 <= entry["fnmr"] <= 1.0
    assert "gender" in report["fairness"]
    text = (rpt / "report.txt").read_text()
    assert "fairness over gender" in text


def test_evaluate_rerun_byte_identical(workspace):
    out = workspace / "cleaned"
    args = [
        "evaluate",
        "--manifest", str(out / "manifest.tsv"),
        "--embeddings", str(out / "embeddings.emb"),
        "--slices", "all",
        "--fmr", "1e-2",
    ]
    r1, r2 = workspace / "r1", workspace / "r2"
    assert main(args + ["--out", str(r1), "--workers", "1"]) == 0
    assert main(args + ["--out", str(r2), "--workers", "5"]) == 0
    assert (r1 / "report.json").read_bytes() == (r2 / "report.json").read_bytes()
    assert (r1 / "report.txt").read_bytes() == (r2 / "report.txt").read_bytes()


def test_evaluate_group_fnmr_file(workspace, tmp_path):
    groups = tmp_path / "groups.tsv"
    groups.write_text(
        "race\tAfrican\t0.1053\n"
        "race\tCaucasian\t0.1050\n"
        "race\tEastAsian\t0.1474\n"
    )
    out = workspace / "cleaned"
    rpt = tmp_path / "rpt"
    code = main([
        "evaluate",
        "--manifest", str(out / "manifest.tsv"),
        "--embeddings", str(out / "embeddings.emb"),
        "--slices", "all", "--fmr", "1e-2",
        "--group-fnmr-file", str(groups),
        "--out", str(rpt),
    ])
    assert code == 0
    section = json.loads((rpt / "report.json").read_text())["fairness"]["race"]
    assert section["avg"] == pytest.approx(0.1192, abs=0.5e-4 + 1e-12)
    assert section["std"] == pytest.approx(0.0199, abs=0.5e-4 + 1e-12)
    assert section["ser"] == pytest.approx(1.40, abs=0.5e-2 + 1e-12)


def test_evaluate_latency_fail_track(workspace, tmp_path):
    # a 200 ms matcher cannot hold the 100 ms budget
    out = workspace / "cleaned"
    rpt = tmp_path / "lat"
    code = main([
        "evaluate",
        "--manifest", str(out / "manifest.tsv"),
        "--embeddings", str(out / "embeddings.emb"),
        "--slices", "all", "--fmr", "1e-2",
        "--track", "FRUITS-100",
        "--matcher", f"{sys.executable} -m facecurate.dummy_matcher --sleep-ms 200",
        "--probe-pairs", "2",
        "--out", str(rpt),
    ])
    assert code == 0
    lat = json.loads((rpt / "report.json").read_text())["latency"]
    assert lat["track"] == "FRUITS-100"
    assert lat["median_ms_per_pair"] > 100.0
    assert lat["passed"] is False
    assert "FAIL" in (rpt / "report.txt").read_text()


def test_missing_input_exits_3_naming_path(workspace, tmp_path, capsys):
    code = main([
        "evaluate",
        "--manifest", "/definitely/missing.tsv",
        "--embeddings", str(workspace / "data" / "embeddings.emb"),
        "--out", str(tmp_path / "x"),
    ])
    assert code == 3
    err = capsys.readouterr().err
    assert "/definitely/missing.tsv" in err


def test_data_error_exits_3(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("#MAN1 dim=32\nnot\tenough\tfields\n")
    code = main([
        "stats",
        "--manifest", str(bad),
        "--embeddings", str(workspace / "data" / "embeddings.emb"),
        "--out", str(tmp_path / "x"),
    ])
    assert code == 3
    assert "error:" in capsys.readouterr().err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["clean", "--manifest", "m.tsv"])  # missing required args
    assert exc.value.code == 2


def test_console_entry_point(workspace, tmp_path):
    data = workspace / "data"
    proc = subprocess.run(
        [
            sys.executable, "-m", "facecurate.cli", "dedup",
            "--manifest", str(data / "manifest.tsv"),
            "--embeddings", str(data / "embeddings.emb"),
            "--out", str(tmp_path / "dd"),
        ],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "dd" / "manifest.tsv").exists()


def test_dedup_subcommand_with_exclusion(workspace, tmp_path):
    data = workspace / "data"
    code = main([
        "dedup",
        "--manifest", str(data / "manifest.tsv"),
        "--embeddings", str(data / "embeddings.emb"),
        "--exclusion-manifest", str(data / "exclusion_manifest.tsv"),
        "--exclusion-embeddings", str(data / "exclusion_embeddings.emb"),
        "--out", str(tmp_path / "dd2"),
    ])
    assert code == 0
    stages = (tmp_path / "dd2" / "stage_stats.tsv").read_text().splitlines()
    assert len(stages) == 3  # header + dedup + overlap


def test_stats_subcommand(workspace, tmp_path):
    data = workspace / "data"
    code = main([
        "stats",
        "--manifest", str(data / "manifest.tsv"),
        "--embeddings", str(data / "embeddings.emb"),
        "--sample-folders", "20",
        "--out", str(tmp_path / "st"),
    ])
    assert code == 0
    assert (tmp_path / "st" / "distributions_intra.csv").exists()
    assert (tmp_path / "st" / "stats.txt").exists()
