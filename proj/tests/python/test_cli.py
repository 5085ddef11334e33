"""CLI smoke tests: subcommand wiring, exit codes, reproducibility."""

import os
import subprocess
import zlib
from pathlib import Path

import pytest

CLI = os.environ.get("TCMKD_CLI")
pytestmark = pytest.mark.skipif(not CLI, reason="TCMKD_CLI not set")


def run(*args, check=True):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"{args} failed ({proc.returncode}): {proc.stderr}")
    return proc


def crc(path):
    return zlib.crc32(Path(path).read_bytes())


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    raw = root / "raw"
    run("--seed", 3, "synth", "--out", raw, "--recordings-per-class", 2, "--length", 16384)
    dataset = root / "dataset"
    inputs = sorted(raw.glob("*.traw"))
    run("--seed", 3, "ingest", "--inputs", *inputs, "--out", dataset)
    run("--seed", 11, "train", "--dataset", dataset, "--out", root / "teacher", "--model", "teacher",
        "--epochs", 2, "--batch-size", 32)
    run("--seed", 11, "distill", "--dataset", dataset, "--teacher", root / "teacher" / "checkpoint.ckpt",
        "--out", root / "student", "--epochs", 2, "--batch-size", 32)
    return root, dataset


def test_usage_errors_exit_2():
    assert run("train", check=False).returncode == 2  # missing required options
    assert run("nonsense", check=False).returncode == 2
    assert run("ingest", "--out", "/tmp/x", check=False).returncode == 2  # no inputs


def test_runtime_errors_exit_1(tmp_path):
    proc = run("train", "--dataset", tmp_path / "missing", "--out", tmp_path / "out", check=False)
    assert proc.returncode == 1
    assert "error" in proc.stderr.lower()


def test_synth_ingest_counts(workspace):
    root, dataset = workspace
    assert (dataset / "dataset.json").exists()
    # 16384 samples -> 31 segments, 27 windows per recording; 8 recordings.
    proc = run("--seed", 3, "ingest", "--inputs", *sorted((root / "raw").glob("*.traw")),
               "--out", root / "dataset2")
    assert "segments: 248, windows: 216" in proc.stdout


def test_train_is_byte_reproducible(workspace):
    root, dataset = workspace
    outs = []
    for name in ("runA", "runB"):
        out = root / name
        run("--seed", 11, "train", "--dataset", dataset, "--out", out, "--model", "baseline",
            "--epochs", 2, "--batch-size", 32)
        outs.append(out)
    assert crc(outs[0] / "metrics.csv") == crc(outs[1] / "metrics.csv")
    assert crc(outs[0] / "checkpoint.ckpt") == crc(outs[1] / "checkpoint.ckpt")
    assert (outs[0] / "manifest.json").exists()


def test_report_summarizes_and_flags_missing(workspace, tmp_path):
    root, _ = workspace
    proc = run("report", "--run", root / "runA")
    assert "final metrics" in proc.stdout
    assert (root / "runA" / "summary.txt").exists()
    assert (root / "runA" / "plot_accuracy.csv").read_text().startswith("epoch,train_acc,test_acc")
    assert (root / "runA" / "plot_loss.csv").read_text().startswith("epoch,train_loss,ce_loss,kd_loss")

    empty = tmp_path / "empty"
    empty.mkdir()
    proc = run("report", "--run", empty, check=False)
    assert proc.returncode == 1
    assert "missing" in proc.stderr.lower()


def test_convert_csv_to_traw(tmp_path):
    csv = tmp_path / "rec.csv"
    csv.write_text("a,b\n" + "\n".join(f"{i/10.0},{-i/10.0}" for i in range(2048)) + "\n")
    out = tmp_path / "rec.traw"
    proc = run("convert", "--input", csv, "--output", out, "--rate", 1000, "--label", 2)
    assert "2 ch x 2048 samples" in proc.stdout
    assert out.exists()


def test_single_recording_segment_count_line(tmp_path):
    # One 250000-sample recording reports the canonical counts.
    run("--seed", 1, "synth", "--out", tmp_path / "raw", "--classes", 2,
        "--recordings-per-class", 1, "--length", 250000,
        "--carriers", 0.05, 0.113, "--mod-periods", 4, 4)
    one = sorted((tmp_path / "raw").glob("*.traw"))[0]
    proc = run("ingest", "--inputs", one, "--out", tmp_path / "ds", "--domain", "target")
    assert "segments: 487, windows: 483" in proc.stdout


def test_mixed_sample_rates_warn_but_proceed(tmp_path):
    run("--seed", 1, "synth", "--out", tmp_path / "a", "--classes", 2, "--recordings-per-class", 1,
        "--length", 12288, "--rate", 25000, "--carriers", 0.05, 0.113, "--mod-periods", 4, 4)
    run("--seed", 2, "synth", "--out", tmp_path / "b", "--classes", 2, "--recordings-per-class", 1,
        "--length", 12288, "--rate", 48000, "--carriers", 0.05, 0.113, "--mod-periods", 4, 4)
    inputs = sorted((tmp_path / "a").glob("*.traw")) + sorted((tmp_path / "b").glob("*.traw"))
    proc = run("ingest", "--inputs", *inputs, "--out", tmp_path / "ds")
    assert "mixed sample rates" in proc.stderr
    assert "25000" in proc.stderr and "48000" in proc.stderr


def test_score_self_reference_flags_about_one_percent(tmp_path):
    import random

    random.seed(5)
    rows = ["z0,z1,z2,z3,z4,z5"]
    for _ in range(800):
        rows.append(",".join(f"{random.gauss(0, 1):.6f}" for _ in range(6)))
    emb = tmp_path / "emb.csv"
    emb.write_text("\n".join(rows) + "\n")
    proc = run("score", "--embeddings", emb, "--reference", emb, "--out", tmp_path / "scored.csv", "--q", 0.99)
    assert "flagged: 8 / 800" in proc.stdout  # strict > threshold at the 0.99 quantile
    header = (tmp_path / "scored.csv").read_text().splitlines()[0]
    assert header == "z0,z1,z2,z3,z4,z5,score,flag"


def test_transfer_modes_share_row_counts(workspace, tmp_path):
    root, _ = workspace
    # Tiny source models from the fixture: enough to exercise the CLI path.
    teacher_dir = root / "teacher"
    student_dir = root / "student"

    target = tmp_path / "target"
    run("--seed", 21, "synth", "--out", tmp_path / "target_raw", "--recordings-per-class", 1,
        "--length", 12288, "--carriers", 0.0625, 0.0625, 0.14125, 0.14125)
    run("--seed", 21, "ingest", "--inputs", *sorted((tmp_path / "target_raw").glob("*.traw")),
        "--out", target, "--domain", "target")

    tl = tmp_path / "tl"
    student_ckpt_before = (student_dir / "checkpoint.ckpt").read_bytes()
    run("--seed", 31, "transfer", "--dataset", target, "--mode", "no-kd",
        "--student", student_dir / "checkpoint.ckpt", "--out", tl)
    assert (student_dir / "checkpoint.ckpt").read_bytes() == student_ckpt_before  # pure inference
    teacher_ckpt_before = (teacher_dir / "checkpoint.ckpt").read_bytes()
    run("--seed", 31, "transfer", "--dataset", target, "--mode", "tcmkd",
        "--teacher", teacher_dir / "checkpoint.ckpt", "--out", tl, "--epochs", 8, "--batch-size", 16)
    assert (teacher_dir / "checkpoint.ckpt").read_bytes() == teacher_ckpt_before

    no_kd = (tl / "embeddings_no_kd.csv").read_text().splitlines()
    tcmkd = (tl / "embeddings_tcmkd.csv").read_text().splitlines()
    assert len(no_kd) == len(tcmkd)  # both index the valid window centers

    curve = [line.split(",") for line in (tl / "loss_curve.csv").read_text().splitlines()[1:]]
    assert float(curve[-1][1]) < float(curve[0][1])  # adaptation descends
    assert (tl / "adapted_student.ckpt").exists()

    proc = run("report", "--run", tl)
    assert "silhouette ordering" in proc.stdout


def test_teacher_requires_windowed_dataset(workspace, tmp_path):
    root, _ = workspace
    ds = tmp_path / "nowin"
    run("--seed", 3, "ingest", "--inputs", *sorted((root / "raw").glob("*.traw")), "--out", ds, "--no-windows")
    proc = run("--seed", 1, "train", "--dataset", ds, "--out", tmp_path / "t", "--model", "teacher",
               "--epochs", 1, check=False)
    assert proc.returncode == 1
    assert "windows" in proc.stderr


def test_narrow_checkpoint_rejected_as_teacher(workspace, tmp_path):
    root, dataset = workspace
    proc = run("--seed", 1, "distill", "--dataset", dataset,
               "--teacher", root / "student" / "checkpoint.ckpt", "--out", tmp_path / "x", check=False)
    assert proc.returncode == 1
    assert "narrow-variant" in proc.stderr
