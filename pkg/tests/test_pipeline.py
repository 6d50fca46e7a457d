import json

import numpy as np
import pytest

from pgil.benchmark import BenchmarkSpec, build_benchmark
from pgil.cli import main
from pgil.config import MODES, RunConfig
from pgil.imgphy import read_imgphy
from pgil.pipeline import prepare, run_experiment

TINY = dict(n_words=12, n_topics=6, lda_iterations=20, infer_burn_in=5, infer_samples=5, vocab_samples=400,
            pgn_epochs=1, pin_epochs=1, pgn_batch=16, pin_batch=8, probe_epochs=5, wishart_iter=3,
            train_split="train-2")


def tiny_spec(seed=0):
    return BenchmarkSpec(n_patches=63, patch_size=32, test_per_class=3, train_sizes=(2,), seed=seed)


@pytest.fixture(scope="module")
def prepared():
    return prepare(RunConfig(**TINY), spec=tiny_spec())


def test_benchmark_layout(prepared):
    ds = prepared.ds
    assert len(ds.ids) == 63 and ds.img_dims == (32, 32)
    assert len(ds.split_ids("test")) == 21 and len(ds.split_ids("train-2")) == 14
    assert ds.n_s == 9 and ds.phy_dims is not None


def test_benchmark_seeded():
    a, b = build_benchmark(tiny_spec(3)), build_benchmark(tiny_spec(3))
    assert all(np.array_equal(a.images[i], b.images[i]) for i in a.ids)


def test_bot_rows_on_simplex(prepared):
    bots = prepared.store.rows(prepared.ds.ids)
    assert bots.shape == (63, 6)
    assert np.all(np.abs(bots.sum(axis=1) - 1) <= 1e-6)


@pytest.mark.parametrize("mode", MODES)
def test_every_mode_runs(prepared, mode):
    rep = run_experiment(RunConfig(mode=mode, **TINY), prepared)
    m = rep.metrics
    assert 0 <= m.get("oa", m.get("probe_oa")) <= 1
    json.loads(rep.to_json())


def test_run_report_reproducible(prepared):
    cfg = RunConfig(mode="pgil-full", seed=5, **TINY)
    a = run_experiment(cfg, prepared)
    b = run_experiment(cfg, prepare(cfg, spec=tiny_spec()))
    assert a.metrics_json() == b.metrics_json()
    assert a.hashes == b.hashes


def test_test_labels_do_not_reach_training(prepared):
    ds = build_benchmark(tiny_spec())
    test = ds.index_of(ds.split_ids("test"))
    ds.labels_all[test] = (ds.labels_all[test] + 1) % len(ds.class_names)
    cfg = RunConfig(mode="pgil-full", **TINY)
    alt = prepare(cfg, ds=ds)
    assert alt.hashes["bots"] == prepared.hashes["bots"]
    a, b = run_experiment(cfg, prepared), run_experiment(cfg, alt)
    assert a.hashes["pin"] == b.hashes["pin"] and a.hashes["pgn"] == b.hashes["pgn"]


# ---------------------------------------------------------------- CLI

def flags(**kw):
    return [a for k, v in kw.items() for a in (f"--{k.replace('_', '-')}", str(v))]


@pytest.fixture(scope="module")
def cli_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--seed", "0", "--patches", "63", "--patch-size", "32",
                 "--test-per-class", "3", "--train-sizes", "2"]) == 0
    return root


def test_cli_pipeline(cli_root, capsys):
    r, d = cli_root, str(cli_root / "data")
    tiny = flags(**TINY)
    assert read_imgphy(d).n_s == 9
    assert main(["encode", "--data", d, "--out", str(r / "bots.blob"), *tiny]) == 0
    assert main(["train-pgn", "--data", d, "--bots", str(r / "bots.blob"), "--out", str(r / "pgn.ckpt"),
                 "--seed", "1", *tiny]) == 0
    assert main(["train-pin", "--data", d, "--bots", str(r / "bots.blob"), "--pgn", str(r / "pgn.ckpt"),
                 "--out", str(r / "pin.ckpt"), "--mode", "pgil-full", "--seed", "1", *tiny]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--data", d, "--pin", str(r / "pin.ckpt"), "--pgn", str(r / "pgn.ckpt"),
                 "--bots", str(r / "bots.blob"), "--csv", str(r / "rep.csv")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert 0 <= out["oa"] <= 1
    assert (r / "rep.csv").read_text().startswith("class,")


def test_cli_run_and_report(cli_root, capsys):
    r = cli_root
    for mode in ("baseline-cnn", "pgil-full"):
        assert main(["run", "--data", str(r / "data"), "--mode", mode, "--seed", "0",
                     "--out", str(r / f"{mode}.json"), *flags(**TINY)]) == 0
    capsys.readouterr()
    assert main(["report", str(r / "baseline-cnn.json"), str(r / "pgil-full.json")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary["summary"]) >= {"baseline-cnn", "pgil-full"}


def test_cli_requires_seed_for_training(cli_root, capsys):
    assert main(["train-pgn", "--data", str(cli_root / "data"), "--bots", "x", "--out", "y"]) == 1
    assert "--seed is required" in capsys.readouterr().err


def test_cli_rejects_bad_mode(cli_root, capsys):
    assert main(["run", "--data", str(cli_root / "data"), "--mode", "nonsense", "--seed", "0"]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_missing_dataset(tmp_path, capsys):
    assert main(["encode", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "b")]) == 1
    assert "manifest" in capsys.readouterr().err
