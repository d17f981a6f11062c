import csv
import json
import os

import numpy as np
import pytest

from polarseq.cli import main
from polarseq.construct import nr_sequence
from polarseq.sequences import load_sequence

NR8 = (7, 6, 5, 3, 4, 2, 1, 0)

FAST_EVAL = ["--target-errors", "50", "--max-frames", "4000", "--chunk", "500"]

TINY_RECIPE = """\
[code]
n = 8
crc = "off"

[channel]
kind = "awgn"

[decoder]
list_size = 1
metric = "exact"
crc_aided = false

[policy]
d_model = 16
n_heads = 2
n_layers = 1
d_ff = 32
use_pe = true

[train]
epochs = 6
batch_size = 4
lr = 5e-4
eval_every = 3
seed = 1

[weights]
mode = "joint"
stride = 1

[reward]
target_errors = 15
max_frames = 600
chunk = 200

[calibration]
target_bler = 0.01
target_errors = 30
max_frames = 6000
chunk = 500
bracket = [-4.0, 40.0]
baseline = "nr"
"""


def read_rows(path):
    with open(path) as fh:
        lines = [l for l in fh.read().splitlines() if l and not l.startswith("#")]
    cols = lines[0].split(",")
    return [dict(zip(cols, row.split(","))) for row in lines[1:]]


def read_headers(path):
    with open(path) as fh:
        return [l for l in fh.read().splitlines() if l.startswith("#")]


@pytest.fixture(scope="module")
def train_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy-train")
    cfg = out / "toy.toml"
    cfg.write_text(TINY_RECIPE)
    rc = main(["train", "--config", str(cfg), "--out", str(out / "run")])
    assert rc == 0
    return out


class TestConstruct:
    def test_nr(self, tmp_path, capsys):
        out = tmp_path / "nr8.json"
        assert main(["construct", "nr", "--n", "8", "--out", str(out)]) == 0
        seq = load_sequence(out)
        assert seq.order == NR8
        assert seq.provenance["scheme"] == "NR"
        assert "config_digest" in seq.provenance
        assert "tool_version" in seq.provenance
        assert "nr8.json" in capsys.readouterr().out

    def test_dega(self, tmp_path):
        out = tmp_path / "dega8.json"
        main(["construct", "dega", "--n", "8", "--design-ebno", "0.0",
              "--out", str(out)])
        seq = load_sequence(out)
        assert seq.order == NR8
        assert seq.provenance["design_ebno_db"] == 0.0

    def test_mc(self, tmp_path):
        out = tmp_path / "mc8.json"
        main(["construct", "mc", "--n", "8", "--design-ebno", "2.0",
              "--mc-trials", "2000", "--seed", "3", "--out", str(out)])
        seq = load_sequence(out)
        assert sorted(seq.order) == list(range(8))
        assert seq.provenance["scheme"] == "MC"
        assert seq.provenance["seed"] == 3

    def test_unknown_scheme(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["construct", "bogus", "--n", "8",
                  "--out", str(tmp_path / "x.json")])


class TestEvaluate:
    def args(self, out, scheme="nr", extra=()):
        return (["evaluate", "--scheme", scheme, "--n", "8", "--k", "4",
                 "--crc", "off", "--list-size", "1", "--ebno", "0,2",
                 "--out", str(out)] + FAST_EVAL + list(extra))

    def test_sweep_format(self, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(self.args(out)) == 0
        headers = read_headers(out)
        assert any(h.startswith("# polarseq ") for h in headers)
        assert any(h.startswith("# config ") for h in headers)
        assert any(h.startswith("# seed ") for h in headers)
        assert any(h.startswith("# stop e") for h in headers)
        assert any(h.startswith("# decoder L") for h in headers)
        rows = read_rows(out)
        assert len(rows) == 2
        assert rows[0]["scheme"] == "nr"
        assert float(rows[0]["bler"]) > float(rows[1]["bler"])
        assert int(rows[0]["frames"]) > 0

    def test_reruns_are_bit_identical(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        main(self.args(a))
        main(self.args(b))
        assert a.read_bytes() == b.read_bytes()

    def test_sequence_file_matches_builtin(self, tmp_path):
        seq_path = tmp_path / "mine.json"
        nr_sequence(8).save(seq_path)
        out_a = tmp_path / "builtin.csv"
        out_b = tmp_path / "fromfile.csv"
        main(self.args(out_a))
        main(self.args(out_b, scheme=str(seq_path)))
        rows_a = read_rows(out_a)
        rows_b = read_rows(out_b)
        assert rows_b[0]["scheme"] == "nr-mine"
        for ra, rb in zip(rows_a, rows_b):
            for col in ("snr_db", "frames", "errors", "bler"):
                assert ra[col] == rb[col]

    def test_resume_appends_only_missing_rows(self, tmp_path):
        out = tmp_path / "resume.csv"
        main(self.args(out))
        first = out.read_text()
        rc = main(["evaluate", "--scheme", "nr", "--n", "8", "--k", "4,2",
                   "--crc", "off", "--list-size", "1", "--ebno", "0,2",
                   "--out", str(out), "--resume"] + FAST_EVAL)
        assert rc == 0
        text = out.read_text()
        assert text.startswith(first)    # old rows untouched, one header block
        rows = read_rows(out)
        assert len(rows) == 4
        assert [r["K"] for r in rows] == ["4", "4", "2", "2"]
        again = main(["evaluate", "--scheme", "nr", "--n", "8", "--k", "4,2",
                      "--crc", "off", "--list-size", "1", "--ebno", "0,2",
                      "--out", str(out), "--resume"] + FAST_EVAL)
        assert again == 0
        assert out.read_text() == text    # fully resumed run adds nothing

    def test_block_length_mismatch_exits(self, tmp_path):
        seq_path = tmp_path / "n16.json"
        nr_sequence(16).save(seq_path)
        with pytest.raises(SystemExit):
            main(self.args(tmp_path / "x.csv", scheme=str(seq_path)))

    def test_grid_spec(self, tmp_path):
        out = tmp_path / "grid.csv"
        main(["evaluate", "--scheme", "nr", "--n", "8", "--k", "4",
              "--crc", "off", "--list-size", "1", "--grid", "0:2:3",
              "--out", str(out)] + FAST_EVAL)
        rows = read_rows(out)
        assert [r["snr_db"] for r in rows] == ["0", "1", "2"]


class TestFindSnr:
    def test_nr_reference_row_is_zero(self, tmp_path):
        out = tmp_path / "fs.csv"
        rc = main(["find-snr", "--scheme", "nr,dega", "--n", "8", "--k", "2,4",
                   "--crc", "off", "--list-size", "1", "--design-ebno", "0.0",
                   "--target-errors", "60", "--max-frames", "20000",
                   "--chunk", "1000", "--out", str(out)])
        assert rc == 0
        rows = read_rows(out)
        assert len(rows) == 4
        nr_rows = [r for r in rows if r["scheme"] == "nr"]
        for r in nr_rows:
            assert r["relative_snr_db"] == "0.0000"
            assert r["status"] == "ok"
        # dega at 0 dB produces the same order, so its offsets are zero too
        for r in rows:
            if r["scheme"] == "dega":
                assert r["relative_snr_db"] == "0.0000"
        assert any("lower is better" in h for h in read_headers(out))

    def test_bracket_failure_is_nonfatal(self, tmp_path, capsys):
        out = tmp_path / "fs.csv"
        rc = main(["find-snr", "--scheme", "nr", "--n", "8", "--k", "4",
                   "--crc", "off", "--list-size", "1",
                   "--bracket=-4.0,-3.5", "--target-errors", "40",
                   "--max-frames", "3000", "--chunk", "500",
                   "--out", str(out)])
        assert rc == 0
        assert "warning" in capsys.readouterr().err
        rows = read_rows(out)
        assert rows[0]["status"] == "bracket-failure"
        assert rows[0]["snr_db"] == "nan"


class TestCalibrate:
    def test_writes_table(self, tmp_path):
        out = tmp_path / "cal.json"
        rc = main(["calibrate", "--scheme", "nr", "--n", "8", "--k", "2,4",
                   "--crc", "off", "--list-size", "1", "--target-errors", "60",
                   "--max-frames", "20000", "--chunk", "1000",
                   "--out", str(out)])
        assert rc == 0
        doc = json.load(open(out))
        assert set(doc["snr_db"]) == {"2", "4"}
        assert doc["channel"] == "awgn"
        for snr in doc["snr_db"].values():
            assert -4.0 < snr < 40.0
        assert doc["target_bler"] == 0.01


class TestTrainCli:
    def test_artifacts(self, train_run):
        run = train_run / "run"
        for name in ("calibration.json", "policy.ckpt", "sequence.json",
                     "train_log.csv", "rewards.cache"):
            assert (run / name).exists(), name
        seq = load_sequence(run / "sequence.json")
        assert sorted(seq.order) == list(range(8))
        assert seq.provenance["scheme"] == "RL"
        assert "config_digest" in seq.provenance
        headers = read_headers(run / "train_log.csv")
        assert any(h.startswith("# polarseq") for h in headers)
        rows = read_rows(run / "train_log.csv")
        assert len(rows) == 6
        assert [r["epoch"] for r in rows] == [str(i) for i in range(6)]
        marked = [r["epoch"] for r in rows if r["greedy_objective"]]
        assert marked == ["0", "3", "5"]

    def test_calibration_reused_on_second_run(self, train_run, capsys):
        cfg = train_run / "toy.toml"
        rc = main(["train", "--config", str(cfg), "--out",
                   str(train_run / "run")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "calibrated k=" not in out

    def test_construct_rl_from_checkpoint(self, train_run, tmp_path):
        ckpt = train_run / "run" / "policy.ckpt"
        out = tmp_path / "rl.json"
        rc = main(["construct", f"rl:{ckpt}", "--n", "8", "--out", str(out)])
        assert rc == 0
        seq = load_sequence(out)
        trained = load_sequence(train_run / "run" / "sequence.json")
        assert seq.order == trained.order

    def test_construct_rl_with_config(self, tmp_path):
        cfg = tmp_path / "toy.toml"
        cfg.write_text(TINY_RECIPE)
        out = tmp_path / "learned.json"
        rc = main(["construct", "rl", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        seq = load_sequence(out)
        assert sorted(seq.order) == list(range(8))
        assert (tmp_path / "calibration.json").exists()


class TestAblate:
    def test_paired_runs(self, tmp_path, capsys):
        cfg = tmp_path / "toy.toml"
        cfg.write_text(TINY_RECIPE.replace("epochs = 6", "epochs = 3"))
        rc = main(["ablate-pe", "--config", str(cfg), "--out", str(tmp_path / "ab")])
        assert rc == 0
        for tag in ("pe-on", "pe-off"):
            assert (tmp_path / "ab" / f"sequence-{tag}.json").exists()
            assert (tmp_path / "ab" / f"train_log-{tag}.csv").exists()
            assert (tmp_path / "ab" / f"policy-{tag}.ckpt").exists()
        out = capsys.readouterr().out
        assert "greedy objective: pe-on" in out
        on = read_headers(tmp_path / "ab" / "train_log-pe-on.csv")
        off = read_headers(tmp_path / "ab" / "train_log-pe-off.csv")
        assert on[1] != off[1]    # distinct config digests


def cached_eval_args(out, cache):
    return (["evaluate", "--scheme", "nr", "--n", "8", "--k", "4",
             "--crc", "off", "--list-size", "1", "--ebno", "0,2",
             "--out", str(out), "--cache-path", str(cache)] + FAST_EVAL)


class TestCache:
    def test_stats_and_compact(self, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        cache = tmp_path / "r.cache"
        main(["evaluate", "--scheme", "nr", "--n", "8", "--k", "4",
              "--crc", "off", "--list-size", "1", "--ebno", "0",
              "--out", str(out), "--cache-path", str(cache)] + FAST_EVAL)
        assert cache.exists()
        main(["cache", "stats", "--cache-path", str(cache)])
        text = capsys.readouterr().out
        assert "records: 1" in text
        size = os.path.getsize(cache)
        main(["cache", "compact", "--cache-path", str(cache)])
        assert os.path.getsize(cache) == size    # already deduplicated

    def test_cached_rerun_matches(self, tmp_path):
        cache = tmp_path / "r.cache"
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        main(cached_eval_args(a, cache))
        main(cached_eval_args(b, cache))    # second run is pure cache replay
        assert read_rows(a) == read_rows(b)


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
