import csv
import io
import re

import numpy as np
import pytest

from vgsn import cli, layers, model
from vgsn import tensor as T
from vgsn.corpus import read_pgm, write_pgm
from vgsn.training import read_loss_csv

ERROR_LINE = re.compile(r"^error: [a-z:]+: \S.*$")


def train_args(dirs, out, **kw):
    flags = {"grid": 4, "optimizer": "adam", "epochs": 3, "seed": 7, "image-size": 32, "out": out}
    flags.update(kw)
    argv = ["train", "--font-a", str(dirs[0]), "--font-b", str(dirs[1])]
    for k, v in flags.items():
        argv += [f"--{k}", str(v)]
    return argv


def error_line(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    assert ERROR_LINE.match(lines[-1]), lines
    return lines[-1]


@pytest.fixture(scope="module")
def trained(few_shot_dirs, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    assert cli.main(train_args(few_shot_dirs, out / "m.vgsn", **{"loss-csv": out / "loss.csv"})) == 0
    return out


class TestTrain:
    def test_artifacts(self, trained):
        assert (trained / "m.vgsn").read_bytes().startswith(b"VGSN-MODEL\n")
        with open(trained / "loss.csv") as fh:
            rows = read_loss_csv(fh)
        assert [r.epoch for r in rows] == [1, 2, 3]
        assert all(np.isnan(r.wall_time_seconds) for r in rows)

    def test_timing_column(self, few_shot_dirs, tmp_path):
        argv = train_args(few_shot_dirs, tmp_path / "m", epochs=1, **{"loss-csv": tmp_path / "l.csv"}) + ["--timing"]
        assert cli.main(argv) == 0
        with open(tmp_path / "l.csv") as fh:
            assert read_loss_csv(fh)[0].wall_time_seconds > 0

    def test_indivisible_grid(self, few_shot_dirs, tmp_path, capsys):
        assert cli.main(train_args(few_shot_dirs, tmp_path / "m", grid=3)) == 2
        assert error_line(capsys).startswith("error: config:")
        assert not (tmp_path / "m").exists()

    def test_size_flag_must_match_corpus(self, few_shot_dirs, tmp_path, capsys):
        assert cli.main(train_args(few_shot_dirs, tmp_path / "m", **{"image-size": 64})) == 2
        assert "32px" in error_line(capsys)

    def test_missing_corpus(self, tmp_path, capsys):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        assert cli.main(train_args((tmp_path / "a", tmp_path / "b"), tmp_path / "m")) == 1
        assert error_line(capsys).startswith("error: corpus:")

    def test_skip_is_reported(self, few_shot_dirs, tmp_path, capsys):
        import shutil

        a = tmp_path / "a"
        shutil.copytree(few_shot_dirs[0], a)
        write_pgm(a / "U+6C38.pgm", np.zeros((32, 32)))
        assert cli.main(train_args((a, few_shot_dirs[1]), tmp_path / "m", epochs=1)) == 0
        assert "skipped U+6C38" in capsys.readouterr().err


class TestGenerate:
    def test_single_file(self, trained, few_shot_dirs, tmp_path):
        src = next(few_shot_dirs[0].iterdir())
        out = tmp_path / "g.pgm"
        assert cli.main(["generate", "--model", str(trained / "m.vgsn"), "--input", str(src), "--out", str(out)]) == 0
        assert read_pgm(out).shape == (32, 32, 1)

    def test_directory(self, trained, few_shot_dirs, tmp_path):
        assert cli.main(["generate", "--model", str(trained / "m.vgsn"), "--input", str(few_shot_dirs[0]), "--out", str(tmp_path / "o")]) == 0
        assert sorted(p.name for p in (tmp_path / "o").iterdir()) == sorted(p.name for p in few_shot_dirs[0].iterdir())

    def test_deterministic(self, trained, few_shot_dirs, tmp_path):
        src = next(few_shot_dirs[0].iterdir())
        for name in ("a.pgm", "b.pgm"):
            cli.main(["generate", "--model", str(trained / "m.vgsn"), "--input", str(src), "--out", str(tmp_path / name)])
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()

    def test_size_mismatch(self, trained, tmp_path, capsys):
        write_pgm(tmp_path / "small.pgm", np.zeros((16, 16)))
        assert cli.main(["generate", "--model", str(trained / "m.vgsn"), "--input", str(tmp_path / "small.pgm"), "--out", str(tmp_path / "o.pgm")]) == 2
        assert error_line(capsys).startswith("error: config:")

    def test_corrupt_model(self, trained, few_shot_dirs, tmp_path, capsys):
        bad = tmp_path / "bad.vgsn"
        bad.write_bytes((trained / "m.vgsn").read_bytes()[:-8])
        assert cli.main(["generate", "--model", str(bad), "--input", str(few_shot_dirs[0]), "--out", str(tmp_path / "o")]) == 1
        assert error_line(capsys).startswith("error: model:truncated:")

    def test_missing_input(self, trained, tmp_path, capsys):
        assert cli.main(["generate", "--model", str(trained / "m.vgsn"), "--input", str(tmp_path / "nope.pgm"), "--out", str(tmp_path / "o")]) == 1
        assert error_line(capsys).startswith("error: io:")


class TestBench:
    def test_table_from_csv(self):
        rows = [
            {"model": "vgsn", "grid": 4, "optimizer": "rmsprop", "epochs": 1, "sec_per_epoch": 0.5, "final_loss": 0.1, "paper_ref_sec": 74}
        ]
        buf = io.StringIO()
        cli.write_bench_csv(rows, buf)
        assert buf.getvalue().splitlines()[0] == ",".join(cli.BENCH_COLUMNS)
        table = cli.format_bench_table(buf.getvalue(), 32, 5)
        assert "paper (256², reference hardware)" in table and "74 s" in table

    def test_reference_table(self):
        assert len(cli.REFERENCE_SECONDS) == 12
        assert cli.REFERENCE_SECONDS[("vgsn", 4, "rmsprop")] == 74
        assert cli.REFERENCE_SECONDS[("vae", 4, "rmsprop")] == 95


class TestGradcheck:
    def test_pass(self, capsys):
        assert cli.main(["gradcheck"]) == 0
        assert "gradcheck: pass" in capsys.readouterr().out

    def test_sabotaged_backward_fails(self, monkeypatch, capsys):
        def bad_relu(x):
            mask = x.data > 0
            return T.record((x,), x.data * mask, lambda g: (1.5 * g * mask,), "relu")

        monkeypatch.setattr(model, "relu", bad_relu)
        assert cli.main(["gradcheck"]) == 1
        line = error_line(capsys)
        assert line.startswith("error: gradcheck:") and "encoder." in line

    def test_repeatable(self):
        a, _ = cli.run_gradcheck(image_size=8, grid=2, stages=1, seed=3)
        b, _ = cli.run_gradcheck(image_size=8, grid=2, stages=1, seed=3)
        assert a == b

    def test_vae_variant(self):
        worst, report = cli.run_gradcheck(image_size=8, grid=2, stages=2, seed=1, kind="vae")
        assert worst < cli.GRADCHECK_TOLERANCE
        assert "grid_dense.weight" not in report

    def test_leaves_float32_default(self):
        cli.run_gradcheck(image_size=8, grid=2, stages=1)
        assert T.get_dtype() == np.float32


def test_fixture_command(tmp_path):
    assert cli.main(["fixture", str(tmp_path), "--size", "16"]) == 0
    assert len(list((tmp_path / "font_a").glob("U+*.pgm"))) == 9
    assert read_pgm(next((tmp_path / "font_b").iterdir())).shape == (16, 16, 1)


def test_layers_untouched_by_sabotage_fixture():
    # the sabotage test patches the model module's binding only
    assert model.relu is layers.relu


def test_bench_csv_parses(tmp_path):
    buf = io.StringIO()
    cli.write_bench_csv([], buf)
    assert list(csv.reader(io.StringIO(buf.getvalue()))) == [cli.BENCH_COLUMNS]
