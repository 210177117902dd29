"""End-to-end command-line behavior: pipelines, determinism, exit codes."""

import numpy as np
import pytest

from icq.cli import main


def run(*args: str) -> int:
    return main(list(args))


@pytest.fixture
def datadir(tmp_path):
    """Small generated corpus shared by the pipeline tests."""
    out = tmp_path / "data"
    code = run(
        "gen",
        "--n-train", "240",
        "--n-test", "30",
        "--d", "8",
        "--informative", "3",
        "--classes", "2",
        "--class-sep", "3.0",
        "--seed", "5",
        "--out", str(out),
    )
    assert code == 0
    return out


def train_args(datadir, index_path, **extra):
    args = [
        "train",
        "--in", str(datadir / "train.icqd"),
        "--out", str(index_path),
        "--K", "2",
        "--m", "8",
        "--epochs", "2",
        "--batch-size", "64",
    ]
    for key, value in extra.items():
        args += [f"--{key.replace('_', '-')}", str(value)]
    return args


class TestGen:
    def test_writes_corpus_files(self, datadir):
        assert (datadir / "train.icqd").exists()
        assert (datadir / "test.icqd").exists()
        dims = (datadir / "informative_dims.txt").read_text().split()
        assert len(dims) == 3
        assert all(0 <= int(t) < 8 for t in dims)

    def test_reruns_are_byte_identical(self, datadir, tmp_path):
        again = tmp_path / "data2"
        assert run(
            "gen",
            "--n-train", "240",
            "--n-test", "30",
            "--d", "8",
            "--informative", "3",
            "--classes", "2",
            "--class-sep", "3.0",
            "--seed", "5",
            "--out", str(again),
        ) == 0
        for name in ("train.icqd", "test.icqd", "informative_dims.txt"):
            assert (again / name).read_bytes() == (datadir / name).read_bytes()

    def test_usage_error_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run("gen", "--n-train", "10")
        assert exc.value.code == 2


class TestTrain:
    def test_writes_index_and_report(self, datadir, tmp_path):
        index_path = tmp_path / "model.icqi"
        assert run(*train_args(datadir, index_path)) == 0
        assert index_path.exists()
        report = (tmp_path / "model.csv").read_text().splitlines()
        assert report[0] == "epoch,L_C,L_P,L_ICQ,L_E,psi,K_fast"
        assert len(report) == 1 + 2  # header + one line per epoch

    def test_reruns_are_byte_identical(self, datadir, tmp_path):
        a, b = tmp_path / "a.icqi", tmp_path / "b.icqi"
        assert run(*train_args(datadir, a)) == 0
        assert run(*train_args(datadir, b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_explicit_report_path(self, datadir, tmp_path):
        index_path = tmp_path / "model.icqi"
        report_path = tmp_path / "losses.csv"
        assert run(*train_args(datadir, index_path), "--report", str(report_path)) == 0
        assert report_path.exists()

    def test_missing_input_exits_1(self, tmp_path):
        assert run(
            "train", "--in", str(tmp_path / "nope.icqd"), "--out", str(tmp_path / "x.icqi")
        ) == 1

    def test_invalid_config_exits_1(self, datadir, tmp_path):
        assert run(*train_args(datadir, tmp_path / "x.icqi", K=0)) == 1


class TestSearch:
    @pytest.fixture
    def index_path(self, datadir, tmp_path):
        path = tmp_path / "model.icqi"
        assert run(*train_args(datadir, path)) == 0
        return path

    def _rows(self, path):
        lines = path.read_text().splitlines()
        head = lines[0].split(",")
        return [dict(zip(head, line.split(","))) for line in lines[1:]]

    def test_two_step_output_shape(self, datadir, index_path, tmp_path):
        out = tmp_path / "hits.csv"
        assert run(
            "search",
            "--index", str(index_path),
            "--queries", str(datadir / "test.icqd"),
            "--k", "5",
            "--out", str(out),
        ) == 0
        rows = self._rows(out)
        assert len(rows) == 30 * 5
        first = rows[0]
        assert set(first) == {
            "query", "rank", "id", "score", "fast_adds", "exact_adds", "lut_ops", "fallback"
        }
        assert int(first["lut_ops"]) == 2 * 8 * 8  # K * m * d

    def test_wide_margin_matches_exact_ids(self, datadir, index_path, tmp_path):
        exact_out = tmp_path / "exact.csv"
        wide_out = tmp_path / "wide.csv"
        common = ["--index", str(index_path), "--queries", str(datadir / "test.icqd"), "--k", "7"]
        assert run("search", *common, "--mode", "exact", "--out", str(exact_out)) == 0
        assert run("search", *common, "--sigma-scale", "1e9", "--out", str(wide_out)) == 0
        exact_ids = [(r["query"], r["rank"], r["id"]) for r in self._rows(exact_out)]
        wide_ids = [(r["query"], r["rank"], r["id"]) for r in self._rows(wide_out)]
        assert exact_ids == wide_ids

    def test_exact_mode_op_columns(self, datadir, index_path, tmp_path):
        out = tmp_path / "exact.csv"
        assert run(
            "search",
            "--index", str(index_path),
            "--queries", str(datadir / "test.icqd"),
            "--mode", "exact",
            "--out", str(out),
        ) == 0
        for row in self._rows(out):
            assert int(row["fast_adds"]) == 0
            assert int(row["exact_adds"]) == (2 - 1) * 240
            assert row["fallback"] == "0"

    def test_brute_mode_needs_data(self, datadir, tmp_path):
        assert run(
            "search",
            "--queries", str(datadir / "test.icqd"),
            "--mode", "brute",
            "--out", str(tmp_path / "x.csv"),
        ) == 1

    def test_brute_mode_scores_against_raw_vectors(self, datadir, tmp_path):
        out = tmp_path / "brute.csv"
        assert run(
            "search",
            "--queries", str(datadir / "test.icqd"),
            "--mode", "brute",
            "--data", str(datadir / "train.icqd"),
            "--k", "3",
            "--out", str(out),
        ) == 0
        rows = self._rows(out)
        assert len(rows) == 30 * 3
        assert all(int(r["exact_adds"]) == (8 - 1) * 240 for r in rows)

    def test_quantized_modes_need_index(self, datadir, tmp_path):
        assert run(
            "search",
            "--queries", str(datadir / "test.icqd"),
            "--mode", "exact",
            "--out", str(tmp_path / "x.csv"),
        ) == 1

    def test_unknown_mode_exits_2(self, datadir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(
                "search",
                "--queries", str(datadir / "test.icqd"),
                "--mode", "warp",
                "--out", str(tmp_path / "x.csv"),
            )
        assert exc.value.code == 2


class TestBench:
    def test_writes_metrics_csv(self, datadir, tmp_path):
        out = tmp_path / "bench.csv"
        assert run(
            "bench",
            "--in", str(datadir / "train.icqd"),
            "--queries", str(datadir / "test.icqd"),
            "--K", "2", "--m", "8", "--epochs", "2", "--batch-size", "64",
            "--k", "5",
            "--out", str(out),
        ) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 2
        head = lines[0].split(",")
        row = lines[1].split(",")
        cols = dict(zip(head, row))
        assert 0.0 <= float(cols["map"]) <= 1.0
        assert float(cols["avg_ops_exact"]) == (2 - 1) * 240

    def test_thread_env_does_not_change_output(self, datadir, tmp_path, monkeypatch):
        args = (
            "bench",
            "--in", str(datadir / "train.icqd"),
            "--queries", str(datadir / "test.icqd"),
            "--K", "2", "--m", "8", "--epochs", "2", "--batch-size", "64",
            "--k", "5",
        )
        serial = tmp_path / "serial.csv"
        pooled = tmp_path / "pooled.csv"
        monkeypatch.delenv("ICQ_THREADS", raising=False)
        assert run(*args, "--out", str(serial)) == 0
        monkeypatch.setenv("ICQ_THREADS", "3")
        assert run(*args, "--out", str(pooled)) == 0
        assert serial.read_bytes() == pooled.read_bytes()

    def test_bad_thread_env_exits_1(self, datadir, tmp_path, monkeypatch):
        monkeypatch.setenv("ICQ_THREADS", "0")
        assert run(
            "bench",
            "--in", str(datadir / "train.icqd"),
            "--queries", str(datadir / "test.icqd"),
            "--out", str(tmp_path / "x.csv"),
        ) == 1
        monkeypatch.setenv("ICQ_THREADS", "lots")
        assert run(
            "bench",
            "--in", str(datadir / "train.icqd"),
            "--queries", str(datadir / "test.icqd"),
            "--out", str(tmp_path / "x.csv"),
        ) == 1

    def test_queries_required_without_unseen_split(self, datadir, tmp_path):
        assert run(
            "bench",
            "--in", str(datadir / "train.icqd"),
            "--out", str(tmp_path / "x.csv"),
        ) == 1

    def test_unseen_fraction_path(self, tmp_path):
        data = tmp_path / "multi"
        assert run(
            "gen",
            "--n-train", "320", "--n-test", "0",
            "--d", "8", "--informative", "3", "--classes", "4",
            "--class-sep", "3.0", "--seed", "2",
            "--out", str(data),
        ) == 0
        out = tmp_path / "unseen.csv"
        assert run(
            "bench",
            "--in", str(data / "train.icqd"),
            "--unseen-fraction", "0.5",
            "--K", "2", "--m", "8", "--epochs", "2", "--batch-size", "64",
            "--k", "5",
            "--out", str(out),
        ) == 0
        assert len(out.read_text().splitlines()) == 2

    def test_prebuilt_index_reused(self, datadir, tmp_path):
        index_path = tmp_path / "model.icqi"
        assert run(*train_args(datadir, index_path)) == 0
        out = tmp_path / "bench.csv"
        assert run(
            "bench",
            "--in", str(datadir / "train.icqd"),
            "--queries", str(datadir / "test.icqd"),
            "--index", str(index_path),
            "--k", "5",
            "--out", str(out),
        ) == 0
        assert out.exists()


class TestInspect:
    def test_dataset_summary(self, datadir, capsys):
        assert run("inspect", str(datadir / "train.icqd")) == 0
        out = capsys.readouterr().out
        assert "dataset: n=240 d=8 labeled=True" in out
        assert "classes: 2" in out

    def test_index_summary(self, datadir, tmp_path, capsys):
        index_path = tmp_path / "model.icqi"
        assert run(*train_args(datadir, index_path)) == 0
        assert run("inspect", str(index_path)) == 0
        out = capsys.readouterr().out
        assert "index: n=240 d=8 K=2 m=8" in out
        assert "psi:" in out and "fast:" in out and "sigma:" in out

    def test_unknown_magic_exits_1(self, tmp_path):
        junk = tmp_path / "junk.bin"
        junk.write_bytes(b"NOPE" + b"\x00" * 16)
        assert run("inspect", str(junk)) == 1

    def test_missing_file_exits_1(self, tmp_path):
        assert run("inspect", str(tmp_path / "ghost.icqi")) == 1

    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run()
        assert exc.value.code == 2
