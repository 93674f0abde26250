import json
import subprocess
import sys

import numpy as np
import pytest

from metasparse.bench import read_csv
from metasparse.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from metasparse.realdata import synthetic_expression_table, write_expression_csv
from metasparse.synth import GenConfig


@pytest.fixture
def phase_config(tmp_path):
    doc = {
        "base": GenConfig(p=20, k=3, l=4, T=2, seed=1).to_json_dict(),
        "sweep": {"C_values": [1.0, 8.0]},
        "reps": 3,
        "method": "meta",
        "lambda_constants": {},
        "master_seed": 5,
    }
    path = tmp_path / "phase.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def expression_csv(tmp_path):
    table, _ = synthetic_expression_table(
        timepoints=3, cells=16, factors=6, true_support_size=2, seed=4
    )
    path = tmp_path / "expr.csv"
    write_expression_csv(table, path)
    return path


class TestPhaseCommand:
    def test_writes_csv_and_figure(self, phase_config, tmp_path):
        out = tmp_path / "phase.csv"
        code = main(["phase", "--config", str(phase_config), "--out", str(out),
                     "--workers", "1"])
        assert code == EXIT_OK
        records = read_csv(out)
        assert len(records) == 2
        assert (tmp_path / "phase.png").exists()

    def test_no_plot_flag(self, phase_config, tmp_path):
        out = tmp_path / "phase.csv"
        code = main(["phase", "--config", str(phase_config), "--out", str(out),
                     "--workers", "1", "--no-plot"])
        assert code == EXIT_OK
        assert not (tmp_path / "phase.png").exists()

    def test_invalid_json_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text("{not json")
        code = main(["phase", "--config", str(cfg), "--out", str(tmp_path / "o.csv")])
        assert code == EXIT_CONFIG

    def test_unknown_key_exits_2(self, tmp_path, phase_config):
        doc = json.loads(phase_config.read_text())
        doc["surprise"] = 1
        bad = tmp_path / "bad2.json"
        bad.write_text(json.dumps(doc))
        code = main(["phase", "--config", str(bad), "--out", str(tmp_path / "o.csv")])
        assert code == EXIT_CONFIG

    def test_missing_config_exits_3(self, tmp_path):
        code = main(["phase", "--config", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "o.csv")])
        assert code == EXIT_IO

    def test_unwritable_output_exits_3(self, phase_config, tmp_path):
        out = tmp_path / "no_such_dir" / "o.csv"
        code = main(["phase", "--config", str(phase_config), "--out", str(out),
                     "--workers", "1", "--no-plot"])
        assert code == EXIT_IO

    def test_determinism_byte_identical(self, phase_config, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["phase", "--config", str(phase_config), "--out", str(a),
                     "--workers", "1", "--no-plot"]) == EXIT_OK
        assert main(["phase", "--config", str(phase_config), "--out", str(b),
                     "--workers", "2", "--no-plot"]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()


class TestCompareCommand:
    def test_produces_three_methods(self, tmp_path):
        doc = {
            "base": GenConfig(p=15, k=2, l=4, T=2, seed=1).to_json_dict(),
            "sweep": {"T_values": [2]},
            "reps": 2,
            "master_seed": 5,
        }
        cfg = tmp_path / "cmp.json"
        cfg.write_text(json.dumps(doc))
        out = tmp_path / "cmp.csv"
        code = main(["compare", "--config", str(cfg), "--out", str(out),
                     "--workers", "1"])
        assert code == EXIT_OK
        methods = [r.method for r in read_csv(out)]
        assert methods == ["meta", "group_lasso", "dirty_model"]
        assert (tmp_path / "cmp.png").exists()


class TestSynthAndNovel:
    def _synth(self, tmp_path, T=3, l=6, p=8, k=2):
        cfg = GenConfig(p=p, k=k, l=l, T=T, seed=9).to_json_dict()
        cfg_path = tmp_path / "gen.json"
        cfg_path.write_text(json.dumps(cfg))
        out_dir = tmp_path / "data"
        code = main(["synth", "--config", str(cfg_path), "--out", str(out_dir)])
        assert code == EXIT_OK
        return out_dir

    def test_synth_writes_one_csv_per_task(self, tmp_path):
        out_dir = self._synth(tmp_path, T=3)
        tasks = sorted(out_dir.glob("task_*.csv"))
        assert [t.name for t in tasks] == ["task_000.csv", "task_001.csv", "task_002.csv"]
        assert (out_dir / "novel.csv").exists()
        header = (out_dir / "task_000.csv").read_text().splitlines()[0]
        assert header == "y," + ",".join(f"x{j}" for j in range(1, 9))
        body = (out_dir / "task_000.csv").read_text().splitlines()[1:]
        assert len(body) == 6

    def test_synth_truth_sidecar(self, tmp_path):
        out_dir = self._synth(tmp_path)
        truth = json.loads((out_dir / "truth.json").read_text())
        assert truth["support"] == [0, 1]
        assert len(truth["w_star"]) == 8

    def test_novel_fit_round_trip(self, tmp_path):
        out_dir = self._synth(tmp_path, l=12)
        support_csv = tmp_path / "support.csv"
        support_csv.write_text("index\n0\n1\n")
        out_json = tmp_path / "novel.json"
        code = main([
            "novel", "--dataset", str(out_dir), "--support", str(support_csv),
            "--out", str(out_json), "--refit",
        ])
        assert code == EXIT_OK
        report = json.loads(out_json.read_text())
        assert set(report["support_novel"]) <= {0, 1}
        truth = json.loads((out_dir / "truth.json").read_text())
        w_true = np.array(truth["novel_weights"])
        w_hat = np.array(report["w_hat_novel"])
        assert np.abs(w_hat - w_true).max() < 0.5

    def test_novel_missing_dataset_exits_3(self, tmp_path):
        support_csv = tmp_path / "support.csv"
        support_csv.write_text("index\n0\n")
        code = main(["novel", "--dataset", str(tmp_path / "nope"),
                     "--support", str(support_csv), "--out", str(tmp_path / "o.json")])
        assert code == EXIT_IO

    def test_novel_bad_support_exits_2(self, tmp_path):
        out_dir = self._synth(tmp_path)
        bad = tmp_path / "support.csv"
        bad.write_text("wrong_header\n0\n")
        code = main(["novel", "--dataset", str(out_dir), "--support", str(bad),
                     "--out", str(tmp_path / "o.json")])
        assert code == EXIT_CONFIG

    def test_novel_out_of_range_support_exits_2(self, tmp_path):
        out_dir = self._synth(tmp_path, p=8)
        bad = tmp_path / "support.csv"
        bad.write_text("index\n42\n")
        code = main(["novel", "--dataset", str(out_dir), "--support", str(bad),
                     "--out", str(tmp_path / "o.json")])
        assert code == EXIT_CONFIG


class TestRealdataCommand:
    def test_pipeline_csv_and_figure(self, expression_csv, tmp_path):
        out = tmp_path / "real.csv"
        code = main([
            "realdata", "--csv", str(expression_csv), "--response", "TF01",
            "--l", "4", "--out", str(out), "--reps", "2", "--evals", "3",
            "--novel-rep", "2", "--workers", "1",
        ])
        assert code == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == "method,l,support_size_mean,support_size_std,mse_mean,mse_std"
        assert len(lines) == 4
        assert (tmp_path / "real.png").exists()

    def test_missing_response_exits_2(self, expression_csv, tmp_path):
        code = main([
            "realdata", "--csv", str(expression_csv), "--response", "EGR2",
            "--l", "4", "--out", str(tmp_path / "o.csv"), "--reps", "1",
        ])
        assert code == EXIT_CONFIG


class TestTuneCommand:
    def test_meta_tune_output(self, expression_csv, tmp_path):
        out = tmp_path / "tune.json"
        code = main([
            "tune", "--csv", str(expression_csv), "--method", "meta",
            "--response", "TF01", "--l", "4", "--evals", "5",
            "--out", str(out),
        ])
        assert code == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["method"] == "meta"
        assert 0 <= doc["lambda"] <= 100

    def test_dirty_alias(self, expression_csv, tmp_path):
        out = tmp_path / "tune.json"
        code = main([
            "tune", "--csv", str(expression_csv), "--method", "dirty",
            "--response", "TF01", "--l", "4", "--evals", "3",
            "--out", str(out),
        ])
        assert code == EXIT_OK
        assert json.loads(out.read_text())["method"] == "dirty_model"


class TestConsoleEntry:
    def test_module_invocation(self, phase_config, tmp_path):
        out = tmp_path / "o.csv"
        proc = subprocess.run(
            [sys.executable, "-m", "metasparse", "phase",
             "--config", str(phase_config), "--out", str(out),
             "--workers", "1", "--no-plot"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert out.exists()

    def test_bad_subcommand_exits_2(self):
        proc = subprocess.run(
            [sys.executable, "-m", "metasparse", "frobnicate"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 2
