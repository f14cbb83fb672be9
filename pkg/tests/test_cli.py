import csv
import io
import json
import os
import shutil

from bbaudit.cli import EXIT_ERROR, EXIT_OK, EXIT_REFUSED, main, write_atomic
from conftest import fixture_path

POWER = """
[power]
n_per_group = 50
trials = 400
eta = 0.1
gaps = {gaps}

[audit]
presumption = "Compliance"
significance = 0.05
method = "ExactBinomialBoundary"
seed = 7

[output]
name = "power"
"""

REMOTE = """
[model]
source = "remote"
url = "http://127.0.0.1:9"
schema = { features = { x = { kind = "numeric", low = 0, high = 1 } } }
output_space = { kind = "finite", values = [0, 1] }
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _golden_run(tmp_path, **replace):
    with open(fixture_path("golden_run.toml")) as fh:
        text = fh.read()
    for old, new in replace.items():
        text = text.replace(old, new)
    return _write(tmp_path, "run.toml", text)


def _read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


class TestRun:
    def test_compliant_model(self, tmp_path):
        cfg = _golden_run(tmp_path)
        assert main(["run", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_OK
        doc = json.loads(_read(tmp_path / "golden.json"))
        assert doc["status"] == "completed"
        assert doc["outcome"]["decision"] == "FailToReject"
        assert doc["outcome"]["disclosure"]["presumption"] == "Compliance"
        assert len(doc["config_sha256"]) == 64
        assert "Decision: FailToReject" in _read(tmp_path / "golden.md")
        lines = _read(tmp_path / "golden.evidence.jsonl").splitlines()
        assert json.loads(lines[0])["N"] == 400 and len(lines) == 401

    def test_invalid_significance(self, tmp_path, capsys):
        cfg = _golden_run(tmp_path, **{"significance = 0.05": "significance = 1.5"})
        assert main(["run", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_ERROR
        assert "audit.significance" in capsys.readouterr().err
        assert not os.path.exists(tmp_path / "golden.json")

    def test_missing_presumption(self, tmp_path, capsys):
        cfg = _golden_run(tmp_path, **{'presumption = "Compliance"': ""})
        assert main(["run", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_ERROR
        assert "audit.presumption" in capsys.readouterr().err

    def test_byte_identical_reruns(self, tmp_path):
        cfg = _golden_run(tmp_path)
        outs = []
        for w in ("1", "3"):
            d = tmp_path / f"out{w}"
            d.mkdir()
            assert main(["run", "--config", cfg, "--out-dir", str(d), "--workers", w]) == EXIT_OK
            outs.append({f: _read(d / f) for f in sorted(os.listdir(d))})
        assert outs[0] == outs[1]

    def test_seed_override(self, tmp_path):
        cfg = _golden_run(tmp_path)
        main(["run", "--config", cfg, "--out-dir", str(tmp_path), "--seed", "5", "--format", "json"])
        assert json.loads(_read(tmp_path / "golden.json"))["seed"] == 5
        assert not os.path.exists(tmp_path / "golden.md")

    def test_unknown_key_strict(self, tmp_path, capsys):
        cfg = _golden_run(tmp_path, **{"[output]": "[output]\ncolour = 3"})
        assert main(["run", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_ERROR
        assert "output.colour" in capsys.readouterr().err

    def test_unknown_key_lenient(self, tmp_path, capsys):
        cfg = _golden_run(tmp_path, **{"[output]": "[output]\ncolour = 3"})
        assert main(["run", "--config", cfg, "--out-dir", str(tmp_path), "--no-strict"]) == EXIT_OK
        assert "warning" in capsys.readouterr().err

    def test_refusal_exits_one(self, tmp_path, capsys):
        cfg = _golden_run(tmp_path, **{"n = 400": "n = 20", "G1 = 200, G2 = 200": "G1 = 10, G2 = 10"})
        assert main(["run", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_REFUSED
        doc = json.loads(_read(tmp_path / "golden.json"))
        assert doc["status"] == "refused" and doc["refusal"]["recommended_n"] >= 30
        assert "refused" in capsys.readouterr().err

    def test_missing_config(self, capsys):
        assert main(["run"]) == EXIT_ERROR
        assert main(["run", "--config", "/nonexistent/run.toml"]) == EXIT_ERROR


class TestPower:
    def test_single_compliant_point(self, tmp_path):
        cfg = _write(tmp_path, "p.toml", POWER.format(gaps="[0.0]"))
        assert main(["power", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_OK
        (row,) = json.loads(_read(tmp_path / "power.json"))["rows"]
        assert row["null_true"] and row["TPR_hat"] is None and row["FPR_hat"] is not None
        assert row["FPR_hat"] <= 0.05 + 3 * (0.05 * 0.95 / 400) ** 0.5

    def test_tpr_monotone_in_gap(self, tmp_path):
        cfg = _write(tmp_path, "p.toml", POWER.format(gaps="[0.15, 0.25, 0.35]"))
        assert main(["power", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_OK
        rows = list(csv.DictReader(io.StringIO(_read(tmp_path / "power.csv"))))
        tpr = [float(r["TPR_hat"]) for r in rows]
        assert tpr == sorted(tpr) and tpr[0] < tpr[-1]

    def test_remote_model_refused(self, tmp_path, capsys):
        cfg = _write(tmp_path, "p.toml", REMOTE + POWER.format(gaps="[0.0]"))
        assert main(["power", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_REFUSED
        assert "ground truth" in capsys.readouterr().err

    def test_gap_outside_unit_interval(self, tmp_path, capsys):
        cfg = _write(tmp_path, "p.toml", POWER.format(gaps="[1.5]"))
        assert main(["power", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_ERROR
        assert "power.gaps" in capsys.readouterr().err


class TestLL144:
    def _config(self, tmp_path, extra=""):
        with open(fixture_path("ll144_config.toml")) as fh:
            text = fh.read() + extra
        return _write(tmp_path, "ll.toml", text + '\n[output]\nname = "summary"\n')

    def test_golden(self, tmp_path):
        cfg = self._config(tmp_path)
        data = str(tmp_path / "data.csv")
        shutil.copy(fixture_path("ll144_fixture.csv"), data)
        assert main(["ll144", data, "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_OK
        assert _read(tmp_path / "summary.json") == _read(fixture_path("ll144_golden.json"))
        assert _read(tmp_path / "summary.md") == _read(fixture_path("ll144_golden.md"))

    def test_quarantined_rows_reported(self, tmp_path, capsys):
        main(["ll144", fixture_path("ll144_fixture.csv"), "--config", self._config(tmp_path),
              "--out-dir", str(tmp_path)])
        err = capsys.readouterr().err
        assert "quarantined row 13: score out of range" in err

    def test_header_only(self, tmp_path, capsys):
        data = _write(tmp_path, "empty.csv", "applicant_id,job_category,race_ethnicity,sex,demographics_source,"
                                             "selected,score\n")
        assert main(["ll144", data, "--config", self._config(tmp_path), "--out-dir", str(tmp_path)]) == \
            EXIT_REFUSED
        assert "no usable records" in capsys.readouterr().err

    def test_missing_columns(self, tmp_path, capsys):
        data = _write(tmp_path, "bad.csv", "applicant_id,sex\nX,Male\n")
        assert main(["ll144", data, "--config", self._config(tmp_path), "--out-dir", str(tmp_path)]) == EXIT_ERROR
        assert "race_ethnicity" in capsys.readouterr().err

    def test_insufficient_cells_without_model(self, tmp_path):
        cfg = self._config(tmp_path, "allow_test_data = true\n")
        out = tmp_path / "o"
        out.mkdir()
        assert main(["ll144", fixture_path("ll144_fixture.csv"), "--config", cfg, "--out-dir", str(out),
                     "--format", "json", "--format", "csv"]) == EXIT_OK
        doc = json.loads(_read(out / "summary.json"))
        statuses = {s["job_category"]: s["test_data_status"] for s in doc["job_categories"]}
        assert statuses["Analyst"] == "not generated: no model configured"
        assert "insufficient data" in _read(out / "summary.csv")

    def test_test_data_from_configured_model(self, tmp_path):
        model = """
[model]
source = "synthetic"
family = "GroupThreshold"
params = { p_1 = 0.8, p_2 = 0.5, eta = 0.1, groups = ["Female", "Male"], features = { race_ethnicity = ["Asian", "Black", "White"], sex = ["Female", "Male"] } }
"""
        cfg = self._config(tmp_path, "allow_test_data = true\ntest_data_n = 60\n" + model)
        assert main(["ll144", fixture_path("ll144_fixture.csv"), "--config", cfg, "--out-dir", str(tmp_path)]) \
            == EXIT_OK
        doc = json.loads(_read(tmp_path / "summary.json"))
        gens = doc["test_data"]["generations"]
        assert {g["job_category"] for g in gens} == {"Analyst", "Engineer"}
        assert all(g["n"] == 60 for g in gens)
        assert "Test data" in _read(tmp_path / "summary.md")


def test_simulate_smoke(tmp_path):
    cfg = _write(tmp_path, "s.toml", """
[simulate]
trials = 100
n_per_group = 20
budget = 40
lipschitz_runs = 2

[audit]
seed = 3
""")
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(_read(tmp_path / "simulate.csv"))))
    assert {r["family"] for r in rows} == {"GroupThreshold", "ScoreFunction", "LossPlant"}
    loss = [r for r in rows if r["family"] == "LossPlant"]
    assert [r["rejections"] for r in loss] == ["0", "1"]


def test_write_atomic_leaves_no_temporaries(tmp_path):
    path = str(tmp_path / "report.json")
    write_atomic(path, "one\n")
    write_atomic(path, "two\n")
    assert _read(path) == "two\n" and os.listdir(tmp_path) == ["report.json"]
