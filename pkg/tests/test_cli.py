"""
Testes da interface de linha de comando
"""

import json

import jsonschema
import pytest

from src.cli import main


@pytest.fixture
def example_csv(tmp_path):
    path = tmp_path / "example.csv"
    assert main(["example", "--output", str(path)]) == 0
    return path


def _analyze_args(path, *extra):
    return [
        "analyze", "--input", str(path), "--response", "bun_day90",
        "--factor", "dose", "--factor", "sex",
        "--covariate", "bun_baseline", "--covariate", "weight_change",
        *extra,
    ]


class TestAnalyze:
    """Subcomando analyze"""

    def test_bootstrap_report(self, example_csv, capsys):
        code = main(_analyze_args(
            example_csv, "--effect", "dose", "--contrast", "grandmean",
            "--variance-mode", "subjectwise", "--method", "boot", "--n-boot", "200",
        ))
        out = capsys.readouterr().out
        assert code == 0
        assert "Wild bootstrap: 200 replicates" in out
        assert "dose: 0" in out
        assert "Global test:" in out

    def test_json_is_reproducible(self, example_csv, tmp_path):
        outputs = []
        for name in ("first.json", "second.json"):
            target = tmp_path / name
            assert main(_analyze_args(example_csv, "--format", "json", "--output", str(target))) == 0
            outputs.append(target.read_bytes())
        assert outputs[0] == outputs[1]
        report = json.loads(outputs[0])
        assert report["method"] == "mvt-min"
        assert len(report["cells"]) == 12

    def test_text_and_json_carry_the_same_numbers(self, example_csv, tmp_path):
        extra = ("--effect", "dose", "--contrast", "grandmean")
        text_path, json_path = tmp_path / "report.txt", tmp_path / "report.json"
        assert main(_analyze_args(example_csv, *extra, "--output", str(text_path))) == 0
        assert main(_analyze_args(example_csv, *extra, "--format", "json", "--output", str(json_path))) == 0
        lines = [line.strip() for line in text_path.read_text(encoding="utf-8").splitlines()]
        report = json.loads(json_path.read_text(encoding="utf-8"))

        assert len(report["contrasts"]) == 3
        for row in report["contrasts"]:
            matches = [line for line in lines if line.startswith(row["label"] + " ")]
            assert len(matches) == 1
            tokens = matches[0][len(row["label"]):].split()
            fields = ("effect", "ci_lower", "ci_upper", "statistic", "p_value")
            assert [float(token) for token in tokens[:5]] == [row[field] for field in fields]
            assert (tokens[5:] == ["*"]) == row["reject"]

        critical = next(line for line in lines if line.startswith("Critical value:"))
        assert float(critical.split(":")[1]) == report["critical_value"]
        global_line = next(line for line in lines if line.startswith("Global test:"))
        assert f"T0 = {report['global_statistic']!r}" in global_line
        assert f"p = {report['global_p_value']!r}" in global_line

    def test_json_report_matches_published_schema(self, example_csv, tmp_path):
        schema_path, report_path = tmp_path / "schema.json", tmp_path / "report.json"
        assert main(["schema", "--output", str(schema_path)]) == 0
        for extra in ((), ("--variance-mode", "subjectwise", "--method", "boot", "--n-boot", "100")):
            assert main(_analyze_args(example_csv, *extra, "--format", "json", "--output", str(report_path))) == 0
            jsonschema.validate(
                instance=json.loads(report_path.read_text(encoding="utf-8")),
                schema=json.loads(schema_path.read_text(encoding="utf-8")),
            )

    def test_config_file_with_flag_override(self, example_csv, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "input_path": str(example_csv),
            "response": "bun_day90",
            "factors": ["dose", "sex"],
            "covariates": ["bun_baseline"],
            "effect": ["sex"],
        }), encoding="utf-8")
        assert main(["analyze", "--config", str(config), "--format", "json"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert [row["label"] for row in report["contrasts"]] == ["sex: M - F"]

    def test_missing_column(self, example_csv, capsys):
        code = main(["analyze", "--input", str(example_csv), "--response", "bun_day90",
                     "--factor", "dose", "--covariate", "creatinine"])
        assert code == 3
        err = capsys.readouterr().err.strip()
        assert err.startswith("error[schema]")
        assert "creatinine" in err
        assert len(err.splitlines()) == 1

    def test_missing_file(self, tmp_path, capsys):
        code = main(["analyze", "--input", str(tmp_path / "none.csv"), "--response", "y", "--factor", "g"])
        assert code == 3
        assert capsys.readouterr().err.startswith("error[file]")

    @pytest.mark.parametrize("value, message", [
        ("inf", "non-finite value 'inf'"),
        ("NaN", "non-finite value 'NaN'"),
        ("1,5", "non-numeric value '1,5'"),
    ])
    def test_bad_numeric_value_is_reported_by_row(self, tmp_path, capsys, value, message):
        data = tmp_path / "data.csv"
        rows = ["y,g", "1.0,a", "2.0,a", f"{value},a", "1.5,b", "2.5,b", "3.5,b"]
        data.write_text("\n".join(rows) + "\n", encoding="utf-8")
        code = main(["analyze", "--input", str(data), "--response", "y", "--factor", "g"])
        assert code == 3
        err = capsys.readouterr().err.strip()
        assert err.startswith("error[schema]: row 4: column 'y'")
        assert message in err

    def test_invalid_option_value(self, example_csv, capsys):
        code = main(_analyze_args(example_csv, "--alpha", "1.5"))
        assert code == 2
        assert capsys.readouterr().err.startswith("error[config]: alpha")

    def test_one_sided_has_open_upper_bounds(self, example_csv, capsys):
        assert main(_analyze_args(example_csv, "--effect", "sex", "--one-sided", "--format", "json")) == 0
        report = json.loads(capsys.readouterr().out)
        assert all(row["ci_upper"] is None for row in report["contrasts"])
        assert all(row["ci_lower"] is not None for row in report["contrasts"])

    def test_one_sided_bootstrap_is_rejected(self, example_csv, capsys):
        code = main(_analyze_args(
            example_csv, "--variance-mode", "subjectwise", "--method", "boot", "--one-sided", "--n-boot", "100",
        ))
        assert code == 2

    def test_bootstrap_needs_subjectwise(self, example_csv, capsys):
        code = main(_analyze_args(example_csv, "--method", "boot"))
        assert code == 2
        assert "error[config]" in capsys.readouterr().err


class TestSimulate:
    """Subcomando simulate"""

    def test_dry_run_lists_grid(self, tmp_path, capsys):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({
            "preset": 3, "study": "power", "setting": {"alternative": "alt1"},
            "methods": ["mvt-min"], "deltas": [0.0, 1.0],
        }), encoding="utf-8")
        assert main(["simulate", str(plan), "--dry-run"]) == 0
        out = capsys.readouterr().out
        assert "mvt-min" in out
        assert len(out.strip().splitlines()) == 3

    def test_zero_replicates_is_config_error(self, tmp_path, capsys):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({"preset": 3, "setting": {"n_sim": 0}}), encoding="utf-8")
        assert main(["simulate", str(plan)]) == 2
        assert capsys.readouterr().err.startswith("error[config]")

    def test_unreadable_plan(self, tmp_path, capsys):
        plan = tmp_path / "plan.json"
        plan.write_text("{not json", encoding="utf-8")
        assert main(["simulate", str(plan)]) == 2

    def test_runs_plan(self, tmp_path, capsys):
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({"preset": 3, "setting": {"n_sim": 2}, "methods": ["mvt-max"]}), encoding="utf-8")
        assert main(["simulate", str(plan), "--output-dir", str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "results.json").exists()
        assert "1 rows" in capsys.readouterr().out

    def test_workers_from_environment(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("MCTP_WORKERS", "zero")
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({"preset": 3}), encoding="utf-8")
        assert main(["simulate", str(plan), "--dry-run"]) == 2


class TestMisc:
    def test_example_is_seeded(self, tmp_path):
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["example", "--seed", "3", "--output", str(first)])
        main(["example", "--seed", "3", "--output", str(second)])
        assert first.read_bytes() == second.read_bytes()

    def test_schema(self, capsys):
        assert main(["schema"]) == 0
        schema = json.loads(capsys.readouterr().out)
        assert "contrasts" in schema["properties"]
