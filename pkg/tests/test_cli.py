import csv
import json

import numpy as np
import pytest

from birdnest import cli


SPEC_DOC = {
    "m": 120,
    "pi": [0.5, 0.5],
    "alphas": [[9, 1, 1, 1, 1], [1, 1, 1, 1, 9]],
    "betas": [
        [0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4],
        [4, 3.5, 3, 2.5, 2, 1.5, 1, 0.5],
    ],
    "ratings_per_user": 25,
    "seed": 11,
}


@pytest.fixture
def events_csv(tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(SPEC_DOC))
    out = tmp_path / "events.csv"
    rc = cli.main(
        ["simulate", "--spec", str(spec_path), "--output", str(out), "--seed", "11"]
    )
    assert rc == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestPipeline:
    def test_simulate_outputs(self, events_csv, tmp_path):
        rows = read_csv(events_csv)
        assert {"user_id", "product_id", "stars", "timestamp"} <= set(rows[0])
        labels = read_csv(str(events_csv) + ".labels.csv")
        assert len(labels) == SPEC_DOC["m"]
        assert (tmp_path / "events.csv.config.json").exists()

    def test_fit_then_score(self, events_csv, tmp_path):
        model_path = tmp_path / "model.json"
        rc = cli.main(
            [
                "fit",
                "--input", str(events_csv),
                "--output", str(model_path),
                "--k", "2",
                "--seed", "0",
                "--restarts", "2",
            ]
        )
        assert rc == 0
        doc = json.loads(model_path.read_text())
        assert doc["K"] == 2
        assert len(doc["assignments"]) == SPEC_DOC["m"]
        assert "bucketing" in doc

        scores_path = tmp_path / "scores.csv"
        rc = cli.main(
            [
                "score",
                "--input", str(events_csv),
                "--model", str(model_path),
                "--output", str(scores_path),
                "--samples", "32",
                "--seed", "0",
            ]
        )
        assert rc == 0
        rows = read_csv(scores_path)
        assert len(rows) == SPEC_DOC["m"]
        assert [int(r["rank"]) for r in rows] == list(range(1, len(rows) + 1))
        assert scores_path.with_suffix(".json").exists()

    def test_rank_matches_fit_plus_score(self, events_csv, tmp_path):
        common = ["--input", str(events_csv), "--k", "2", "--seed", "0",
                  "--restarts", "2", "--samples", "32"]
        rank_out = tmp_path / "rank.csv"
        assert cli.main(["rank", "--output", str(rank_out)] + common) == 0

        model_path = tmp_path / "model.json"
        assert cli.main(
            ["fit", "--input", str(events_csv), "--output", str(model_path),
             "--k", "2", "--seed", "0", "--restarts", "2"]
        ) == 0
        score_out = tmp_path / "score.csv"
        assert cli.main(
            ["score", "--input", str(events_csv), "--model", str(model_path),
             "--output", str(score_out), "--samples", "32", "--seed", "0"]
        ) == 0
        assert rank_out.read_bytes() == score_out.read_bytes()

    def test_reruns_byte_identical(self, events_csv, tmp_path):
        common = ["--input", str(events_csv), "--k", "2", "--seed", "3",
                  "--restarts", "2", "--samples", "32"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(["rank", "--output", str(a)] + common) == 0
        assert cli.main(["rank", "--output", str(b)] + common) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_config_echo_written(self, events_csv, tmp_path):
        out = tmp_path / "rank.csv"
        assert cli.main(
            ["rank", "--input", str(events_csv), "--output", str(out),
             "--k", "2", "--seed", "5", "--restarts", "2", "--samples", "16"]
        ) == 0
        cfg = json.loads((tmp_path / "rank.csv.config.json").read_text())
        assert cfg["command"] == "rank"
        assert cfg["seed"] == 5
        assert cfg["chosen_k"] == 2
        assert "bucketing" in cfg

    def test_export_plots(self, events_csv, tmp_path):
        model_path = tmp_path / "model.json"
        assert cli.main(
            ["fit", "--input", str(events_csv), "--output", str(model_path),
             "--k", "2", "--seed", "0", "--restarts", "2"]
        ) == 0
        plots_dir = tmp_path / "plots"
        assert cli.main(
            ["export-plots", "--input", str(events_csv), "--model", str(model_path),
             "--output", str(plots_dir), "--top", "10", "--samples", "16",
             "--posterior-draws", "50", "--seed", "0"]
        ) == 0
        rating = read_csv(plots_dir / "rating_distributions.csv")
        assert [r["group"] for r in rating] == ["flagged", "rest"]
        for row in rating:
            vals = [float(v) for k, v in row.items() if k != "group"]
            assert sum(vals) == pytest.approx(1.0, abs=1e-9)
        assert (plots_dir / "temporal_distributions.csv").exists()
        samples = read_csv(plots_dir / "posterior_mean_rating_samples.csv")
        assert len(samples) == 10 * 50
        assert all(1.0 <= float(r["posterior_mean_rating"]) <= 5.0 for r in samples)


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert cli.main(["fit", "--input", "x.csv"]) == 1
        assert "code=1" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert cli.main(["frobnicate"]) == 1

    def test_missing_input_file(self, tmp_path, capsys):
        rc = cli.main(
            ["fit", "--input", str(tmp_path / "absent.csv"),
             "--output", str(tmp_path / "m.json"), "--k", "1", "--seed", "0"]
        )
        assert rc == 2
        assert "code=2" in capsys.readouterr().err

    def test_malformed_input_aborts(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("user_id,product_id,stars,timestamp\n" + "u1,p1,banana,notatime\n" * 10)
        rc = cli.main(
            ["fit", "--input", str(bad), "--output", str(tmp_path / "m.json"),
             "--k", "1", "--seed", "0"]
        )
        assert rc == 2

    def test_degenerate_data(self, tmp_path, capsys):
        # single-rating users provide no inter-arrival gaps, so no log base
        # can be chosen
        deg = tmp_path / "deg.csv"
        deg.write_text(
            "user_id,product_id,stars,timestamp\n"
            + "".join(f"u{i},p1,5,100\n" for i in range(5))
        )
        rc = cli.main(
            ["fit", "--input", str(deg), "--output", str(tmp_path / "m.json"),
             "--k", "1", "--seed", "0"]
        )
        assert rc == 3
        assert "code=3" in capsys.readouterr().err

    def test_rejected_rows_reported(self, events_csv, tmp_path):
        # inject a few bad rows below the abort threshold
        lines = events_csv.read_text().splitlines(keepends=True)
        bad = lines[:1] + ["ux,p1,banana,12\n"] + lines[1:]
        mixed = tmp_path / "mixed.csv"
        mixed.write_text("".join(bad))
        rc = cli.main(
            ["fit", "--input", str(mixed), "--output", str(tmp_path / "m.json"),
             "--k", "1", "--seed", "0"]
        )
        assert rc == 0
        errors = (tmp_path / "mixed.csv.errors.txt").read_text()
        assert "banana" in errors
