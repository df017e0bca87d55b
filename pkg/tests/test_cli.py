# Copyright (C) 2025 The StableRDE Authors
# SPDX-License-Identifier: LGPL-3.0-only

import csv
import io
import json

import pytest

from StableRDE.cli import main, read_concat_input
from StableRDE.config import RunConfig, load_config
from StableRDE.errors import ConfigError
from StableRDE.trees import segment, star_tree, write_tree


class TestCommands:
    """Subcommands of the stablerde entry point"""

    def test_marchal_grow(self, capsys):
        """Test that grow writes an rtree-v1 document to stdout"""
        assert main(["marchal", "grow", "--alpha", "2", "--n", "2", "--seed", "1"]) == 0
        captured = capsys.readouterr()
        data = json.loads(captured.out)
        assert data["format"] == "rtree-v1"
        assert data["discrete"]["labels"] == ["A0", "A1", "V2", "A2"]
        assert "2 leaves" in captured.err

    def test_out_file_is_reproducible(self, tmp_path):
        """Test that the same seed writes the same file"""
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        argv = ["marchal", "grow", "--alpha", "1.5", "--n", "30", "--seed", "9", "--out"]
        assert main(argv + [str(a)]) == 0
        assert main(argv + [str(b)]) == 0
        assert a.read_text() == b.read_text()

    def test_usage_error(self, capsys):
        """Test that an unknown flag is a usage error"""
        assert main(["marchal", "grow", "--colour", "red"]) == 2
        assert "unrecognized arguments" in capsys.readouterr().err

    def test_ghdist_needs_two_files(self, capsys):
        """Test that missing tree files are a usage error"""
        assert main(["ghdist"]) == 2
        assert "required" in capsys.readouterr().err
        assert main(["ghdist", "a.json"]) == 2

    def test_domain_error(self, caplog):
        """Test that an invalid alpha fails with status 1"""
        assert main(["marchal", "grow", "--alpha", "2.5", "--n", "3"]) == 1
        assert "alpha" in caplog.text

    def test_missing_parameter(self, caplog):
        """Test that required parameters are reported by name"""
        assert main(["crp", "--beta", "0.5", "--n", "10"]) == 1
        assert "theta" in caplog.text

    def test_shapes(self, capsys):
        """Test the shape table"""
        assert main(["marchal", "shapes", "--alpha", "1.5", "--n", "3"]) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert len(rows) == 4
        assert sum(float(r["prob"]) for r in rows) == pytest.approx(1.0)

    def test_ghdist(self, tmp_path, capsys):
        """Test the distance between two tree files"""
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_tree(star_tree([1.0, 1.0, 2.0], marked=2), a)
        write_tree(star_tree([1.0, 1.0, 2.0], marked=3), b)
        assert main(["ghdist", str(a), str(b), "--marked"]) == 0
        assert json.loads(capsys.readouterr().out)["distance"] == 0.5
        assert main(["ghdist", str(a), str(b)]) == 0
        assert json.loads(capsys.readouterr().out)["distance"] == 0.0

    def test_missing_file(self, tmp_path):
        """Test that a missing tree file fails with status 1"""
        assert main(["ghdist", str(tmp_path / "none.json"), str(tmp_path / "none.json")]) == 1

    def test_concat(self, tmp_path, capsys):
        """Test concatenation from a JSON input"""
        path = tmp_path / "input.json"
        path.write_text(json.dumps({
            "xi": {"x": [0.25, 0.25, 0.25, 0.25], "p": [1.0]},
            "beta": 0.5,
            "trees": [segment(1.0).to_dict()] * 4,
        }))
        assert read_concat_input(str(path)).beta == 0.5
        assert main(["concat", "--input", str(path)]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["format"] == "rtree-v1"

    def test_rde_iterate_spine(self, capsys):
        """Test spine draws as CSV"""
        argv = ["rde", "iterate", "--xi", "stable:2", "--init", "exp:1", "--depth", "3", "--reps", "5"]
        assert main(argv) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert [int(r["replicate"]) for r in rows] == list(range(5))
        assert all(float(r["spine"]) > 0 for r in rows)

    def test_rde_iterate_full(self, capsys):
        """Test a full iterate as a tree document"""
        assert main(["rde", "iterate", "--xi", "stable:2", "--depth", "2", "--mode", "full"]) == 0
        assert json.loads(capsys.readouterr().out)["format"] == "rtree-v1"

    def test_verify_retries_by_default(self, monkeypatch):
        """Test that the suite reruns failing cases unless told not to"""
        seen = []

        def fake_suite(suite, seed, threads, retry_once, only):
            seen.append(retry_once)
            return []

        monkeypatch.setattr("StableRDE.cli.run_suite", fake_suite)
        assert main(["verify"]) == 0
        assert main(["verify", "--retry-once"]) == 0
        assert main(["verify", "--no-retry"]) == 0
        assert seen == [True, True, False]

    def test_verify_only(self, capsys):
        """Test a subset of the acceptance suite as JSON"""
        assert main(["verify", "--only", "shape_law", "--format", "json"]) == 0
        captured = capsys.readouterr()
        reports = json.loads(captured.out)
        assert [r["name"] for r in reports] == ["shape_law"]
        assert "runtime" not in reports[0]
        assert "comparisons passed" in captured.err


class TestConfig:
    """Run configuration precedence"""

    def test_defaults(self):
        """Test the defaults without file or flags"""
        cfg = load_config()
        assert cfg.seed == 42
        assert cfg.out == "-"
        assert cfg.threads >= 1

    def test_precedence(self, tmp_path):
        """Test that flags override the file and the file overrides defaults"""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 7, "params": {"alpha": 1.5, "n": 10}, "reps": 3}))
        cfg = load_config(path, {"n": 20, "seed": None})
        assert cfg.seed == 7
        assert cfg.params == {"alpha": 1.5, "n": 20, "reps": 3}
        assert cfg.get("missing", 5) == 5

    def test_empty_file(self, tmp_path):
        """Test that an empty file means defaults"""
        path = tmp_path / "empty.json"
        path.write_text("")
        assert load_config(path).seed == 42

    def test_invalid_values(self):
        """Test that every invalid key is reported"""
        with pytest.raises(ConfigError) as info:
            load_config(None, {"alpha": 3.0, "reps": 0, "seed": -1, "format": "xml"})
        assert sorted(info.value.keys) == ["alpha", "format", "reps", "seed"]

    def test_invalid_json(self, tmp_path):
        """Test that a malformed file is a configuration error"""
        path = tmp_path / "bad.json"
        path.write_text("{seed: 1")
        with pytest.raises(ConfigError) as info:
            load_config(path)
        assert info.value.keys == ("file",)

    def test_config_file_from_cli(self, tmp_path, capsys):
        """Test that --config supplies parameters to a subcommand"""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"alpha": 1.5, "n": 3}))
        assert main(["marchal", "shapes", "--config", str(path)]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 5

    def test_run_config(self):
        """Test parameter lookup"""
        assert RunConfig(params={"eps": None}).get("eps", 0.1) == 0.1


if __name__ == "__main__":
    pytest.main([__file__])
