"""Command-line contract: files produced, exit codes, idempotency."""

import json
from pathlib import Path

import numpy as np
import pytest

from crossrec.cli import main, parse_config_file

FAST_TRAIN = [
    "--embedding-dim", "8", "--gate-hidden", "8", "--epochs", "4",
    "--batch-size", "16", "--lr", "0.1", "--patience", "0",
]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = main([
        "gen-synth", "--out", str(out), "--users", "14", "--source-items", "16",
        "--target-items", "16", "--latent-dim", "4", "--clusters", "5",
        "--source-interactions", "8", "--target-interactions", "6",
        "--entity-neighbors", "3", "--seed", "3",
    ])
    assert code == 0
    return out


def data_flags(synth_dir):
    return [
        "--source", str(synth_dir / "source.tsv"),
        "--target", str(synth_dir / "target.tsv"),
        "--kg", str(synth_dir / "kg.tsv"),
        "--map-source", str(synth_dir / "map_source.tsv"),
        "--map-target", str(synth_dir / "map_target.tsv"),
    ]


class TestGenSynth:
    def test_files_produced(self, synth_dir):
        for name in ("source.tsv", "target.tsv", "kg.tsv", "map_source.tsv",
                     "map_target.tsv", "flags.tsv", "manifest.json"):
            assert (synth_dir / name).exists()

    def test_manifest_records_outputs(self, synth_dir):
        manifest = json.loads((synth_dir / "manifest.json").read_text())
        assert manifest["command"] == "gen-synth"
        assert manifest["finished_at"] is not None
        assert any(name.endswith("flags.tsv") for name in manifest["outputs"])


class TestTrain:
    def test_produces_outputs_and_exit_zero(self, synth_dir, tmp_path):
        run_dir = tmp_path / "run"
        code = main(
            ["train", *data_flags(synth_dir), "--out", str(run_dir), "--seed", "3"]
            + FAST_TRAIN
        )
        assert code == 0
        assert (run_dir / "best.ckpt").exists()
        assert (run_dir / "training_log.tsv").exists()
        assert (run_dir / "manifest.json").exists()
        assert (run_dir / "data" / "ids_users.tsv").exists()
        log_lines = (run_dir / "training_log.tsv").read_text().strip().split("\n")
        assert log_lines[0].startswith("epoch\t")
        assert len(log_lines) == 1 + 4  # header + epochs

    def test_alpha_flags_accepted(self, synth_dir, tmp_path):
        # the stock movie-target weight configuration
        code = main(
            ["train", *data_flags(synth_dir), "--out", str(tmp_path / "run"),
             "--alpha1", "0.01", "--alpha2", "1.0", "--alpha3", "1.0", "--seed", "1"]
            + FAST_TRAIN
        )
        assert code == 0
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["config"]["alpha1"] == 0.01
        assert manifest["config"]["alpha2"] == 1.0
        assert manifest["config"]["alpha3"] == 1.0

    def test_missing_file_exit_two(self, synth_dir, tmp_path, capsys):
        flags = data_flags(synth_dir)
        flags[1] = str(synth_dir / "no-such-file.tsv")
        code = main(["train", *flags, "--out", str(tmp_path / "run")] + FAST_TRAIN)
        assert code == 2
        assert "no-such-file.tsv" in capsys.readouterr().err

    def test_deterministic_checkpoints(self, synth_dir, tmp_path):
        first, second = tmp_path / "a", tmp_path / "b"
        for out in (first, second):
            code = main(
                ["train", *data_flags(synth_dir), "--out", str(out), "--seed", "5"]
                + FAST_TRAIN
            )
            assert code == 0
        assert (first / "best.ckpt").read_bytes() == (second / "best.ckpt").read_bytes()
        assert (first / "training_log.tsv").read_text() == (second / "training_log.tsv").read_text()

    def test_config_file_and_flag_precedence(self, synth_dir, tmp_path):
        config = tmp_path / "run.conf"
        config.write_text("learning_rate = 0.05\nmax_epochs = 3\n# comment\nalpha1 = 0.9\n")
        run_dir = tmp_path / "run"
        code = main([
            "train", *data_flags(synth_dir), "--out", str(run_dir),
            "--config", str(config), "--alpha1", "0.111", "--seed", "2",
            "--embedding-dim", "8", "--gate-hidden", "8", "--batch-size", "16",
        ])
        assert code == 0
        resolved = json.loads((run_dir / "manifest.json").read_text())["config"]
        assert resolved["learning_rate"] == 0.05  # from config file
        assert resolved["max_epochs"] == 3
        assert resolved["alpha1"] == 0.111  # flag beats config file

    def test_unknown_flag_fails_fast(self, synth_dir, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["train", *data_flags(synth_dir), "--out", str(tmp_path), "--bogus", "1"])
        assert excinfo.value.code == 2


@pytest.fixture(scope="module")
def trained(synth_dir, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("trained")
    code = main(
        ["train", *data_flags(synth_dir), "--out", str(run_dir), "--seed", "3"]
        + FAST_TRAIN
    )
    assert code == 0
    return run_dir


class TestEvaluate:
    def test_six_aggregate_rows(self, synth_dir, trained, tmp_path):
        eval_dir = tmp_path / "eval"
        code = main([
            "evaluate", "--checkpoint", str(trained / "best.ckpt"),
            *data_flags(synth_dir), "--out", str(eval_dir), "--k", "10,100",
            "--seed", "3",
        ])
        assert code == 0
        rows = (eval_dir / "metrics.tsv").read_text().strip().split("\n")
        assert len(rows) == 6
        parsed = [row.split("\t") for row in rows]
        assert {p[0] for p in parsed} == {"ndcg", "hit", "mrr"}
        assert {p[1] for p in parsed} == {"10", "100"}
        for p in parsed:
            value = p[2]
            assert len(value.split(".")[1]) == 4  # four decimal places
        assert (eval_dir / "ranks.tsv").exists()

    def test_missing_checkpoint_exit_two(self, synth_dir, tmp_path):
        code = main([
            "evaluate", "--checkpoint", str(tmp_path / "missing.ckpt"),
            *data_flags(synth_dir), "--out", str(tmp_path / "eval"),
        ])
        assert code == 2


class TestInjectNoise:
    def test_exact_ten_percent(self, synth_dir, tmp_path):
        out = tmp_path / "noise"
        code = main([
            "inject-noise", "--source", str(synth_dir / "source.tsv"),
            "--ratio", "0.10", "--out", str(out), "--seed", "4",
        ])
        assert code == 0
        lines = (out / "noisy_source.tsv").read_text().strip().split("\n")
        assert lines[0].startswith("# noise-injected:")
        base = (synth_dir / "source.tsv").read_text().strip().split("\n")
        expected_added = int(np.ceil(0.10 * len(base)))
        assert len(lines) - 1 == len(base) + expected_added

    def test_derived_file_loads_back(self, synth_dir, tmp_path):
        out = tmp_path / "noise"
        main([
            "inject-noise", "--source", str(synth_dir / "source.tsv"),
            "--ratio", "0.05", "--out", str(out), "--seed", "4",
        ])
        from crossrec.data import load_interactions

        graph, _, _ = load_interactions(out / "noisy_source.tsv")
        base_graph, _, _ = load_interactions(synth_dir / "source.tsv")
        assert graph.edge_count > base_graph.edge_count


class TestAblate:
    def test_metrics_tagged_with_variant(self, synth_dir, tmp_path):
        out = tmp_path / "ablation"
        code = main([
            "ablate", "--variant", "no-kl", *data_flags(synth_dir),
            "--out", str(out), "--seed", "3", "--k", "10",
        ] + FAST_TRAIN)
        assert code == 0
        rows = (out / "metrics.tsv").read_text().strip().split("\n")
        assert all(row.startswith("no-kl\t") for row in rows)
        assert len(rows) == 3  # three metrics at one cutoff

    def test_rejects_unknown_variant(self, synth_dir, tmp_path):
        with pytest.raises(SystemExit):
            main([
                "ablate", "--variant", "mystery", *data_flags(synth_dir),
                "--out", str(tmp_path),
            ])


class TestConfigParsing:
    def test_key_value_lines(self, tmp_path):
        path = tmp_path / "c.conf"
        path.write_text("alpha1 = 0.5\n# full line comment\nbatch_size = 64  # trailing\n")
        assert parse_config_file(path) == {"alpha1": "0.5", "batch_size": "64"}

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "c.conf"
        path.write_text("not a config line\n")
        with pytest.raises(ValueError):
            parse_config_file(path)
