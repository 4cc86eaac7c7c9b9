"""End-to-end CLI: gen-data -> train -> eval -> retrieve -> inspect-labels."""

import csv

import pytest

from tristream.cli import main
from tristream.config import RunConfig, save_config


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Generated dataset + a finished training run shared by the CLI tests."""
    ws = tmp_path_factory.mktemp("cli")
    data = ws / "data"
    out = ws / "run"
    rc = main(
        [
            "gen-data",
            "--out",
            str(data),
            "--num-ids",
            "3",
            "--imgs-per-id",
            "4",
            "--query-per-id",
            "1",
            "--gallery-per-id",
            "2",
            "--size",
            "32x16",
            "--seed",
            "17",
        ]
    )
    assert rc == 0
    cfg = RunConfig(
        input_h=32,
        input_w=16,
        branch_channels=6,
        dense_channels=8,
        stem_channels=(4, 5),
        dense_hidden=4,
        num_parts=4,
        batch_identities=2,
        batch_instances=2,
        epochs_warmup=1,
        epochs_main=2,
        lr_init=1e-3,
        lr_peak=1e-2,
        lr_final=1e-4,
        seed=5,
        allow_shared_test_identities=True,
    )
    cfg_path = ws / "config.txt"
    save_config(cfg, cfg_path)
    rc = main(["train", "--config", str(cfg_path), "--dataset", str(data), "--out", str(out)])
    assert rc == 0
    return {"data": data, "out": out, "config": cfg_path, "checkpoint": out / "checkpoint.bin"}


class TestTrainOutputs:
    def test_artifacts_written(self, workspace):
        out = workspace["out"]
        for name in ("checkpoint.bin", "metrics.csv", "training_curves.png", "report.csv", "cmc_curve.png", "run_config.txt"):
            assert (out / name).exists(), name


class TestEval:
    def test_eval_writes_report_and_figure(self, workspace, tmp_path):
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(workspace["checkpoint"]),
                "--dataset",
                str(workspace["data"]),
                "--out",
                str(tmp_path),
            ]
        )
        assert rc == 0
        assert (tmp_path / "report.csv").exists()
        assert (tmp_path / "cmc_curve.png").exists()

    def test_gallery_equals_query_gives_rank1(self, workspace, tmp_path):
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(workspace["checkpoint"]),
                "--dataset",
                str(workspace["data"]),
                "--out",
                str(tmp_path),
                "--gallery-split",
                "query",
                "--scenario",
                "general",
            ]
        )
        assert rc == 0
        with open(tmp_path / "report.csv", newline="") as fh:
            rows = {(r["split"], r["metric"]): r["value"] for r in csv.DictReader(fh)}
        assert float(rows[("general", "rank1")]) == 1.0


class TestRetrieve:
    def test_top_k_rows_sorted(self, workspace, capsys):
        rc = main(
            [
                "retrieve",
                "--checkpoint",
                str(workspace["checkpoint"]),
                "--dataset",
                str(workspace["data"]),
                "--top-k",
                "5",
            ]
        )
        assert rc == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
        rows = lines[2:]  # header lines: query info + column names
        assert len(rows) == 5
        sims = [float(r.split()[-1]) for r in rows]
        assert sims == sorted(sims, reverse=True)


class TestInspectLabels:
    def test_label_dumps(self, workspace, tmp_path):
        rc = main(
            [
                "inspect-labels",
                "--checkpoint",
                str(workspace["checkpoint"]),
                "--dataset",
                str(workspace["data"]),
                "--out",
                str(tmp_path),
                "--limit",
                "4",
            ]
        )
        assert rc == 0
        pngs = list(tmp_path.glob("labels_[0-9]*.png"))
        assert len(pngs) == 4
        assert (tmp_path / "labels_overview.png").exists()


class TestUsageErrors:
    def test_unknown_flag_exits_nonzero(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--bogus", "x"])
        assert exc.value.code != 0

    def test_unknown_command_exits_nonzero(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code != 0

    def test_missing_dataset_path_reports_error(self, workspace, tmp_path):
        rc = main(
            [
                "eval",
                "--checkpoint",
                str(workspace["checkpoint"]),
                "--dataset",
                str(tmp_path / "nowhere"),
            ]
        )
        assert rc == 2

    def test_missing_checkpoint_reports_error(self, tmp_path):
        rc = main(["eval", "--checkpoint", str(tmp_path / "none.bin"), "--dataset", str(tmp_path)])
        assert rc == 2
