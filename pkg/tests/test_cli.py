import csv
import json
import os
from pathlib import Path

import numpy as np
import pytest

from lungpipe.cli import (
    CANDIDATE_CSV_COLUMNS,
    RunConfig,
    load_cube_dataset,
    main,
    read_truth_csv,
    run_end_to_end,
    save_cube_dataset,
    validate_config,
)
from lungpipe.errors import ConfigError
from lungpipe.volume import load_volume

REPO = Path(__file__).resolve().parent.parent


@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("phantoms")
    rc = main(
        ["phantom", "--count", "2", "--shape", "64", "96", "96",
         "--seed", "11", "--out", str(out)]
    )
    assert rc == 0
    return out


def run_json(capsys, argv):
    rc = main(argv)
    captured = capsys.readouterr()
    payload = json.loads(captured.out) if rc == 0 else json.loads(captured.err)
    return rc, payload


class TestValidateConfig:
    def test_empty_config_names_required_keys(self):
        violations = validate_config(RunConfig())
        joined = "\n".join(violations)
        assert any(v.startswith("scans:") for v in violations)
        assert any(v.startswith("truth:") for v in violations)
        assert "required" in joined

    def test_swapped_diameter_bounds_flagged(self, tmp_path):
        cfg = self.valid_cfg(tmp_path)
        cfg.d_min, cfg.d_max = 60.0, 5.0
        assert any(v.startswith("d_min/d_max:") for v in validate_config(cfg))

    def test_nonbaseline_mode_requires_checkpoint(self, tmp_path):
        cfg = self.valid_cfg(tmp_path)
        cfg.mode = "prob"
        assert any(v.startswith("mal_model:") for v in validate_config(cfg))

    def test_bad_mode_and_grids_flagged(self, tmp_path):
        cfg = self.valid_cfg(tmp_path)
        cfg.mode, cfg.grids = "ensemble", "huge"
        violations = validate_config(cfg)
        assert any(v.startswith("mode:") for v in violations)
        assert any(v.startswith("grids:") for v in violations)

    def test_probability_thresholds_bounded(self, tmp_path):
        cfg = self.valid_cfg(tmp_path)
        cfg.decision_threshold = 1.5
        assert any(v.startswith("decision_threshold:") for v in validate_config(cfg))

    def test_valid_config_has_no_violations(self, tmp_path):
        assert validate_config(self.valid_cfg(tmp_path)) == []

    def test_shipped_default_config_is_valid(self):
        cfg = RunConfig.from_json(str(REPO / "configs" / "default.json"))
        assert validate_config(cfg) == []

    @staticmethod
    def valid_cfg(tmp_path):
        scans = tmp_path / "scans"
        scans.mkdir(exist_ok=True)
        truth = tmp_path / "truth.csv"
        truth.write_text("scan_id,label\ns1,0\n")
        return RunConfig(scans=str(scans), truth=str(truth))


class TestRunConfig:
    def test_unknown_key_raises(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            RunConfig.from_dict({"scans": "x", "learning_rate": 0.1})

    def test_dict_roundtrip(self):
        cfg = RunConfig(scans="/a", truth="/b.csv", mode="class", d_max=30.0)
        assert RunConfig.from_dict(cfg.to_dict()) == cfg

    def test_relative_paths_resolve_against_config_location(self, tmp_path):
        sub = tmp_path / "configs"
        sub.mkdir()
        path = sub / "run.json"
        path.write_text(json.dumps({"scans": "../data/scans", "truth": "/abs/truth.csv"}))
        cfg = RunConfig.from_json(str(path))
        assert cfg.scans == str(tmp_path / "configs" / ".." / "data" / "scans")
        assert cfg.truth == "/abs/truth.csv"


class TestPhantomCommand:
    def test_writes_scans_and_truth(self, phantom_dir):
        scans = sorted((phantom_dir / "scans").glob("*.mhd"))
        assert len(scans) == 2
        truth = read_truth_csv(str(phantom_dir / "truth.csv"))
        assert set(truth.values()) <= {0, 1}
        detail = json.loads((phantom_dir / "truth.json").read_text())
        assert all("nodules" in row for row in detail)

    def test_single_scan_from_spec_json(self, tmp_path, capsys):
        from lungpipe.phantom import default_spec, spec_to_dict

        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec_to_dict(default_spec(shape=(48, 72, 72)))))
        rc, payload = run_json(
            capsys, ["phantom", "--spec", str(spec_path), "--out", str(tmp_path / "out")]
        )
        assert rc == 0 and payload["scans"] == 1
        assert len(list((tmp_path / "out" / "scans").glob("*.mhd"))) == 1


class TestScanCommands:
    def scan_path(self, phantom_dir):
        return str(sorted((phantom_dir / "scans").glob("*.mhd"))[0])

    def test_preprocess_normalizes_to_unit_range(self, phantom_dir, tmp_path, capsys):
        out = str(tmp_path / "pre.mhd")
        rc, payload = run_json(
            capsys, ["preprocess", "--in", self.scan_path(phantom_dir), "--out", out]
        )
        assert rc == 0
        volume = load_volume(out)
        assert volume.voxels.min() >= 0.0 and volume.voxels.max() <= 1.0
        assert list(volume.shape) == payload["shape"]

    def test_segment_writes_binary_mask(self, phantom_dir, tmp_path, capsys):
        out = str(tmp_path / "mask.mhd")
        rc, payload = run_json(
            capsys, ["segment", "--in", self.scan_path(phantom_dir), "--out", out]
        )
        assert rc == 0 and payload["lung_voxels"] > 0
        mask = load_volume(out)
        assert set(np.unique(mask.voxels)) <= {0.0, 1.0}
        assert int(mask.voxels.sum()) == payload["lung_voxels"]

    def test_detect_writes_candidate_csv(self, phantom_dir, tmp_path, capsys):
        out = str(tmp_path / "cands.csv")
        rc, payload = run_json(
            capsys,
            ["detect", "--in", self.scan_path(phantom_dir), "--out", out, "--d-max", "30"],
        )
        assert rc == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == CANDIDATE_CSV_COLUMNS
        assert len(rows) - 1 == payload["candidates"]


class TestDatasetAndTraining:
    def test_build_dataset_roundtrip(self, tmp_path, capsys):
        out = str(tmp_path / "cubes.npz")
        rc, payload = run_json(
            capsys, ["build-dataset", "--n-per-class", "2", "--out", out]
        )
        assert rc == 0
        assert payload["counts"] == {"1": 2, "4": 2, "5": 2}
        cubes, labels, subjects = load_cube_dataset(out)
        assert len(cubes) == 6
        assert cubes[0].values.shape == (32, 32, 32)
        assert len(set(subjects)) == 3  # two cubes per synthetic subject

    def test_fp_dataset_is_binary(self, tmp_path, capsys):
        out = str(tmp_path / "fp.npz")
        rc, payload = run_json(
            capsys, ["build-dataset", "--fp", "--n-per-class", "2", "--out", out]
        )
        assert rc == 0 and payload["counts"] == {"0": 2, "1": 2}

    def test_train_malignancy_writes_checkpoint(self, tmp_path, capsys):
        dataset = str(tmp_path / "cubes.npz")
        assert main(["build-dataset", "--n-per-class", "6", "--out", dataset]) == 0
        capsys.readouterr()
        out = str(tmp_path / "mal.npz")
        rc, payload = run_json(
            capsys,
            ["train-malignancy", "--dataset", dataset, "--out", out,
             "--filters", "2", "4", "4", "--dense-units", "8",
             "--epochs", "2", "--no-augment"],
        )
        assert rc == 0 and payload["epochs"] >= 1
        from lungpipe.neural import load_model

        model = load_model(out)
        assert model.class_order == ["1", "4", "5"]

    def test_train_fp_writes_checkpoint(self, tmp_path, capsys):
        dataset = str(tmp_path / "fp.npz")
        assert main(["build-dataset", "--fp", "--n-per-class", "4", "--out", dataset]) == 0
        capsys.readouterr()
        out = str(tmp_path / "fp_model.npz")
        rc, payload = run_json(
            capsys,
            ["train-fp", "--dataset", dataset, "--out", out,
             "--filters", "2", "--dense-units", "8", "--depth", "1",
             "--epochs", "1", "--no-augment"],
        )
        assert rc == 0
        from lungpipe.neural import load_model

        assert load_model(out).spec.output_kind == "sigmoid"


class TestRunPipeline:
    def test_shipped_config_end_to_end(self, tmp_path, capsys):
        out = str(tmp_path / "run")
        rc, payload = run_json(
            capsys,
            ["run-pipeline", "--config", str(REPO / "configs" / "default.json"),
             "--out", out],
        )
        assert rc == 0
        report = json.loads((Path(out) / "report.json").read_text())
        assert report["metrics"]["weighted_f1"] == pytest.approx(payload["weighted_f1"])
        assert len(report["patients"]) == payload["patients"]
        manifest = json.loads((Path(out) / "manifest.json").read_text())
        assert manifest["config_hash"] == report["manifest"]["config_hash"]
        assert set(manifest["input_hashes"]) == {
            os.path.basename(p) for p in (REPO / "data" / "scans").glob("*.mhd")
        }

    def test_prob_mode_without_checkpoint_fails_before_processing(self):
        cfg = RunConfig.from_json(str(REPO / "configs" / "default.json"))
        cfg.mode = "prob"
        with pytest.raises(ConfigError, match="mal_model"):
            run_end_to_end(cfg)

    def test_validate_config_subcommand(self, capsys):
        rc, payload = run_json(
            capsys, ["validate-config", "--config", str(REPO / "configs" / "default.json")]
        )
        assert rc == 0 and payload == {"ok": True, "violations": []}


class TestErrorReporting:
    def test_missing_input_gives_json_error_and_exit_1(self, capsys):
        rc, payload = run_json(
            capsys, ["segment", "--in", "/no/such/file.mhd", "--out", "/tmp/x.mhd"]
        )
        assert rc == 1
        assert "message" in payload and "error" in payload

    def test_invalid_config_json_reported(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        rc, payload = run_json(capsys, ["validate-config", "--config", str(bad)])
        assert rc == 1 and payload["error"] == "JSONDecodeError"


class TestEvaluateCommand:
    def make_report(self, tmp_path):
        patients = [
            {"patient_id": "s1", "label": "cancer", "probability": 0.9,
             "nodule_id": "s1#0", "flagged": False},
            {"patient_id": "s2", "label": "non-cancer", "probability": 0.2,
             "nodule_id": "s2#0", "flagged": False},
            {"patient_id": "s3", "label": "non-cancer", "probability": 0.0,
             "nodule_id": None, "flagged": True},
        ]
        pred = tmp_path / "report.json"
        pred.write_text(json.dumps({"patients": patients}))
        truth = tmp_path / "truth.csv"
        truth.write_text("scan_id,label\ns1,1\ns2,0\ns3,1\n")
        return str(pred), str(truth)

    def test_metrics_and_pr_curve(self, tmp_path, capsys):
        pred, truth = self.make_report(tmp_path)
        out = str(tmp_path / "metrics.json")
        plot = str(tmp_path / "pr.png")
        rc, payload = run_json(
            capsys, ["evaluate", "--pred", pred, "--truth", truth,
                     "--out", out, "--plot", plot],
        )
        assert rc == 0
        # s1 correct, s2 correct, s3 missed: recall on cancer = 1/2
        cancer = payload["metrics"]["per_class"]["cancer"]
        assert cancer["recall"] == pytest.approx(0.5)
        assert payload["pr_curve"]
        assert json.loads(Path(out).read_text()) == payload
        assert Path(plot).stat().st_size > 0

    def test_missing_prediction_is_an_error(self, tmp_path, capsys):
        pred, _ = self.make_report(tmp_path)
        truth = tmp_path / "truth2.csv"
        truth.write_text("scan_id,label\ns1,1\ns9,0\n")
        rc, payload = run_json(capsys, ["evaluate", "--pred", pred, "--truth", str(truth)])
        assert rc == 1 and "s9" in payload["message"]


class TestCubeDatasetIo:
    def test_save_load_roundtrip(self, tmp_path):
        from lungpipe.volume import VoxelCube

        rng = np.random.default_rng(0)
        triples = [
            (VoxelCube(rng.random((32, 32, 32)).astype(np.float32),
                       (0.0, 0.0, 0.0), f"subj{i}"), label, f"subj{i}")
            for i, label in enumerate(["1", "4", "5"])
        ]
        path = str(tmp_path / "d.npz")
        save_cube_dataset(triples, path)
        cubes, labels, subjects = load_cube_dataset(path)
        assert labels == ["1", "4", "5"]
        assert subjects == ["subj0", "subj1", "subj2"]
        assert np.allclose(cubes[0].values, triples[0][0].values)
