import csv
import json

import numpy as np
import pytest
from PIL import Image

from segsr.cli import main
from segsr.data import load_stereo_dataset
from segsr.metrics import psnr, ssim
from segsr.resize import upscale

SMALL_CFG = {
    "extractor": {"base_channels": 8, "n_rdb": 1, "rdb_layers": 2, "rdb_growth": 4, "ca_reduction": 4,
                  "aspp_rates": [1, 2]},
    "seg": {"encoder_widths": [8, 8, 16, 16, 32], "blocks_per_stage": [1, 1, 1, 1]},
    "train_sr": {"batch_size": 2, "patch_size": 8},
    "train_seg": {"batch_size": 2, "loss": "seg_ce_jaccard", "patch_size": None},
}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--n", 4, "--size", "64x96", "--out", root / "data", "--seed", 1) == 0
    (root / "cfg.json").write_text(json.dumps(SMALL_CFG))
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    w = workspace
    assert run("train-sr", "--config", w / "cfg.json", "--dataset", w / "data", "--out", w / "sr",
               "--steps", 3, "--seed", 0) == 0
    assert run("train-seg", "--config", w / "cfg.json", "--dataset", w / "data", "--out", w / "seg",
               "--steps", 2, "--seed", 0, "--sr-checkpoint", w / "sr" / "checkpoint.zip") == 0
    return w


def header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


class TestSynth:
    def test_layout(self, workspace):
        data = workspace / "data"
        assert len(list((data / "left").glob("*.png"))) == 4
        assert len(list((data / "right").glob("*.png"))) == 4
        for task in ("binary", "parts", "type"):
            assert len(list((data / "labels" / task).glob("*.png"))) == 4
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["n"] == 4 and manifest["height"] == 64

    def test_empty(self, tmp_path):
        assert run("synth", "--n", 0, "--out", tmp_path / "d") == 0
        assert list((tmp_path / "d" / "left").iterdir()) == []

    def test_byte_identical_reruns(self, tmp_path):
        for name in ("a", "b"):
            assert run("synth", "--n", 2, "--size", "16x24", "--out", tmp_path / name, "--seed", 5) == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


class TestTrain:
    def test_artifacts(self, trained):
        for run_dir in ("sr", "seg"):
            d = trained / run_dir
            for name in ("config.json", "checkpoint.zip", "loss.csv", "timing.csv"):
                assert (d / name).is_file()
            assert header(d / "loss.csv") == ["step", "epoch", "loss"]

    def test_same_seed_identical_loss_csv(self, trained):
        w = trained
        assert run("train-sr", "--config", w / "cfg.json", "--dataset", w / "data", "--out", w / "sr2",
                   "--steps", 3, "--seed", 0) == 0
        assert (w / "sr" / "loss.csv").read_bytes() == (w / "sr2" / "loss.csv").read_bytes()

    def test_missing_dataset(self, tmp_path, capsys):
        missing = tmp_path / "no_such_data"
        assert run("train-sr", "--dataset", missing, "--out", tmp_path / "o", "--steps", 1) != 0
        err = capsys.readouterr().err
        assert str(missing) in err and err.count("\n") == 1

    def test_seg_from_sr_without_checkpoint(self, workspace, tmp_path, capsys):
        assert run("train-seg", "--dataset", workspace / "data", "--out", tmp_path / "o", "--steps", 1) == 1
        assert "sr_checkpoint" in capsys.readouterr().err

    def test_unknown_config_key(self, workspace, tmp_path, capsys):
        (tmp_path / "bad.json").write_text(json.dumps({"extractr": {}}))
        assert run("train-sr", "--config", tmp_path / "bad.json", "--dataset", workspace / "data") == 1
        assert "extractr" in capsys.readouterr().err


class TestEval:
    def test_seg_report(self, trained):
        w = trained
        assert run("eval", "--checkpoint", w / "seg" / "checkpoint.zip", "--dataset", w / "data",
                   "--folds", 2, "--sr-checkpoint", w / "sr" / "checkpoint.zip", "--out", w / "ev_seg",
                   "--plot") == 0
        assert header(w / "ev_seg" / "report.csv") == ["method", "task", "iou_mean", "iou_std", "dice_mean", "dice_std"]
        report = json.loads((w / "ev_seg" / "report.json").read_text())
        assert report["meta"]["input"] == "sr"
        assert (w / "ev_seg" / "folds.png").is_file()
        assert json.loads((w / "ev_seg" / "folds.json").read_text())["k"] == 2

    def test_sr_and_baseline_reports(self, trained):
        w = trained
        assert run("eval", "--checkpoint", w / "sr" / "checkpoint.zip", "--dataset", w / "data",
                   "--folds", 2, "--out", w / "ev_sr") == 0
        assert run("eval", "--baseline", "bicubic", "--scale", 2, "--dataset", w / "data",
                   "--folds", 2, "--out", w / "ev_bic") == 0
        for d in ("ev_sr", "ev_bic"):
            assert header(w / d / "report.csv") == ["method", "scale", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"]

    def test_bicubic_matches_direct_metrics(self, workspace, tmp_path):
        assert run("eval", "--baseline", "bicubic", "--scale", 2, "--dataset", workspace / "data",
                   "--folds", 2, "--out", tmp_path) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        got = {(r["sample_id"], r["metric"]): r["value"] for r in report["per_sample"]}
        for s in load_stereo_dataset(workspace / "data", 2):
            up_l = np.clip(upscale(s.left_lr.astype(np.float64), 2), 0, 1)
            up_r = np.clip(upscale(s.right_lr.astype(np.float64), 2), 0, 1)
            exp_p = 0.5 * (psnr(up_l, s.left_hr) + psnr(up_r, s.right_hr))
            exp_s = 0.5 * (ssim(up_l, s.left_hr) + ssim(up_r, s.right_hr))
            assert got[(s.sample_id, "psnr")] == pytest.approx(exp_p, abs=1e-9)
            assert got[(s.sample_id, "ssim")] == pytest.approx(exp_s, abs=1e-9)

    def test_needs_model(self, workspace, tmp_path):
        assert run("eval", "--dataset", workspace / "data", "--out", tmp_path) == 1


class TestInfer:
    def test_sr_stage(self, trained, tmp_path):
        w = trained
        lr_dir = tmp_path / "lr"
        for view in ("left", "right"):
            (lr_dir / view).mkdir(parents=True)
            Image.fromarray(np.full((16, 24, 3), 120, np.uint8)).save(lr_dir / view / "p.png")
        assert run("infer", "--checkpoint", w / "sr" / "checkpoint.zip", "--input", lr_dir,
                   "--out", tmp_path / "o") == 0
        assert Image.open(tmp_path / "o" / "sr" / "left" / "p.png").size == (48, 32)
        assert (tmp_path / "o" / "strips" / "p_left.png").is_file()

    def test_both_stages_from_hr(self, trained, tmp_path):
        w = trained
        assert run("infer", "--checkpoint", w / "sr" / "checkpoint.zip", "--seg-checkpoint",
                   w / "seg" / "checkpoint.zip", "--input", w / "data", "--out", tmp_path / "o",
                   "--stage", "both", "--from-hr") == 0
        masks = sorted((tmp_path / "o" / "masks").glob("*.png"))
        assert len(masks) == 4
        assert np.asarray(Image.open(masks[0])).shape == (64, 96)
        assert len(list((tmp_path / "o" / "masks_color").glob("*.png"))) == 4
        legend = json.loads((tmp_path / "o" / "legend.json").read_text())
        assert [c["name"] for c in legend["classes"]] == ["background", "instrument"]
        assert Image.open(tmp_path / "o" / "sr" / "right" / masks[0].name).size == (96, 64)

    def test_deterministic_outputs(self, trained, tmp_path):
        w = trained
        for name in ("a", "b"):
            assert run("infer", "--checkpoint", w / "sr" / "checkpoint.zip", "--input", w / "data",
                       "--out", tmp_path / name, "--from-hr") == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.png"))
        assert files
        assert all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
