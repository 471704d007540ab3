import logging

import numpy as np
import pandas as pd
import pytest

from morphrefine.cli import EXIT_IO, EXIT_OK, EXIT_PIPELINE, EXIT_USAGE, main
from morphrefine.core import LabelMap, ProbMap
from morphrefine.metrics import confusion, overall_iou
from morphrefine.raster_io import PRB_HEADER, load_labels, load_prb, save_labels, save_prb


@pytest.fixture(autouse=True)
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def scene_paths(dataset_dir):
    return {
        "image": str(dataset_dir / "images" / "disk.png"),
        "gt": str(dataset_dir / "gt" / "disk.png"),
        "boundary": str(dataset_dir / "boundary" / "disk.prb"),
        "lowres": str(dataset_dir / "lowres" / "disk.prb"),
    }


def _refine_args(paths, out, *extra):
    return ["refine", "--image", paths["image"], "--lowres-prob", paths["lowres"],
            "--boundary-prob", paths["boundary"], "--out-labels", str(out), *extra]


class TestRefine:
    def test_writes_every_output(self, scene_paths, tmp_path, small_disk):
        out = tmp_path / "labels.png"
        code = main(_refine_args(scene_paths, out, "--out-probs", str(tmp_path / "p.prb"),
                                 "--out-seeds", str(tmp_path / "s.png"), "--out-weights", str(tmp_path / "w")))
        assert code == EXIT_OK
        labels = load_labels(out, 2)
        assert overall_iou(confusion(labels, small_disk.gt)) > 0.95
        assert load_prb(tmp_path / "p.prb").channels == 2
        assert load_labels(tmp_path / "s.png", 2).labeled.any()
        assert (tmp_path / "w_h.prb").is_file() and (tmp_path / "w_v.prb").is_file()

    def test_fallback_gradient(self, scene_paths, tmp_path):
        code = main(["refine", "--image", scene_paths["image"], "--lowres-prob", scene_paths["lowres"],
                     "--fallback-gradient", "--out-labels", str(tmp_path / "l.png")])
        assert code == EXIT_OK

    def test_missing_required_option(self, scene_paths, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["refine", "--image", scene_paths["image"], "--boundary-prob", scene_paths["boundary"],
                  "--out-labels", str(tmp_path / "l.png")])
        assert exc.value.code == EXIT_USAGE

    def test_boundary_sources_are_exclusive(self, scene_paths, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(_refine_args(scene_paths, tmp_path / "l.png", "--fallback-gradient"))
        assert exc.value.code == EXIT_USAGE

    def test_threshold_out_of_range(self, scene_paths, tmp_path, capsys):
        assert main(_refine_args(scene_paths, tmp_path / "l.png", "--t", "1.5")) == EXIT_USAGE
        assert "invalid t" in capsys.readouterr().err

    def test_corrupt_probability_file(self, scene_paths, tmp_path):
        bad = tmp_path / "bad.prb"
        bad.write_bytes(PRB_HEADER.pack(b"PRB1", 16, 16, 2) + b"\0" * 10)
        paths = dict(scene_paths, lowres=str(bad))
        assert main(_refine_args(paths, tmp_path / "l.png")) == EXIT_IO

    def test_no_seeds(self, scene_paths, tmp_path):
        tied = tmp_path / "tied.prb"
        save_prb(ProbMap.from_array(np.full((2, 16, 16), 0.5)), tied)
        paths = dict(scene_paths, lowres=str(tied))
        assert main(_refine_args(paths, tmp_path / "l.png", "--t", "0.5")) == EXIT_PIPELINE

    def test_boundary_size_mismatch(self, scene_paths, tmp_path):
        small = tmp_path / "small.prb"
        save_prb(ProbMap.from_array(np.zeros((1, 32, 32))), small)
        paths = dict(scene_paths, boundary=str(small))
        assert main(_refine_args(paths, tmp_path / "l.png")) == EXIT_PIPELINE


class TestEval:
    def test_identical_maps(self, scene_paths, capsys):
        assert main(["eval", "--pred", scene_paths["gt"], "--gt", scene_paths["gt"], "--num-labels", "2"]) == EXIT_OK
        assert "overall IoU: 100.00" in capsys.readouterr().out

    def test_hand_computed_case(self, tmp_path, capsys):
        gt = np.zeros((4, 4), dtype=np.uint8)
        gt.flat[:6] = 1
        save_labels(LabelMap.from_array(gt, 2), tmp_path / "gt.png")
        save_labels(LabelMap.from_array(np.zeros((4, 4), dtype=np.uint8), 2), tmp_path / "pred.png")
        code = main(["eval", "--pred", str(tmp_path / "pred.png"), "--gt", str(tmp_path / "gt.png"),
                     "--num-labels", "2", "--per-class"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "overall IoU: 45.45" in out
        assert "label,tp,fp,fn,iou" in out

    def test_directories_and_histogram(self, tmp_path, small_disk):
        for sub in ("pred", "gt"):
            (tmp_path / sub).mkdir()
        pred = small_disk.gt.data.copy()
        pred[64, :] = 1 - pred[64, :]
        save_labels(LabelMap.from_array(pred, 2), tmp_path / "pred" / "a.png")
        save_labels(small_disk.gt, tmp_path / "gt" / "a.png")
        hist = tmp_path / "hist.csv"
        code = main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"),
                     "--num-labels", "2", "--boundary-hist", str(hist), "--jobs", "2"])
        assert code == EXIT_OK
        frame = pd.read_csv(hist)
        assert frame.columns.tolist() == ["distance", "count", "frequency"]
        assert frame["count"].sum() == 128
        assert frame["frequency"].sum() == pytest.approx(1.0)

    def test_missing_input(self, tmp_path, scene_paths):
        assert main(["eval", "--pred", str(tmp_path / "nope.png"), "--gt", scene_paths["gt"]]) == EXIT_IO

    def test_no_matching_names(self, tmp_path, small_disk):
        for sub, name in (("pred", "a"), ("gt", "b")):
            (tmp_path / sub).mkdir()
            save_labels(small_disk.gt, tmp_path / sub / f"{name}.png")
        assert main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt")]) == EXIT_USAGE

    def test_label_count_range(self, scene_paths):
        assert main(["eval", "--pred", scene_paths["gt"], "--gt", scene_paths["gt"], "--num-labels", "0"]) == EXIT_USAGE


class TestExperiments:
    def test_seed_quality(self, dataset_dir, tmp_path):
        out = tmp_path / "sq.csv"
        code = main(["experiment", "seed-quality", "--data", str(dataset_dir), "--out", str(out),
                     "--n-thin-values", "0", "10", "--n-prun-values", "0", "--jobs", "2"])
        assert code == EXIT_OK
        frame = pd.read_csv(out)
        assert frame.columns.tolist() == ["n_thin", "n_prun", "coverage", "fp"]
        assert frame["coverage"].tolist()[0] == 100.0
        assert (frame["fp"] == 0.0).all()

    def test_noise_sweep(self, dataset_dir, capsys):
        code = main(["experiment", "noise-sweep", "--data", str(dataset_dir), "--sigma2", "0",
                     "--trials", "1", "--seed-mode", "ground-truth"])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "sigma2,iou_all,iou_nonseed,rel_shift,trials"
        assert lines[1].split(",")[3] == "0.0"

    def test_scale_sweep(self, dataset_dir, tmp_path):
        out = tmp_path / "scale.csv"
        code = main(["experiment", "scale-sweep", "--data", str(dataset_dir), "--out", str(out),
                     "--scales", "16", "32", "--t-grid", "0.03", "0.4", "--jobs", "2"])
        assert code == EXIT_OK
        frame = pd.read_csv(out)
        assert frame["scale"].tolist() == [16, 32]
        assert set(frame["t"]) <= {0.03, 0.4}

    def test_scale_sweep_missing_estimate(self, dataset_dir):
        code = main(["experiment", "scale-sweep", "--data", str(dataset_dir), "--scales", "48"])
        assert code == EXIT_PIPELINE

    def test_boundary_hist(self, dataset_dir, tmp_path):
        out = tmp_path / "hist.csv"
        assert main(["experiment", "boundary-hist", "--data", str(dataset_dir), "--out", str(out)]) == EXIT_OK
        frame = pd.read_csv(out)
        assert frame["frequency"].sum() == pytest.approx(1.0)

    def test_missing_dataset(self, tmp_path):
        assert main(["experiment", "boundary-hist", "--data", str(tmp_path / "none")]) == EXIT_IO

    def test_bad_override(self, dataset_dir):
        code = main(["experiment", "seed-quality", "--data", str(dataset_dir), "--n-thin", "-3"])
        assert code == EXIT_USAGE

    def test_parallel_noise_sweep_matches_serial(self, dataset_dir, tmp_path):
        outs = []
        for jobs in ("1", "2"):
            out = tmp_path / f"noise_{jobs}.csv"
            code = main(["experiment", "noise-sweep", "--data", str(dataset_dir), "--out", str(out),
                         "--sigma2", "0.1", "--trials", "2", "--seed-mode", "ground-truth", "--jobs", jobs])
            assert code == EXIT_OK
            outs.append(pd.read_csv(out))
        pd.testing.assert_frame_equal(outs[0], outs[1])

    def test_bad_job_count(self, dataset_dir):
        assert main(["experiment", "boundary-hist", "--data", str(dataset_dir), "--jobs", "0"]) == EXIT_USAGE


def test_fixture_command(tmp_path):
    code = main(["fixture", "--out", str(tmp_path), "--shape", "disk", "--size", "64",
                 "--lowres-size", "16", "--scales", "16", "32", "128"])
    assert code == EXIT_OK
    for part in ("images/disk.png", "gt/disk.png", "boundary/disk.prb", "lowres/disk.prb",
                 "estimates/disk/16.prb", "estimates/disk/32.prb"):
        assert (tmp_path / part).is_file()
    assert not (tmp_path / "estimates" / "disk" / "128.prb").exists()


def test_fixture_bad_sizes(tmp_path):
    assert main(["fixture", "--out", str(tmp_path), "--size", "32", "--lowres-size", "64"]) == EXIT_USAGE
