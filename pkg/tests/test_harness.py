import json

import numpy as np
import pytest

from mvskel.cli import main
from mvskel.features import LabeledEmbedding, save_gallery, save_predictions
from mvskel.geometry import load_calibration
from mvskel.harness.pipeline import PipelineError, run_pipeline
from mvskel.harness.synth import SceneConfig, generate_scene
from mvskel.skeldata import load_sequence
from mvskel.triangulation import reprojection_rmse

SMALL = {"synth": {"seed": 3, "calibration": [{"n_frames": 80}],
                   "target": {"n_frames": 40, "motion_model": "linear-walk"}}}


def test_scene_deterministic():
    cfg = SceneConfig(n_frames=30, n_persons=2, joint_noise_2d=1.0, confidence_dropout=0.1, seed=4)
    a, b = generate_scene(cfg), generate_scene(cfg)
    np.testing.assert_array_equal(a.true_world, b.true_world)
    for va, vb in zip(a.views, b.views):
        for fa, fb in zip(va, vb):
            for sa, sb in zip(fa.skeletons, fb.skeletons):
                assert np.array_equal(sa.coords, sb.coords, equal_nan=True)
                np.testing.assert_array_equal(sa.confidence, sb.confidence)
    assert [c.extrinsics for c in a.true_cameras] == [c.extrinsics for c in b.true_cameras]


def test_scene_full_dropout():
    s = generate_scene(SceneConfig(n_frames=5, confidence_dropout=1.0))
    assert all(not sk.confidence.any() for v in s.views for f in v for sk in f.skeletons)


def test_scene_noiseless_projection(scene):
    for t in (0, 50, 199):
        sk3 = scene.true_tracks[0].entries[t][1]
        views = [scene.views[c][t].skeletons[0] for c in range(3)]
        assert reprojection_rmse(sk3, views, scene.true_cameras) < 1e-9


@pytest.mark.parametrize("model", ["static", "linear-walk", "circular-walk"])
def test_scene_motion_models_stay_visible(model):
    s = generate_scene(SceneConfig(n_frames=60, motion_model=model, layout="body"))
    conf = np.stack([sk.confidence for v in s.views for f in v for sk in f.skeletons])
    assert conf.mean() > 0.95


def test_scene_config_validation():
    with pytest.raises(ValueError):
        SceneConfig(confidence_dropout=1.5)
    with pytest.raises(ValueError):
        SceneConfig(n_persons=3)


def _true_tracks(out):
    return load_sequence(out / "synth" / "target" / "tracks_true.jsonl")


def test_pipeline_noiseless_end_to_end(tmp_path):
    out = tmp_path / "run"
    metrics = run_pipeline(SMALL, out)
    assert metrics["n_tracks"] == 1
    truth = _true_tracks(out)
    got = load_sequence(out / "tracks.jsonl")
    assert got.time_indices == truth.time_indices
    errs = []
    for fa, fb in zip(got, truth):
        a, b = fa.skeletons[0], fb.skeletons[0]
        errs.append(np.linalg.norm(a.coords[a.valid] - b.coords[a.valid], axis=1))
    assert np.mean(np.concatenate(errs)) < 1e-6
    true_cams = load_calibration(out / "synth" / "target" / "calibration_true.json")
    for c, tc in zip(load_calibration(out / "calibration.json"), true_cams):
        assert np.linalg.norm(c.extrinsics.center - tc.extrinsics.center) < 1e-6


def test_pipeline_two_persons(tmp_path):
    cfg = {"synth": {"seed": 8, "calibration": [{"n_frames": 60}],
                     "target": {"n_frames": 40, "n_persons": 2}}}
    metrics = run_pipeline(cfg, tmp_path / "run")
    assert metrics["n_tracks"] == 2
    assert metrics["track_lengths"] == [40, 40]


def test_pipeline_missing_file(tmp_path):
    cfg = {"calibration_groups": [{"cameras": [
        {"name": "cam0", "skeleton2d": str(tmp_path / "nope_2d.jsonl"),
         "skeleton3d": str(tmp_path / "nope_3d.jsonl")}]}],
        "target": {"cameras": []}}
    with pytest.raises(PipelineError) as err:
        run_pipeline(cfg, tmp_path / "run")
    assert err.value.stage == "load"
    assert "nope_2d.jsonl" in str(err.value)


def test_cli_pipeline_and_missing_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "tracks.jsonl").exists()
    assert main(["pipeline", "--config", str(tmp_path / "missing.json")]) != 0
    assert "missing.json" in capsys.readouterr().err


def test_cli_stage_by_stage(tmp_path):
    scene_dir = tmp_path / "scene"
    assert main(["synth", "--seed", "2", "--out", str(scene_dir)]) == 0
    files = [{"name": f"cam{i}", "skeleton2d": str(scene_dir / f"cam{i}_2d.jsonl"),
              "skeleton3d": str(scene_dir / f"cam{i}_3d.jsonl")} for i in range(3)]

    def run(cmd, cfg, out):
        path = tmp_path / f"{cmd}.json"
        path.write_text(json.dumps(cfg))
        return main([cmd, "--config", str(path), "--out", str(tmp_path / out)])

    assert run("calibrate-intrinsics", {"cameras": files}, "intr") == 0
    assert run("calibrate-extrinsics", {"cameras": files,
                                        "calibration": str(tmp_path / "intr" / "calibration.json")},
               "ext") == 0
    calib = str(tmp_path / "ext" / "calibration.json")
    assert run("sync", {"streams": [f["skeleton3d"] for f in files]}, "sync") == 0
    assert run("triangulate", {"calibration": calib,
                               "views": [f["skeleton2d"] for f in files]}, "tri") == 0
    assert run("track", {"detections": str(tmp_path / "tri" / "detections.jsonl")}, "trk") == 0
    tracks = str(tmp_path / "trk" / "tracks.jsonl")
    assert run("features", {"tracks": tracks, "sample_count": 50}, "feat") == 0
    tensors = list((tmp_path / "feat").glob("*.npy"))
    assert len(tensors) == 1 and np.load(tensors[0]).shape == (50, 25, 12)

    g = [LabeledEmbedding([float(c), 0.0], c) for c in range(3)]
    save_gallery(g, tmp_path / "g.json")
    save_gallery([LabeledEmbedding([c + 0.1, 0.0], c) for c in range(3)], tmp_path / "q.json")
    assert run("fewshot", {"gallery": str(tmp_path / "g.json"), "queries": str(tmp_path / "q.json"),
                           "method": "prototype"}, "fs") == 0
    assert json.loads((tmp_path / "fs" / "fewshot.json").read_text())["accuracy"] == 1.0
    save_predictions([[0.9, 0.1], [0.2, 0.8]], tmp_path / "p.jsonl")
    assert run("evaluate", {"predictions": str(tmp_path / "p.jsonl"), "truth": [0, 0]}, "ev") == 0
    assert json.loads((tmp_path / "ev" / "evaluation.json").read_text())["accuracy"] == 0.5
    assert (tmp_path / "ev" / "confusion.csv").exists()


def test_cli_error_is_stage_tagged(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"detections": str(tmp_path / "absent.jsonl")}))
    assert main(["track", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "stage 'track'" in err and "absent.jsonl" in err
