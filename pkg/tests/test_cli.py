import json
from pathlib import Path

import pytest

from voxcond.cli import main
from voxcond.manifest import MANIFEST, RunManifest, sha256_file, verify

SCENE = {"seed": 3, "frames": 2, "n_vehicles": 2, "n_pedestrians": 3}


def write_config(tmp_path, cfg=SCENE, name="scene.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


@pytest.fixture(scope="module")
def projected(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "scene.json"
    cfg.write_text(json.dumps({"seed": 3, "frames": 4, "n_vehicles": 3, "n_pedestrians": 4}))
    assert main(["scene", "gen", "--config", str(cfg), "--out", str(root / "s")]) == 0
    argv = ["project", "--scene", str(root / "s"), "--views", "front,front_left", "--out"]
    assert main(argv + [str(root / "c")]) == 0
    return root


def files_under(d):
    return sorted(p.relative_to(d).as_posix() for p in Path(d).rglob("*") if p.is_file())


def test_scene_gen_writes_frames(tmp_path, capsys):
    assert main(["scene", "gen", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "s")]) == 0
    assert sorted(p.name for p in (tmp_path / "s" / "frames").iterdir()) == ["0000.vxsg", "0001.vxsg"]
    m = RunManifest.read(tmp_path / "s")
    assert m.stage == "scene" and m.seeds == {"scene": 3} and m.extra["name"] == "s"
    assert verify(tmp_path / "s") == []
    assert len(list((tmp_path / "s").rglob(MANIFEST))) == 1


def test_scene_gen_rerun_gives_identical_manifest(tmp_path):
    cfg = str(write_config(tmp_path))
    for d in ("a", "b"):
        assert main(["scene", "gen", "--config", cfg, "--out", str(tmp_path / d), "--name", "x"]) == 0
    a, b = RunManifest.read(tmp_path / "a"), RunManifest.read(tmp_path / "b")
    assert a.artifacts == b.artifacts and a.content_hash() == b.content_hash()


def test_invalid_json_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{seed: ")
    assert main(["scene", "gen", "--config", str(bad), "--out", str(tmp_path / "s")]) == 2
    assert "config parse error" in capsys.readouterr().err


def test_infeasible_config_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"dims": [6, 6, 4], "n_vehicles": 1})
    assert main(["scene", "gen", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 2
    assert "infeasible" in capsys.readouterr().err
    cfg = write_config(tmp_path, {"seeed": 1})
    assert main(["scene", "gen", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 2


def test_missing_config_exits_2(tmp_path):
    assert main(["scene", "gen", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_project_file_contract(projected, capsys):
    c = projected / "c"
    scene_dir = c / "s"
    frames = sorted(d.name for d in scene_dir.iterdir())
    assert frames == ["0000", "0001", "0002", "0003"]
    for f in frames:
        names = sorted(p.name for p in (scene_dir / f).iterdir())
        assert len(names) == 2 * (4 + 8) + 1
        for view in ("front", "front_left"):
            assert f"{view}_semantic.ppm" in names and f"{view}_depth.pgm" in names
            assert f"{view}_mask.pgm" in names and f"{view}_coordinate.ppm" in names
            assert all(f"{view}_mpi_{p}.ppm" in names for p in range(8))
        assert "sidecar.json" in names
    m = RunManifest.read(c)
    assert m.stage == "project" and verify(c) == []
    assert all(v > 0 for v in m.wall_seconds["rays_per_second"].values())
    assert m.extra["views"] == ["front", "front_left"]


def test_project_prints_throughput(tmp_path, capsys):
    cfg = str(write_config(tmp_path))
    main(["scene", "gen", "--config", cfg, "--out", str(tmp_path / "s")])
    capsys.readouterr()
    assert main(["project", "--scene", str(tmp_path / "s"), "--views", "front", "--out", str(tmp_path / "c")]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1 and out[0].startswith("front: 30720 rays")
    assert float(out[0].split("->")[1].split()[0]) > 0
    names = {p.name.split("_")[0] for p in (tmp_path / "c" / "s" / "0000").glob("*_*")}
    assert names == {"front"}


def test_project_jobs_do_not_change_outputs(projected):
    argv = ["project", "--scene", str(projected / "s"), "--views", "front,front_left", "--jobs", "3"]
    assert main(argv + ["--out", str(projected / "c_jobs")]) == 0
    a, b = RunManifest.read(projected / "c"), RunManifest.read(projected / "c_jobs")
    assert a.artifacts == b.artifacts and a.content_hash() == b.content_hash()


def test_project_detects_grid_hash_mismatch(tmp_path, capsys):
    main(["scene", "gen", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "s")])
    frame = tmp_path / "s" / "frames" / "0001.vxsg"
    data = bytearray(frame.read_bytes())
    data[-1] ^= 1
    frame.write_bytes(bytes(data))
    assert main(["project", "--scene", str(tmp_path / "s"), "--out", str(tmp_path / "c")]) == 1
    assert "grid hash mismatch" in capsys.readouterr().err


def test_project_detects_missing_frame(tmp_path, capsys):
    main(["scene", "gen", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "s")])
    (tmp_path / "s" / "frames" / "0000.vxsg").unlink()
    assert main(["project", "--scene", str(tmp_path / "s"), "--out", str(tmp_path / "c")]) == 1
    assert "missing frame" in capsys.readouterr().err


def test_project_detects_rig_hash_mismatch(tmp_path, capsys):
    main(["scene", "gen", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "s")])
    base = ["project", "--scene", str(tmp_path / "s"), "--out", str(tmp_path / "c")]
    assert main(base + ["--views", "front"]) == 0
    assert main(base + ["--views", "back"]) == 1
    assert "rig hash mismatch" in capsys.readouterr().err


def test_project_rig_file_and_bad_view(tmp_path, capsys):
    main(["scene", "gen", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "s")])
    assert main(["rig", "default", "--out", str(tmp_path / "rig.json")]) == 0
    base = ["project", "--scene", str(tmp_path / "s"), "--rig", str(tmp_path / "rig.json")]
    assert main(base + ["--views", "nowhere", "--out", str(tmp_path / "c")]) == 2
    assert main(base + ["--views", "back", "--out", str(tmp_path / "c")]) == 0
    assert RunManifest.read(tmp_path / "c").extra["views"] == ["back"]


def test_train_and_sample(projected, capsys):
    c, t, s = projected / "c", projected / "t", projected / "smp"
    assert main(["train", "--conditions", str(c), "--steps", "6", "--out", str(t)]) == 0
    log = (t / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 6 and json.loads(log[0])["step"] == 0
    m = RunManifest.read(t)
    assert m.artifacts["model.tdck"] == sha256_file(t / "model.tdck")
    argv = ["sample", "--conditions", str(c), "--checkpoint", str(t / "model.tdck"), "--steps", "2"]
    assert main(argv + ["--out", str(s)]) == 0
    err = json.loads((s / "errors.json").read_text())
    assert set(err) == {"fg_mse", "bg_mse", "all_mse"}
    assert (s / "clip_000.npy").exists()
    assert verify(s) == []


def test_train_is_reproducible(projected):
    c = str(projected / "c")
    for d in ("r1", "r2"):
        assert main(["train", "--conditions", c, "--steps", "4", "--seed", "2", "--out", str(projected / d)]) == 0
    a, b = RunManifest.read(projected / "r1"), RunManifest.read(projected / "r2")
    assert a.content_hash() == b.content_hash()


def test_sample_missing_checkpoint_exits_1(projected, capsys):
    argv = ["sample", "--conditions", str(projected / "c"), "--checkpoint", str(projected / "none")]
    assert main(argv + ["--out", str(projected / "x")]) == 1
    assert "missing checkpoint" in capsys.readouterr().err


def test_train_missing_conditions_fails(tmp_path):
    assert main(["train", "--conditions", str(tmp_path / "none"), "--out", str(tmp_path / "t")]) != 0


def test_ablate_report_structure(projected):
    c = str(projected / "c")
    argv = ["ablate", "--conditions", c, "--heldout", c, "--seeds", "0,1", "--steps", "4"]
    argv += ["--adapter-steps", "2"]
    assert main(argv + ["--out", str(projected / "ab")]) == 0
    report = json.loads((projected / "ab" / "report.json").read_text())
    cells = report["cells"]
    assert len(cells) == 8 and len(report["baselines"]) == 2
    keys = {(c["gamma"], c["adapter"], c["groups"]) for c in cells}
    assert keys == {(g, a, n) for g in (0.0, 2.0) for a in (False, True) for n in ("sem+dep", "mpi+coor")}
    assert all(c["seeds"] == [0, 1] for c in cells)
    md = (projected / "ab" / "report.md").read_text().splitlines()
    assert len(md) == 2 + 8 + 2
    m = RunManifest.read(projected / "ab")
    assert m.seeds["ablation"] == [0, 1]
    # the report is reproducible from the recorded seeds
    assert main(argv + ["--out", str(projected / "ab2")]) == 0
    assert (projected / "ab2" / "report.json").read_text() == (projected / "ab" / "report.json").read_text()


def test_bad_seeds_exit_2(projected):
    argv = ["ablate", "--conditions", str(projected / "c"), "--seeds", "a,b"]
    assert main(argv + ["--out", str(projected / "bad")]) == 2


def test_ablate_needs_heldout_clip(projected, capsys):
    argv = ["ablate", "--conditions", str(projected / "c"), "--out", str(projected / "one")]
    assert main(argv) == 1
    assert "--heldout" in capsys.readouterr().err
