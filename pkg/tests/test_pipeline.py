import json
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

import reefmesh.baker
from reefmesh import PipelineError
from reefmesh.io import load_obj, read_glb
from reefmesh.pipeline import PipelineConfig, run_pipeline, sha256_file, stage_seed, strip_timings
from reefmesh.primitives import icosphere


def _cfg(stages, tmp, **kw):
    d = {"input": {"generator": "icosphere", "subdivisions": 2}, "stages": stages, "output_dir": str(tmp)}
    d.update(kw)
    return PipelineConfig.from_dict(d)


SMALL = [
    {"stage": "noise", "amplitude": 0.02, "frequency": 2.0},
    {"stage": "subdivide", "id": "detail"},
    {"stage": "decimate", "target_faces": 400},
    {"stage": "unwrap", "resolution": 128, "gutter": 2},
    {"stage": "bake", "high": "detail", "resolution": 128, "gutter": 2},
    {"stage": "compress"},
    {"stage": "export_glb"},
    {"stage": "metrics", "against": "detail"},
]


def test_empty_stage_list(tmp_path):
    man = run_pipeline(_cfg([], tmp_path))
    assert man["stages"] == [] and man["status"] == "ok"
    assert man["output"]["content_hash"] == man["input"]["content_hash"] == icosphere(2).content_hash()
    final = load_obj((tmp_path / "final.obj").read_bytes())
    assert final.content_hash() == icosphere(2).content_hash()


def test_unknown_stage_fails_before_running(tmp_path):
    out = tmp_path / "never"
    with pytest.raises(PipelineError) as info:
        run_pipeline(_cfg([{"stage": "compress"}, {"stage": "sculpt"}], out))
    assert info.value.stage_index == 1 and info.value.stage_name == "sculpt"
    assert not out.exists()


@pytest.mark.parametrize("stages, index", [
    ([{"stage": "bake"}], 0),
    ([{"stage": "unwrap"}, {"stage": "decimate", "target_faces": 100}, {"stage": "bake"}], 2),
    ([{"stage": "unwrap"}, {"stage": "bake", "high": "later"}, {"stage": "smooth", "id": "later"}], 1),
    ([{"stage": "metrics", "against": "nope"}], 0),
    ([{"stage": "decimate"}], 0),
    ([{"stage": "decimate", "target_faces": "10"}], 0),
    ([{"stage": "subdivide", "levels": True}], 0),
    ([{"stage": "smooth", "lambda": 1.5}], 0),
    ([{"stage": "compress", "position_bits": 30}], 0),
    ([{"stage": "unwrap", "resolution": 32}], 0),
    ([{"stage": "export_glb", "colour": 1}], 0),
    ([{"stage": "smooth", "id": "a"}, {"stage": "smooth", "id": "a"}], 1),
    ([{"stage": "noise", "amplitude": 0.1, "frequency": 1.0, "octaves": 0}], 0),
    (["decimate"], 0),
])
def test_validation_names_stage(tmp_path, stages, index):
    out = tmp_path / "x"
    with pytest.raises(PipelineError) as info:
        run_pipeline(_cfg(stages, out))
    assert info.value.stage_index == index
    assert f"stage {index}" in str(info.value)
    assert not out.exists()


def test_config_level_errors(tmp_path):
    with pytest.raises(PipelineError, match="unknown config keys"):
        PipelineConfig.from_dict({"input": {"path": "a.obj"}, "stages": [], "extra": 1})
    with pytest.raises(PipelineError):
        run_pipeline(_cfg([], tmp_path, schema_version=2))
    with pytest.raises(PipelineError):
        run_pipeline(PipelineConfig.from_dict({"input": {"generator": "coral", "target_faces": 50}, "stages": []}))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(PipelineError, match="JSON"):
        PipelineConfig.load(bad)


def test_small_run_records_and_artifacts(tmp_path):
    man = run_pipeline(_cfg(SMALL, tmp_path, seed=3))
    assert man["status"] == "ok" and len(man["stages"]) == len(SMALL)
    dec = man["stages"][2]
    assert dec["output_faces"] <= 400
    names = set(man["artifacts"])
    assert {"03_unwrap_atlas.json", "04_bake_normal.png", "04_bake_correspondence.cmap",
            "04_bake_correspondence.png", "05_compress.clm", "06_export_glb.glb", "07_metrics.json",
            "final.obj"} <= names
    for name, digest in man["artifacts"].items():
        assert sha256_file(tmp_path / name) == digest
    doc, _ = read_glb((tmp_path / "06_export_glb.glb").read_bytes())
    assert "normalTexture" in doc["materials"][0]
    q = json.loads((tmp_path / "07_metrics.json").read_text())
    assert q["faces_a"] == man["stages"][1]["output_faces"]
    assert man["stages"][0]["seed"] == stage_seed(3, 0)
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk["artifacts"] == man["artifacts"]


def test_snapshots_saved_when_requested(tmp_path):
    man = run_pipeline(_cfg(SMALL[:3], tmp_path, save_snapshots=True))
    for i, s in enumerate(SMALL[:3]):
        name = f"{i:02d}_{s['stage']}.obj"
        assert name in man["artifacts"]
        assert load_obj((tmp_path / name).read_bytes()).n_faces == man["stages"][i]["output_faces"]


def test_failed_stage_cleans_its_files(tmp_path, monkeypatch):
    def broken(_):
        raise OSError("disk full")

    monkeypatch.setattr(reefmesh.baker, "write_cmap", broken)
    with pytest.raises(PipelineError) as info:
        run_pipeline(_cfg(SMALL, tmp_path))
    assert info.value.stage_index == 4 and info.value.stage_name == "bake"
    assert not (tmp_path / "04_bake_normal.png").exists()
    assert (tmp_path / "03_unwrap_atlas.json").exists()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "failed"
    assert man["error"]["stage_index"] == 4 and "disk full" in man["error"]["message"]
    assert len(man["stages"]) == 4
    assert set(man["artifacts"]) == {"03_unwrap_atlas.json"}


def test_runtime_domain_failure(tmp_path):
    stages = [{"stage": "subdivide", "levels": 2}, {"stage": "unwrap", "resolution": 64, "gutter": 8}]
    with pytest.raises(PipelineError) as info:
        run_pipeline(_cfg(stages, tmp_path))
    assert info.value.stage_index == 1
    assert not any(tmp_path.glob("01_*"))


def test_stage_seed_stream():
    mask = (1 << 64) - 1
    state = (77 ^ 0x9E3779B97F4A7C15) & mask
    expect = []
    for _ in range(4):
        state ^= state >> 12
        state = (state ^ (state << 25)) & mask
        state ^= state >> 27
        expect.append((state * 0x2545F4914F6CDD1D) & mask)
    assert [stage_seed(77, i) for i in range(4)] == expect


def test_seed_override_changes_noise(tmp_path):
    stages = [SMALL[0]]
    a = run_pipeline(_cfg(stages, tmp_path / "a"), seed=1)
    b = run_pipeline(_cfg(stages, tmp_path / "b"), seed=2)
    assert a["seed"] == 1 and b["seed"] == 2
    assert a["output"]["content_hash"] != b["output"]["content_hash"]


def test_run_is_deterministic(tmp_path):
    a = run_pipeline(_cfg(SMALL, tmp_path / "a", seed=9))
    b = run_pipeline(_cfg(SMALL, tmp_path / "b", seed=9))
    assert a["artifacts"] == b["artifacts"]
    sa, sb = strip_timings(a), strip_timings(b)
    assert json.dumps(sa, sort_keys=True, default=str) == json.dumps(sb, sort_keys=True, default=str)


def test_path_input_and_load(tmp_path):
    from reefmesh.io import save_obj

    src = tmp_path / "in.obj"
    src.write_bytes(save_obj(icosphere(1)))
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"input": {"path": str(src)}, "stages": [{"stage": "smooth"}],
                                    "output_dir": str(tmp_path / "out")}))
    man = run_pipeline(PipelineConfig.load(cfg_file))
    assert man["input"]["faces"] == 80 and man["stages"][0]["output_faces"] == 80


@st.composite
def stage_lists(draw):
    faces = 320
    has_uv = False
    stages = []
    for _ in range(draw(st.integers(0, 6))):
        options = ["smooth", "noise", "decimate", "unwrap", "compress", "metrics"]
        if faces <= 1500:
            options.append("subdivide")
        if has_uv:
            options += ["bake", "export_glb"]
        kind = draw(st.sampled_from(options))
        if kind == "smooth":
            stages.append({"stage": "smooth", "iterations": draw(st.integers(0, 5))})
        elif kind == "noise":
            stages.append({"stage": "noise", "amplitude": draw(st.floats(0.0, 0.05)), "frequency": 2.0,
                           "octaves": draw(st.integers(1, 4))})
        elif kind == "subdivide":
            stages.append({"stage": "subdivide"})
            faces *= 4
            has_uv = False
        elif kind == "decimate":
            target = draw(st.integers(20, faces))
            stages.append({"stage": "decimate", "target_faces": target})
            faces = min(faces, target)
            has_uv = False
        elif kind == "unwrap":
            stages.append({"stage": "unwrap", "resolution": 256, "gutter": 1})
            has_uv = True
        elif kind == "bake":
            stages.append({"stage": "bake", "resolution": 64, "gutter": 1, "supersampling": 1})
        else:
            stages.append({"stage": kind})
    return stages


@settings(max_examples=15, suppress_health_check=[HealthCheck.too_slow])
@given(stage_lists(), st.integers(0, 2**32 - 1))
def test_manifest_counts_chain(stages, seed):
    with tempfile.TemporaryDirectory() as tmp:
        man = run_pipeline(_cfg(stages, Path(tmp), seed=seed))
    recs = man["stages"]
    assert len(recs) == len(stages)
    prev = (man["input"]["faces"], man["input"]["vertices"])
    for rec, spec in zip(recs, stages):
        assert (rec["input_faces"], rec["input_vertices"]) == prev
        if spec["stage"] == "decimate":
            assert rec["output_faces"] <= spec["target_faces"]
        prev = (rec["output_faces"], rec["output_vertices"])
    assert (man["output"]["faces"], man["output"]["vertices"]) == prev
    assert np.isfinite([r["wall_time_ms"] for r in recs]).all()
