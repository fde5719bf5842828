"""Declarative stage runner with per-stage manifests.

Config (JSON, ``schema_version`` 1)::

    {
      "schema_version": 1,
      "seed": 1,
      "input": {"generator": "coral", "target_faces": 1500000}   # or {"path": "in.obj"}
      "output_dir": "out",
      "save_snapshots": false,
      "stages": [{"stage": "decimate", "id": "lod0", "target_faces": 500000}, ...]
    }

Stage seeds: stage ``i`` (0-based) gets the ``(i+1)``-th output of the
xorshift64* stream seeded with the global seed.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baker, codec, io, metrics, raster, refine, simplify, uv
from .bvh import configure_threads
from .coral import generate_test_coral
from .errors import PipelineError, ReefError
from .mesh import TriangleMesh
from .primitives import icosphere
from .refine import XorShift64Star

SCHEMA_VERSION = 1

# stage -> {param: (type, default)}; a default of ... means required
_PARAMS = {
    "subdivide": {"levels": (int, 1)},
    "smooth": {"iterations": (int, 10), "lambda": (float, 0.5), "mu": (float, -0.53)},
    "noise": {"amplitude": (float, ...), "frequency": (float, ...), "octaves": (int, 4),
              "gain": (float, 0.5), "lacunarity": (float, 2.0), "seed": (int, None)},
    "decimate": {"target_faces": (int, ...), "preserve_boundary": (bool, True),
                 "prevent_normal_flips": (bool, True), "boundary_weight": (float, 1000.0)},
    "unwrap": {"angle": (float, 60.0), "resolution": (int, 2048), "gutter": (int, 4)},
    "bake": {"high": (str, "input"), "resolution": (int, 2048), "supersampling": (int, 4),
             "max_ray_distance": (float, None), "gutter": (int, 4)},
    "compress": {"position_bits": (int, 14), "uv_bits": (int, 12)},
    "export_glb": {"normal_map": (bool, True)},
    "metrics": {"against": (str, "input"), "samples_per_area": (float, None)},
}
STAGES = tuple(_PARAMS)
# whether a stage replaces the geometry (and so invalidates UVs / normal maps)
_DROPS_UVS = {"subdivide", "decimate"}


def stage_seed(global_seed: int, index: int) -> int:
    rng = XorShift64Star(global_seed)
    out = 0
    for _ in range(index + 1):
        out = rng.next()
    return out


@dataclass
class StageSpec:
    index: int
    stage: str
    id: str | None
    params: dict


@dataclass
class PipelineConfig:
    input: dict
    stages: list
    output_dir: str = "out"
    seed: int = 0
    save_snapshots: bool = False
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {"schema_version", "seed", "input", "output_dir", "save_snapshots", "stages"}
        extra = set(d) - known
        if extra:
            raise PipelineError(f"unknown config keys: {sorted(extra)}")
        if "input" not in d:
            raise PipelineError("config needs an 'input'")
        return cls(input=d["input"], stages=list(d.get("stages", [])), output_dir=d.get("output_dir", "out"),
                   seed=int(d.get("seed", 0)), save_snapshots=bool(d.get("save_snapshots", False)),
                   schema_version=int(d.get("schema_version", SCHEMA_VERSION)))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise PipelineError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "seed": self.seed, "input": self.input,
                "output_dir": self.output_dir, "save_snapshots": self.save_snapshots, "stages": self.stages}

    def validate(self) -> list[StageSpec]:
        """Check every stage before anything runs; raises :class:`PipelineError`."""
        if self.schema_version != SCHEMA_VERSION:
            raise PipelineError(f"unsupported schema_version {self.schema_version}")
        _validate_input(self.input)
        specs = []
        ids = {"input"}
        has_uv = False
        for i, raw in enumerate(self.stages):
            if not isinstance(raw, dict) or "stage" not in raw:
                raise PipelineError("each stage must be an object with a 'stage' key", i)
            name = raw["stage"]
            if name not in _PARAMS:
                raise PipelineError(f"unknown stage {name!r}", i, str(name))
            sid = raw.get("id")
            if sid is not None and (not isinstance(sid, str) or sid in ids):
                raise PipelineError(f"id {sid!r} is not a new string", i, name)
            params = _resolve(i, name, {k: v for k, v in raw.items() if k not in ("stage", "id")})
            _check_params(i, name, params)
            if name == "unwrap":
                has_uv = True
            elif name in _DROPS_UVS:
                has_uv = False
            elif name == "bake":
                if not has_uv:
                    raise PipelineError("bake needs an unwrap after the last topology change", i, name)
                if params["high"] not in ids:
                    raise PipelineError(f"high source {params['high']!r} is not an earlier snapshot", i, name)
            elif name == "metrics" and params["against"] not in ids:
                raise PipelineError(f"metrics reference {params['against']!r} is not an earlier snapshot",
                                    i, name)
            if sid is not None:
                ids.add(sid)
            specs.append(StageSpec(i, name, sid, params))
        return specs


def _validate_input(inp):
    if not isinstance(inp, dict):
        raise PipelineError("input must be an object")
    if "path" in inp:
        if set(inp) != {"path"}:
            raise PipelineError("a path input takes no other keys")
        return
    gen = inp.get("generator")
    if gen == "coral":
        extra = set(inp) - {"generator", "seed", "target_faces"}
        if extra or not isinstance(inp.get("target_faces"), int) or inp["target_faces"] < 100:
            raise PipelineError("coral input needs an integer target_faces >= 100 (and optionally seed)")
    elif gen == "icosphere":
        if set(inp) - {"generator", "subdivisions"}:
            raise PipelineError("icosphere input takes only 'subdivisions'")
    else:
        raise PipelineError(f"unknown input generator {gen!r}")


def _resolve(i, name, given):
    spec = _PARAMS[name]
    unknown = set(given) - set(spec)
    if unknown:
        raise PipelineError(f"unknown parameters {sorted(unknown)}", i, name)
    out = {}
    for key, (typ, default) in spec.items():
        if key in given:
            v = given[key]
            if typ is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if v is not None and (not isinstance(v, typ) or (typ is int and isinstance(v, bool))):
                raise PipelineError(f"{key} must be {typ.__name__}", i, name)
            out[key] = v
        elif default is ...:
            raise PipelineError(f"missing required parameter {key!r}", i, name)
        else:
            out[key] = default
    return out


def _check_params(i, name, p):
    try:
        if name == "subdivide" and p["levels"] < 1:
            raise ValueError("levels must be >= 1")
        if name == "smooth":
            if p["iterations"] < 0 or not 0 < p["lambda"] < 1 or not -1 < p["mu"] < 0:
                raise ValueError("need iterations >= 0, lambda in (0, 1), mu in (-1, 0)")
        if name == "noise":
            refine.NoiseParams(p["seed"] or 0, p["amplitude"], p["frequency"], p["octaves"], p["gain"],
                               p["lacunarity"])
        if name == "decimate":
            simplify.DecimationOptions(p["target_faces"], p["preserve_boundary"], p["prevent_normal_flips"],
                                       p["boundary_weight"])
        if name == "unwrap":
            if p["resolution"] < uv.MIN_RESOLUTION or p["gutter"] < 0 or not 0 < p["angle"] <= 180:
                raise ValueError("need resolution >= 64, gutter >= 0, angle in (0, 180]")
        if name == "bake":
            baker.BakeOptions(p["resolution"], p["max_ray_distance"], p["supersampling"], p["gutter"])
        if name == "compress":
            if not 8 <= p["position_bits"] <= 24 or not 8 <= p["uv_bits"] <= 16:
                raise ValueError("position_bits in [8, 24], uv_bits in [8, 16]")
        if name == "metrics" and p["samples_per_area"] is not None and p["samples_per_area"] < 0:
            raise ValueError("samples_per_area must be >= 0")
    except ValueError as exc:
        raise PipelineError(f"{exc}", i, name) from None


def load_input(inp: dict, global_seed: int) -> TriangleMesh:
    if "path" in inp:
        return io.read_mesh(inp["path"])
    if inp["generator"] == "coral":
        return generate_test_coral(int(inp.get("seed", global_seed)), int(inp["target_faces"]))
    return icosphere(int(inp.get("subdivisions", 2)))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class _State:
    mesh: TriangleMesh
    normal_map: object = None
    snapshots: dict = field(default_factory=dict)


class _Run:
    def __init__(self, cfg: PipelineConfig, outdir: Path):
        self.cfg = cfg
        self.outdir = outdir
        self.written: list[Path] = []

    def write(self, name: str, data: bytes) -> str:
        path = self.outdir / name
        self.written.append(path)
        path.write_bytes(data)
        return name


def _run_stage(run: _Run, spec: StageSpec, st: _State, seed: int) -> dict:
    p = spec.params
    m = st.mesh
    tag = f"{spec.index:02d}_{spec.stage}"
    info: dict = {}
    artifacts = []
    if spec.stage == "subdivide":
        st.mesh = refine.loop_subdivide(m, p["levels"])
    elif spec.stage == "smooth":
        st.mesh = refine.taubin_smooth(m, p["iterations"], p["lambda"], p["mu"])
    elif spec.stage == "noise":
        params = refine.NoiseParams(seed if p["seed"] is None else p["seed"], p["amplitude"], p["frequency"],
                                    p["octaves"], p["gain"], p["lacunarity"])
        st.mesh = refine.noise_displace(m, params)
        info["seed"] = params.seed
    elif spec.stage == "decimate":
        opts = simplify.DecimationOptions(p["target_faces"], p["preserve_boundary"], p["prevent_normal_flips"],
                                          p["boundary_weight"])
        st.mesh, rep = simplify.decimate(m, opts)
        if st.mesh.n_faces > opts.target_faces:
            raise ReefError(f"decimation stopped at {st.mesh.n_faces} faces, above the budget {opts.target_faces}")
        info["report"] = rep.to_dict()
    elif spec.stage == "unwrap":
        st.mesh, atlas = uv.unwrap(m, p["angle"], p["resolution"], p["gutter"])
        flips = int((uv.uv_signed_areas(st.mesh.uvs) <= 0).sum())
        if flips:
            raise ReefError(f"atlas has {flips} flipped UV triangles")
        overlaps = raster.dilated_overlap_count(st.mesh.uvs, atlas.chart_of_face, p["resolution"], p["gutter"])
        if overlaps:
            raise ReefError(f"{overlaps} texels break the {p['gutter']}-pixel gutter between charts")
        artifacts.append(run.write(f"{tag}_atlas.json", atlas.to_json().encode()))
        info["charts"] = atlas.n_charts
        info["flipped"] = flips
        info["dilated_overlaps"] = overlaps
        info["efficiency"] = atlas.efficiency
    elif spec.stage == "bake":
        high = st.snapshots[p["high"]]
        opts = baker.BakeOptions(p["resolution"], p["max_ray_distance"], p["supersampling"], p["gutter"])
        frames = baker.compute_tangent_frames(m)
        st.mesh = m.replace(tangents=frames.tangents)
        nm, cm, rep = baker.bake_normal_map(st.mesh, high, opts)
        st.normal_map = nm
        artifacts.append(run.write(f"{tag}_normal.png", nm.to_png()))
        artifacts.append(run.write(f"{tag}_correspondence.cmap", baker.write_cmap(cm)))
        artifacts.append(run.write(f"{tag}_correspondence.png", baker.false_color(cm).to_png()))
        info["report"] = rep.to_dict()
        info["high"] = p["high"]
    elif spec.stage == "compress":
        blob = codec.compress(m, p["position_bits"], p["uv_bits"])
        artifacts.append(run.write(f"{tag}.clm", blob))
        info["bytes"] = len(blob)
        info["ratio"] = len(blob) / codec.raw_size(m)
    elif spec.stage == "export_glb":
        nm = st.normal_map if p["normal_map"] else None
        artifacts.append(run.write(f"{tag}.glb", io.export_glb(m, nm)))
        info["normal_map"] = nm is not None
    elif spec.stage == "metrics":
        ref = st.snapshots[p["against"]]
        q = metrics.quality_report(ref, m, None, p["samples_per_area"], seed)
        artifacts.append(run.write(f"{tag}.json", q.to_json().encode()))
        info["quality"] = q.to_dict()
    if spec.stage in _DROPS_UVS:
        st.normal_map = None
    if run.cfg.save_snapshots and spec.stage in ("subdivide", "smooth", "noise", "decimate", "unwrap"):
        artifacts.append(run.write(f"{tag}.obj", io.save_obj(st.mesh)))
    info["artifacts"] = artifacts
    return info


def run_pipeline(config: PipelineConfig, seed: int | None = None, output_dir=None) -> dict:
    """Validate, then execute every stage in order; returns the manifest dict.

    On a failing stage the artifacts it wrote are removed, the manifest is
    written with ``status = "failed"`` and :class:`PipelineError` is raised.
    """
    if seed is not None:
        config = PipelineConfig(**{**config.__dict__, "seed": int(seed)})
    specs = config.validate()
    configure_threads()
    outdir = Path(output_dir if output_dir is not None else config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    run = _Run(config, outdir)

    t0 = time.perf_counter()
    mesh = load_input(config.input, config.seed)
    st = _State(mesh, snapshots={"input": mesh})
    keep = {s.params.get("high") for s in specs} | {s.params.get("against") for s in specs}
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "status": "running",
        "seed": config.seed,
        "input": {"source": config.input, "faces": mesh.n_faces, "vertices": mesh.n_vertices,
                  "content_hash": mesh.content_hash(), "wall_time_ms": (time.perf_counter() - t0) * 1e3},
        "stages": [],
        "artifacts": {},
    }
    for spec in specs:
        before = st.mesh
        start = len(run.written)
        t = time.perf_counter()
        try:
            info = _run_stage(run, spec, st, stage_seed(config.seed, spec.index))
        except (ReefError, ValueError, OSError) as exc:
            for path in run.written[start:]:
                if path.exists():
                    path.unlink()
            del run.written[start:]
            manifest["status"] = "failed"
            manifest["error"] = {"stage_index": spec.index, "stage": spec.stage, "message": str(exc)}
            _finish(run, manifest)
            raise PipelineError(f"failed: {exc}", spec.index, spec.stage) from exc
        record = {
            "index": spec.index,
            "stage": spec.stage,
            "id": spec.id,
            "params": spec.params,
            "seed": stage_seed(config.seed, spec.index),
            "input_faces": before.n_faces,
            "input_vertices": before.n_vertices,
            "output_faces": st.mesh.n_faces,
            "output_vertices": st.mesh.n_vertices,
            "wall_time_ms": (time.perf_counter() - t) * 1e3,
        }
        record.update(info)
        manifest["stages"].append(record)
        if spec.id is not None and spec.id in keep:
            st.snapshots[spec.id] = st.mesh
    run.write("final.obj", io.save_obj(st.mesh))
    manifest["output"] = {"faces": st.mesh.n_faces, "vertices": st.mesh.n_vertices,
                          "content_hash": st.mesh.content_hash()}
    manifest["status"] = "ok"
    _finish(run, manifest)
    return manifest


def _finish(run: _Run, manifest: dict):
    manifest["artifacts"] = {p.name: sha256_file(p) for p in run.written if p.exists()}
    (run.outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def strip_timings(manifest: dict) -> dict:
    """Copy of a manifest without wall-time fields, for run-to-run comparison."""
    if isinstance(manifest, dict):
        return {k: strip_timings(v) for k, v in manifest.items() if "wall_time" not in k and k != "timings_ms"}
    if isinstance(manifest, list):
        return [strip_timings(v) for v in manifest]
    return manifest
