"""Command-line front end: one subcommand per library operation.

Exit status 0 on success, 1 on domain or I/O errors, 2 on usage errors.
Reports go to stdout (or ``--json`` files), diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import baker, codec, io, metrics, refine, simplify, uv
from .bvh import configure_threads
from .coral import generate_test_coral
from .errors import ReefError
from .mesh import validate
from .pipeline import PipelineConfig, run_pipeline


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v <= 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be a positive integer")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be >= 0")
    return v


def _emit(data: dict, path: str | None = None):
    text = json.dumps(data, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _cmd_generate(a):
    m = generate_test_coral(a.seed, a.faces)
    io.write_mesh(a.output, m)
    _emit({"faces": m.n_faces, "vertices": m.n_vertices, "output": a.output})


def _cmd_decimate(a):
    opts = simplify.DecimationOptions(a.target, preserve_boundary=a.keep_boundary,
                                      prevent_normal_flips=not a.no_flip_check)
    out, rep = simplify.decimate(io.read_mesh(a.input), opts)
    io.write_mesh(a.output, out)
    d = rep.to_dict()
    d.pop("collapse_errors", None)
    d.pop("collapse_passes", None)
    _emit(d, a.json)


def _cmd_subdivide(a):
    m = io.read_mesh(a.input)
    out = refine.loop_subdivide(m, a.levels)
    io.write_mesh(a.output, out)
    _emit({"input_faces": m.n_faces, "output_faces": out.n_faces, "output_vertices": out.n_vertices})


def _cmd_smooth(a):
    out = refine.taubin_smooth(io.read_mesh(a.input), a.iters, a.lam, a.mu)
    io.write_mesh(a.output, out)
    _emit({"faces": out.n_faces, "signed_volume": out.signed_volume()})


def _cmd_noise(a):
    params = refine.NoiseParams(a.seed, a.amplitude, a.frequency, a.octaves)
    out = refine.noise_displace(io.read_mesh(a.input), params)
    io.write_mesh(a.output, out)
    _emit({"faces": out.n_faces, "max_displacement": params.bound()})


def _cmd_unwrap(a):
    out, atlas = uv.unwrap(io.read_mesh(a.input), a.angle, a.resolution, a.gutter)
    io.write_mesh(a.output, out)
    if a.atlas:
        Path(a.atlas).write_text(atlas.to_json())
    _emit({"charts": atlas.n_charts, "efficiency": atlas.efficiency})


def _cmd_bake(a):
    low = io.read_mesh(a.low)
    if low.uvs is None:
        low, _ = uv.unwrap(low, resolution=a.resolution)
        print("low mesh had no UVs; unwrapped with default settings", file=sys.stderr)
    opts = baker.BakeOptions(a.resolution, a.max_distance, a.supersampling)
    low = low.replace(tangents=baker.compute_tangent_frames(low).tangents)
    nm, cm, rep = baker.bake_normal_map(low, io.read_mesh(a.high), opts)
    Path(a.output).write_bytes(nm.to_png())
    if a.cmap:
        Path(a.cmap).write_bytes(baker.write_cmap(cm))
    if a.low_out:
        io.write_mesh(a.low_out, low)
    if a.glb:
        Path(a.glb).write_bytes(io.export_glb(low, nm))
    _emit(rep.to_dict())


def _cmd_compress(a):
    m = io.read_mesh(a.input)
    blob = codec.compress(m, a.bits, a.uv_bits)
    Path(a.output).write_bytes(blob)
    _emit({"bytes": len(blob), "raw_bytes": codec.raw_size(m), "ratio": len(blob) / codec.raw_size(m)})


def _cmd_decompress(a):
    m = codec.decompress(Path(a.input).read_bytes())
    io.write_mesh(a.output, m)
    _emit({"faces": m.n_faces, "vertices": m.n_vertices})


def _cmd_export_glb(a):
    m = io.read_mesh(a.input)
    nm = baker.TextureImage.from_png(Path(a.normal_map).read_bytes()) if a.normal_map else None
    if nm is not None and m.tangents is None:
        m = m.replace(tangents=baker.compute_tangent_frames(m).tangents)
    Path(a.output).write_bytes(io.export_glb(m, nm))


def _cmd_metrics(a):
    rep = metrics.quality_report(io.read_mesh(a.a), io.read_mesh(a.b), seed=a.seed)
    _emit(rep.to_dict(), a.json)


def _cmd_pipeline(a):
    cfg = PipelineConfig.load(a.config)
    manifest = run_pipeline(cfg, seed=a.seed, output_dir=a.output_dir)
    out = Path(a.output_dir or cfg.output_dir) / "manifest.json"
    _emit({"status": manifest["status"], "manifest": str(out), "stages": len(manifest["stages"])})


def _cmd_validate(a):
    rep = validate(io.read_mesh(a.input))
    _emit({**rep.to_dict(), "ok": rep.ok})
    return 0 if rep.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reefmesh", description="Progressive mesh optimisation toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate", help="write the procedural coral test mesh")
    s.add_argument("--seed", type=_nonneg_int, default=1)
    s.add_argument("--faces", type=_positive_int, default=1_500_000)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_generate)

    s = sub.add_parser("decimate", help="QEM edge-collapse decimation")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--target", type=_positive_int, required=True, help="face budget")
    s.add_argument("--keep-boundary", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--no-flip-check", action="store_true")
    s.add_argument("--json", help="write the report here instead of stdout")
    s.set_defaults(func=_cmd_decimate)

    s = sub.add_parser("subdivide", help="Loop subdivision")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--levels", type=_positive_int, default=1)
    s.set_defaults(func=_cmd_subdivide)

    s = sub.add_parser("smooth", help="Taubin smoothing")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--iters", type=_nonneg_int, default=10)
    s.add_argument("--lambda", dest="lam", type=float, default=0.5)
    s.add_argument("--mu", type=float, default=-0.53)
    s.set_defaults(func=_cmd_smooth)

    s = sub.add_parser("noise", help="fBm displacement along vertex normals")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--amplitude", type=float, required=True)
    s.add_argument("--frequency", type=float, required=True)
    s.add_argument("--octaves", type=_positive_int, default=4)
    s.set_defaults(func=_cmd_noise)

    s = sub.add_parser("unwrap", help="segment, flatten and pack a UV atlas")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--angle", type=float, default=60.0)
    s.add_argument("--resolution", type=_positive_int, default=2048)
    s.add_argument("--gutter", type=_nonneg_int, default=4)
    s.add_argument("--atlas", help="write the chart layout JSON here")
    s.set_defaults(func=_cmd_unwrap)

    s = sub.add_parser("bake", help="bake a tangent-space normal map from a high mesh")
    s.add_argument("--low", required=True)
    s.add_argument("--high", required=True)
    s.add_argument("-o", "--output", required=True, help="normal map PNG")
    s.add_argument("--resolution", type=_positive_int, default=2048)
    s.add_argument("--supersampling", type=int, choices=(1, 4), default=4)
    s.add_argument("--max-distance", type=float, default=None)
    s.add_argument("--cmap", help="write the correspondence map here")
    s.add_argument("--low-out", help="write the low mesh (with UVs and tangents) as OBJ")
    s.add_argument("--glb", help="also export a GLB with the baked map")
    s.set_defaults(func=_cmd_bake)

    s = sub.add_parser("compress", help="encode as CLM1")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--bits", type=_positive_int, default=14)
    s.add_argument("--uv-bits", type=_positive_int, default=12)
    s.set_defaults(func=_cmd_compress)

    s = sub.add_parser("decompress", help="decode CLM1 to OBJ")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_decompress)

    s = sub.add_parser("export-glb", help="pack a mesh (and optional normal map) as GLB")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--normal-map")
    s.set_defaults(func=_cmd_export_glb)

    s = sub.add_parser("metrics", help="Hausdorff distances between two meshes")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--json", help="write the report here instead of stdout")
    s.set_defaults(func=_cmd_metrics)

    s = sub.add_parser("pipeline", help="run a JSON stage config")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=_nonneg_int, default=None, help="override the config's global seed")
    s.add_argument("--output-dir", default=None)
    s.set_defaults(func=_cmd_pipeline)

    s = sub.add_parser("validate", help="topology report; exit 1 if an invariant fails")
    s.add_argument("input")
    s.set_defaults(func=_cmd_validate)
    return p


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_threads()
    try:
        status = args.func(args)
    except (ReefError, ValueError, OSError) as exc:
        print(f"reefmesh {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0 if status is None else int(status)


def main():
    sys.exit(cli_main())
