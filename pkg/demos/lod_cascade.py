"""Walk a procedural coral down a chain of LODs and ship the last one.

Each level is decimated from the previous level, measured against the
original, and the smallest level gets a UV atlas, a baked normal map and a
GLB. Writes into ./demo_out (or the directory given as the first argument).

    python demos/lod_cascade.py [outdir]
"""

import sys
import time
from pathlib import Path

from reefmesh import validate
from reefmesh.baker import BakeOptions, bake_normal_map
from reefmesh.codec import compress, raw_size
from reefmesh.coral import generate_test_coral
from reefmesh.io import export_glb, save_obj
from reefmesh.metrics import hausdorff
from reefmesh.simplify import DecimationOptions, decimate
from reefmesh.uv import unwrap


def main(outdir="demo_out"):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)

    high = generate_test_coral(seed=1, target_faces=120_000)
    print(f"coral: {high.n_faces} faces, chi = {validate(high).euler_characteristic}")

    mesh = high
    for budget in (40_000, 12_000, 4_000):
        t = time.perf_counter()
        mesh, rep = decimate(mesh, DecimationOptions(budget))
        h = hausdorff(high, mesh)
        print(f"  {budget:>6} budget -> {mesh.n_faces:>6} faces  "
              f"Hausdorff {h.symmetric_pct:.3f}% of diagonal  ({time.perf_counter() - t:.1f} s)")

    low, atlas = unwrap(mesh, resolution=1024, gutter=4)
    print(f"atlas: {atlas.n_charts} charts, {atlas.efficiency:.0%} of the texture used")

    nmap, _, brep = bake_normal_map(low, high, BakeOptions(1024))
    print(f"bake: {brep.covered} texels covered, {brep.missed} missed rays")

    blob = compress(low)
    print(f"CLM1: {len(blob)} bytes, {len(blob) / raw_size(low):.1%} of raw")

    (out / "lod.obj").write_bytes(save_obj(low))
    (out / "lod_normal.png").write_bytes(nmap.to_png())
    (out / "lod.glb").write_bytes(export_glb(low, nmap))
    print(f"wrote {out}/lod.obj, lod_normal.png, lod.glb")


if __name__ == "__main__":
    main(*sys.argv[1:2])
