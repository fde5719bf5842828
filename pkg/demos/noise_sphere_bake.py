"""How much of a bumpy surface survives in a normal map on a coarse sphere.

Displaces a fine icosphere with fBm noise, bakes it onto a 320-face
sphere, then compares the baked normals with the high mesh
at random surface points, for one and four samples per texel.

    python demos/noise_sphere_bake.py
"""

from reefmesh.baker import BakeOptions, bake_normal_map
from reefmesh.metrics import normal_deviation
from reefmesh.primitives import icosphere
from reefmesh.refine import NoiseParams, noise_displace
from reefmesh.uv import unwrap

high = noise_displace(icosphere(4), NoiseParams(seed=11, amplitude=0.02, frequency=3.0, octaves=3))
low, _ = unwrap(icosphere(2), resolution=512, gutter=4)
print(f"high {high.n_faces} faces, low {low.n_faces} faces")

for ss in (1, 4):
    nmap, _, rep = bake_normal_map(low, high, BakeOptions(512, supersampling=ss))
    dev = normal_deviation(low, nmap, high, 20_000, seed=3)
    print(f"supersampling {ss}: mean {dev.mean_deg:.2f} deg, p95 {dev.p95_deg:.2f} deg "
          f"({rep.wall_time_ms:.0f} ms)")
