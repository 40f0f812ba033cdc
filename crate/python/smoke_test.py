"""Smoke test for the mutualmesh_py extension module.

Build and install first:  maturin develop -m crates/py/Cargo.toml --release
"""

import json
import math

import mutualmesh_py as mm


def main():
    sphere = mm.Mesh.icosphere(1)
    assert sphere.counts() == (42, 120, 80), sphere.counts()
    assert sphere.validate() == (True, 0)
    assert len(sphere.edge_adjacency()) == 120

    again = mm.Mesh.from_obj(sphere.to_obj())
    assert again.faces == sphere.faces

    bigger = sphere.with_vertices([(1.1 * x, 1.1 * y, 1.1 * z) for x, y, z in sphere.vertices])
    cd, p2s, s2p = mm.surface_distances(sphere, sphere, n_samples=500)
    assert max(cd, p2s, s2p) < 1e-9
    cd, _, _ = mm.surface_distances(bigger, sphere, n_samples=2000)
    assert 0.08 < cd < 0.11, cd

    joints = [(0.0, 0.0, 0.0), (3.0, 0.0, 0.0), (0.0, 4.0, 0.0), (1.0, 1.0, 1.0)]
    shifted = [(x + 3.0, y + 4.0, z) for x, y, z in joints]
    assert abs(mm.mpjpe(shifted, joints) - 5.0) < 1e-12
    assert mm.pa_mpjpe(shifted, joints) < 1e-9
    assert mm.chamfer(joints, joints) == 0.0

    mask = mm.render_silhouette(sphere, resolution=64)
    assert len(mask) == 64 * 64 and 0 < sum(mask) < 64 * 64

    cos, l2 = mm.normal_map_metrics(sphere, sphere, resolution=64)
    assert cos < 1e-9 and l2 < 1e-9, (cos, l2)

    passed, max_err, failures = mm.gradient_suite(seed=0)
    assert passed, failures
    print(f"gradient suite max relative error {max_err:.2e}")

    cfg = json.loads(mm.default_config())
    cfg["network"].update(template_subdivisions=1, body_width=16, graph_layers=2, edge_width=8, edge_layers=3)
    cfg["training"].update(steps=5, warmup_steps=2, heldout_every=5, heldout_surface_samples=200)
    cfg["data"].update(num_samples=2, resolution=32)
    net, info = mm.train_toy(json.dumps(cfg))
    assert info["csv"].count("\n") == 7
    assert math.isfinite(info["final_total"])
    restored = mm.Network.load(net.save())
    assert restored.num_params == net.num_params
    body, clothed = restored.predict_synthetic(2, json.dumps(cfg))
    assert body.edges == clothed.edges == sphere.edges
    print(f"trained {net.num_params} parameters: total {info['initial_total']:.4f} -> {info['final_total']:.4f}")
    print("ok")


if __name__ == "__main__":
    main()
