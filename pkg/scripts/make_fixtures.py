"""Regenerate the example manifests under fixtures/ (run from the repository root)."""
from __future__ import annotations

import json, math
from orbitkit import fixtures as fx

V = "orbitkit/1"
def dump(name, m):
    with open(f"fixtures/{name}.json", "w") as fh:
        json.dump(m, fh, indent=2)
        fh.write("\n")

R3 = {"name": "R3", "coords": ["x", "y", "z"]}
dump("heisenberg", {
    "version": V,
    "description": "d_z and d_x + z d_y on R^3: one orbit, all of R^3",
    "spaces": [R3],
    "fields": [
        {"name": "dz", "space": "R3", "components": ["0", "0", "1"], "declared_complete": True},
        {"name": "dx+z*dy", "space": "R3", "components": ["1", "z", "0"], "declared_complete": True},
    ],
    "families": [{"name": "heisenberg", "fields": ["dz", "dx+z*dy"]}],
    "tasks": [
        {"name": "bracket", "kind": "bracket", "X": "dz", "Y": "dx+z*dy", "expect": {"components": ["0", "1", "0"]}},
        {"name": "closure", "kind": "closure", "family": "heisenberg", "depth": 2, "random_points": 20,
         "expect": {"count": 3, "min_rank": 3}},
        {"name": "rank-origin", "kind": "rank", "family": "heisenberg", "point": [0, 0, 0], "bracket_depth": 2,
         "expect": {"k": 3}},
        {"name": "chart-origin", "kind": "chart", "family": "heisenberg", "point": [0, 0, 0], "expect": {"k": 3}},
        {"name": "sample-origin", "kind": "sample", "family": "heisenberg", "point": [0, 0, 0], "budget": 2000,
         "expect": {"dimension": 3}},
    ],
})

R2 = {"name": "R2", "coords": ["x", "y"]}
dump("rotation", {
    "version": V,
    "description": "d_theta on R^2: the circles around the origin, and the origin itself",
    "spaces": [R2],
    "fields": [{"name": "dtheta", "space": "R2", "components": ["-y", "x"], "declared_complete": True}],
    "families": [{"name": "rotation", "fields": ["dtheta"]}],
    "tasks": [
        {"name": "rank-origin", "kind": "rank", "family": "rotation", "point": [0, 0], "expect": {"k": 0}},
        {"name": "rank-circle", "kind": "rank", "family": "rotation", "point": [1, 0], "expect": {"k": 1}},
        {"name": "chart-circle", "kind": "chart", "family": "rotation", "point": [1, 0], "expect": {"k": 1}},
        {"name": "sample-circle", "kind": "sample", "family": "rotation", "point": [1, 0], "budget": 500,
         "expect": {"dimension": 1}},
    ],
})

b = "bump(x^2 + y^2)"
dump("disk", {
    "version": V,
    "description": "translations cut off by a bump supported in the unit disk",
    "spaces": [R2],
    "fields": [
        {"name": "bx", "space": "R2", "components": [b, "0"], "declared_complete": True},
        {"name": "by", "space": "R2", "components": ["0", b], "declared_complete": True},
    ],
    "families": [{"name": "disk", "fields": ["bx", "by"]}],
    "tasks": [
        {"name": "rank-inside", "kind": "rank", "family": "disk", "point": [0.3, -0.4], "expect": {"k": 2}},
        {"name": "rank-boundary", "kind": "rank", "family": "disk", "point": [1, 0], "expect": {"k": 0}},
        {"name": "rank-outside", "kind": "rank", "family": "disk", "point": [1.5, 0.5], "expect": {"k": 0}},
        {"name": "sample-outside", "kind": "sample", "family": "disk", "point": [2, 0], "budget": 200,
         "expect": {"points": 1, "dimension": 0}},
    ],
})

dump("torus", {
    "version": V,
    "description": "constant field (1, sqrt(2)) on the flat torus: a densely winding orbit",
    "spaces": [{"name": "T2", "coords": ["u", "v"], "periods": [1, 1]}],
    "fields": [{"name": "line", "space": "T2", "components": ["1", "sqrt(2)"], "declared_complete": True}],
    "families": [{"name": "torus", "fields": ["line"]}],
    "tasks": [
        {"name": "sample-dense", "kind": "sample", "family": "torus", "point": [0, 0], "budget": 2000, "t_max": 50,
         "cell": 0.1, "expect": {"points": 100}},
    ],
})

dump("projection", {
    "version": V,
    "description": "(x, y) -> x with d_x -> d_x and d_y -> 0",
    "spaces": [R2, {"name": "R1", "coords": ["x"]}],
    "fields": [
        {"name": "dx", "space": "R2", "components": ["1", "0"], "declared_complete": True},
        {"name": "dy", "space": "R2", "components": ["0", "1"], "declared_complete": True},
        {"name": "dx-line", "space": "R1", "components": ["1"], "declared_complete": True},
        {"name": "zero", "space": "R1", "components": ["0"], "declared_complete": True},
    ],
    "families": [{"name": "plane", "fields": ["dx", "dy"]}, {"name": "line", "fields": ["dx-line", "zero"]}],
    "maps": [{"name": "proj", "domain": "R2", "codomain": "R1", "components": ["x"]}],
    "systems": [{"name": "projection", "map": "proj", "F0": "plane", "F1": "line",
                 "pairing": [["dx", "dx-line"], ["dy", "zero"]]}],
    "tasks": [
        {"name": "check-map", "kind": "check-map", "system": "projection", "n_samples": 64, "tol": 1e-12,
         "expect": {"max_residual": 0.0}},
        {"name": "rank-orbit", "kind": "rank-orbit", "system": "projection", "point": [0.3, -0.2],
         "expect": {"rank": 1}},
        {"name": "dim-up", "kind": "rank", "family": "plane", "point": [0, 0], "expect": {"k": 2}},
        {"name": "dim-down", "kind": "rank", "family": "line", "point": [0], "expect": {"k": 1}},
        {"name": "trivialize", "kind": "trivialize", "system": "projection", "m1": [0], "u0star": [0, 0],
         "n_samples": 100, "tol": 1e-9, "expect": {"fiber_dimension": 1}},
        {"name": "fiber", "kind": "fiber", "system": "projection", "m1": [0], "u0star": [0, 0], "budget": 2000,
         "expect": {"dimension": 1}},
    ],
})

so3 = [f"r{i}{j}" for i in range(1, 4) for j in range(1, 4)]
G = fx.rotation_group()
from orbitkit.expr import to_text
c, s = math.cos(0.5), math.sin(0.5)
Rx = [[1, 0, 0], [0, c, -s], [0, s, c]]
dump("so3-s2", {
    "version": V,
    "description": "g -> g n from SO(3) (row-major in R^9) to S^2, right-invariant fields to infinitesimal rotations",
    "spaces": [
        {"name": "SO3", "coords": so3,
         "constraints": [to_text(e) for e in G.constraints],
         "domain": [to_text(e) for e in G.domain],
         "retraction": "orthonormalize"},
        {"name": "S2", "coords": ["x", "y", "z"], "constraints": ["x^2 + y^2 + z^2 - 1"], "retraction": "normalize"},
    ],
    "fields": (
        [{"name": f"E{i + 1}", "space": "SO3", "components": comps, "declared_complete": True}
         for i, comps in enumerate(fx.so3_fields_text())]
        + [{"name": f"L{i + 1}", "space": "S2", "components": comps, "declared_complete": True}
           for i, comps in enumerate(fx.s2_fields_text())]
    ),
    "families": [{"name": "so3", "fields": ["E1", "E2", "E3"]}, {"name": "s2", "fields": ["L1", "L2", "L3"]}],
    "maps": [{"name": "orbit-map", "domain": "SO3", "codomain": "S2", "components": ["r13", "r23", "r33"]}],
    "systems": [{"name": "so3-s2", "map": "orbit-map", "F0": "so3", "F1": "s2",
                 "pairing": [["E1", "L1"], ["E2", "L2"], ["E3", "L3"]]}],
    "tasks": [
        {"name": "check-map", "kind": "check-map", "system": "so3-s2", "n_samples": 64, "tol": 1e-8},
        {"name": "rank-orbit", "kind": "rank-orbit", "system": "so3-s2", "point": [1, 0, 0, 0, 1, 0, 0, 0, 1],
         "expect": {"rank": 2}},
        {"name": "dim-up", "kind": "rank", "family": "so3", "point": [1, 0, 0, 0, 1, 0, 0, 0, 1],
         "bracket_depth": 2, "expect": {"k": 3}},
        {"name": "dim-down", "kind": "rank", "family": "s2", "point": [0, 0, 1], "bracket_depth": 2,
         "expect": {"k": 2}},
        {"name": "trivialize", "kind": "trivialize", "system": "so3-s2", "m1": [0, 0, 1],
         "u0star": [1, 0, 0, 0, 1, 0, 0, 0, 1], "fiber_budget": 2000, "fiber_t_max": 3.2, "n_samples": 100, "tol": 1e-6,
         "overlap": {"m1": [Rx[0][2], Rx[1][2], Rx[2][2]], "u0star": [v for row in Rx for v in row],
                     "n_samples": 100},
         "expect": {"fiber_dimension": 1}},
    ],
})

F = fx.TWO_DISK_F
dump("two-disks", {
    "version": V,
    "description": "inclusion of two unit disks into R^2; upstairs fields are not complete",
    "spaces": [
        {"name": "disks", "coords": ["x", "y"], "domain": ["bump((x + 5)^2 + y^2) + bump((x - 5)^2 + y^2)"],
         "sampling_box": [[-6, 6], [-1, 1]]},
        R2,
    ],
    "fields": [
        {"name": "dx-up", "space": "disks", "components": ["1", "0"], "declared_complete": False},
        {"name": "fdy-up", "space": "disks", "components": ["0", F], "declared_complete": False},
        {"name": "dx", "space": "R2", "components": ["1", "0"], "declared_complete": True},
        {"name": "fdy", "space": "R2", "components": ["0", F], "declared_complete": True},
    ],
    "families": [{"name": "disks", "fields": ["dx-up", "fdy-up"]}, {"name": "plane", "fields": ["dx", "fdy"]}],
    "maps": [{"name": "inclusion", "domain": "disks", "codomain": "R2", "components": ["x", "y"]}],
    "systems": [{"name": "two-disks", "map": "inclusion", "F0": "disks", "F1": "plane",
                 "pairing": [["dx-up", "dx"], ["fdy-up", "fdy"]]}],
    "tasks": [
        {"name": "check-map", "kind": "check-map", "system": "two-disks", "n_samples": 64, "tol": 1e-12},
        {"name": "dim-up-left", "kind": "rank", "family": "disks", "point": [-5, 0], "push_t_max": 3.0,
         "expect": {"k": 1}},
        {"name": "dim-up-right", "kind": "rank", "family": "disks", "point": [5, 0], "push_t_max": 3.0,
         "expect": {"k": 2}},
        {"name": "dim-down-left", "kind": "rank", "family": "plane", "point": [-5, 0], "push_t_max": 3.0,
         "expect": {"k": 2}},
        {"name": "dim-down-right", "kind": "rank", "family": "plane", "point": [5, 0], "push_t_max": 3.0,
         "expect": {"k": 2}},
        {"name": "trivialize", "kind": "trivialize", "system": "two-disks", "m1": [5, 0], "u0star": [5, 0],
         "push_t_max": 3.0},
    ],
})

dump("degenerate", {
    "version": V,
    "description": "identity of R (one-point fibers) and x^2 + y^2 constant on the circles",
    "spaces": [{"name": "R1", "coords": ["x"]}, R2, {"name": "Rr", "coords": ["r"]}],
    "fields": [
        {"name": "dx", "space": "R1", "components": ["1"], "declared_complete": True},
        {"name": "dtheta", "space": "R2", "components": ["-y", "x"], "declared_complete": True},
        {"name": "still", "space": "Rr", "components": ["0"], "declared_complete": True},
    ],
    "families": [{"name": "line", "fields": ["dx"]}, {"name": "rotation", "fields": ["dtheta"]},
                 {"name": "still", "fields": ["still"]}],
    "maps": [{"name": "id", "domain": "R1", "codomain": "R1", "components": ["x"]},
             {"name": "r2", "domain": "R2", "codomain": "Rr", "components": ["x^2 + y^2"]}],
    "systems": [{"name": "identity", "map": "id", "F0": "line", "F1": "line", "pairing": [[0, 0]]},
                {"name": "radius", "map": "r2", "F0": "rotation", "F1": "still", "pairing": [[0, 0]]}],
    "tasks": [
        {"name": "identity-map", "kind": "check-map", "system": "identity", "tol": 1e-12},
        {"name": "identity-trivialize", "kind": "trivialize", "system": "identity", "m1": [0], "u0star": [0],
         "expect": {"fiber_dimension": 0}},
        {"name": "identity-fiber", "kind": "fiber", "system": "identity", "m1": [0], "u0star": [0], "budget": 200,
         "expect": {"points": 1, "dimension": 0}},
        {"name": "radius-map", "kind": "check-map", "system": "radius", "tol": 1e-12},
        {"name": "radius-rank", "kind": "rank-orbit", "system": "radius", "point": [1, 0], "expect": {"rank": 0}},
    ],
})
