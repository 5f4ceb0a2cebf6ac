"""Ready-made spaces, families and mapped systems for the classical examples.

These builders mirror the JSON manifests shipped under ``fixtures/`` and are
what the test-suite and benchmarks use directly.
"""
from __future__ import annotations

from .fields import Family, VectorField
from .geometry import Space, euclidean
from .intertwine import MappedSystem, SmoothMap

SQRT2 = "sqrt(2)"

# hat(e_i): infinitesimal rotations about the coordinate axes
HAT = (
    ((0, 0, 0), (0, 0, -1), (0, 1, 0)),
    ((0, 0, 1), (0, 0, 0), (-1, 0, 0)),
    ((0, -1, 0), (1, 0, 0), (0, 0, 0)),
)
SO3_COORDS = tuple(f"r{i}{j}" for i in range(1, 4) for j in range(1, 4))
S2_COORDS = ("x", "y", "z")


def _field(name, space, comps, complete=True) -> VectorField:
    return VectorField.from_strings(name, space, comps, complete)


def _linear(coeffs: dict[str, int]) -> str:
    """Integer linear combination of variable names as expression text."""
    terms = []
    for var, c in coeffs.items():
        if c == 0:
            continue
        sign = "-" if c < 0 else "+"
        mag = "" if abs(c) == 1 else f"{abs(c)}*"
        terms.append(f"{sign} {mag}{var}")
    if not terms:
        return "0"
    text = " ".join(terms)
    return text[2:] if text.startswith("+") else "-" + text[2:]


def heisenberg() -> Family:
    """``{d_z, d_x + z d_y}`` on R^3; one orbit, all of R^3."""
    R3 = euclidean(3, "R3", ("x", "y", "z"))
    return Family("heisenberg", (_field("dz", R3, ["0", "0", "1"]), _field("dx+z*dy", R3, ["1", "z", "0"])))


def translations(n: int = 2) -> Family:
    Rn = euclidean(n, f"R{n}")
    fields = []
    for i in range(n):
        comps = ["1" if j == i else "0" for j in range(n)]
        fields.append(_field(f"d{Rn.coords[i]}", Rn, comps))
    return Family(f"translations{n}", tuple(fields))


def rotation() -> Family:
    """``{d_theta}`` on R^2: orbits are the circles and the origin."""
    R2 = euclidean(2, "R2", ("x", "y"))
    return Family("rotation", (_field("dtheta", R2, ["-y", "x"]),))


def disk_bump() -> Family:
    """Translations cut off by a bump supported in the open unit disk."""
    R2 = euclidean(2, "R2", ("x", "y"))
    b = "bump(x^2 + y^2)"
    return Family("disk", (_field("bx", R2, [b, "0"]), _field("by", R2, ["0", b])))


def torus_line(slope: str = SQRT2) -> Family:
    """Constant field ``(1, slope)`` on the flat torus ``[0,1)^2``."""
    T2 = Space.from_strings("T2", ("u", "v"), periods=(1.0, 1.0))
    return Family("torus", (_field("line", T2, ["1", slope]),))


def sphere() -> Space:
    return Space.from_strings("S2", S2_COORDS, constraints=["x^2 + y^2 + z^2 - 1"], retraction="normalize")


def rotation_group() -> Space:
    """SO(3) as row-major 3x3 matrices in R^9."""
    r = [[f"r{i}{j}" for j in range(1, 4)] for i in range(1, 4)]
    cons = []
    for a in range(3):
        for b in range(a, 3):
            dot = " + ".join(f"{r[k][a]}*{r[k][b]}" for k in range(3))
            cons.append(f"{dot} - 1" if a == b else dot)
    det = (
        f"{r[0][0]}*({r[1][1]}*{r[2][2]} - {r[1][2]}*{r[2][1]})"
        f" - {r[0][1]}*({r[1][0]}*{r[2][2]} - {r[1][2]}*{r[2][0]})"
        f" + {r[0][2]}*({r[1][0]}*{r[2][1]} - {r[1][1]}*{r[2][0]})"
    )
    return Space.from_strings("SO3", SO3_COORDS, constraints=cons, domain=[det], retraction="orthonormalize")


def so3_fields_text() -> list[list[str]]:
    """Components of the right-invariant fields ``g -> hat(e_i) g``."""
    out = []
    for E in HAT:
        comps = []
        for i in range(3):
            for j in range(3):
                comps.append(_linear({f"r{k + 1}{j + 1}": E[i][k] for k in range(3)}))
        out.append(comps)
    return out


def s2_fields_text() -> list[list[str]]:
    """Components of the infinitesimal rotations ``v -> hat(e_i) v``."""
    return [[_linear({S2_COORDS[k]: E[i][k] for k in range(3)}) for i in range(3)] for E in HAT]


def projection() -> MappedSystem:
    """``(x, y) -> x`` pairing ``d_x -> d_x`` and ``d_y -> 0``."""
    R2 = euclidean(2, "R2", ("x", "y"))
    R1 = euclidean(1, "R1", ("x",))
    F0 = Family("plane", (_field("dx", R2, ["1", "0"]), _field("dy", R2, ["0", "1"])))
    F1 = Family("line", (_field("dx", R1, ["1"]), _field("zero", R1, ["0"])))
    phi = SmoothMap.from_strings("proj", R2, R1, ["x"])
    return MappedSystem("projection", phi, F0, F1, ((0, 0), (1, 1)))


def so3_s2() -> MappedSystem:
    """``g -> g n`` with ``n`` the north pole; fibers are the stabilizer circles."""
    G = rotation_group()
    S2 = sphere()
    F0 = Family("so3", tuple(_field(f"E{i + 1}", G, c) for i, c in enumerate(so3_fields_text())))
    F1 = Family("s2", tuple(_field(f"L{i + 1}", S2, c) for i, c in enumerate(s2_fields_text())))
    phi = SmoothMap.from_strings("orbit-map", G, S2, ["r13", "r23", "r33"])
    return MappedSystem("so3-s2", phi, F0, F1, ((0, 0), (1, 1), (2, 2)))


# f = A/(A+B): 0 on the closed left disk, 1 at distance >= 8 from its centre
_DL2 = "((x + 5)^2 + y^2)"
TWO_DISK_F = f"bump(2/(1 + {_DL2})) / (bump(2/(1 + {_DL2})) + bump({_DL2}/64))"


def two_disks() -> MappedSystem:
    """Inclusion of two unit disks centred at ``(-5, 0)`` and ``(5, 0)`` into R^2.

    Upstairs the fields are ``d_x`` and ``f d_y`` restricted to the disks,
    i.e. ``{d_x, 0}`` on the left disk and ``{d_x, d_y}`` on the right one;
    they are not complete.
    """
    M0 = Space.from_strings(
        "two-disks",
        ("x", "y"),
        domain=["bump((x + 5)^2 + y^2) + bump((x - 5)^2 + y^2)"],
        sampling_box=[(-6.0, 6.0), (-1.0, 1.0)],
    )
    M1 = euclidean(2, "R2", ("x", "y"))
    F0 = Family("disks", (_field("dx", M0, ["1", "0"], False), _field("f*dy", M0, ["0", TWO_DISK_F], False)))
    F1 = Family("plane", (_field("dx", M1, ["1", "0"]), _field("f*dy", M1, ["0", TWO_DISK_F])))
    phi = SmoothMap.from_strings("inclusion", M0, M1, ["x", "y"])
    return MappedSystem("two-disks", phi, F0, F1, ((0, 0), (1, 1)))


def identity_line() -> MappedSystem:
    """Identity of R with ``{d_x}`` on both sides; every fiber is one point."""
    R1 = euclidean(1, "R1", ("x",))
    F = Family("line", (_field("dx", R1, ["1"]),))
    return MappedSystem("identity", SmoothMap.from_strings("id", R1, R1, ["x"]), F, F, ((0, 0),))


def radius_squared() -> MappedSystem:
    """``(x, y) -> x^2 + y^2`` with ``{d_theta}`` upstairs and the zero field below."""
    F0 = rotation()
    R1 = euclidean(1, "R1", ("r",))
    F1 = Family("still", (_field("zero", R1, ["0"]),))
    phi = SmoothMap.from_strings("r2", F0.space, R1, ["x^2 + y^2"])
    return MappedSystem("radius", phi, F0, F1, ((0, 0),))
