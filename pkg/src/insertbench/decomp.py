"""Sphere-based collision decomposition of cylindrical pegs and bores.

Sphere centers sit exactly on the nominal surface. The simulator treats the
center as the effective surface point, so the sphere radius only sets the
contact patch size and broad-phase margins. Roughness moves centers along
their surface normals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ValidationError, as_generator

GAUSSIAN = "gaussian"
UNIFORM = "uniform"


class SphereSetParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, eq=False)
class SphereSet:
    centers: np.ndarray
    radii: np.ndarray
    frame: str = "peg"
    normals: np.ndarray | None = field(default=None)

    def __post_init__(self):
        c = np.array(self.centers, dtype=float).reshape(-1, 3)
        r = np.array(self.radii, dtype=float).reshape(-1)
        if c.shape[0] < 1:
            raise ValidationError("a sphere set needs at least one sphere")
        if r.shape[0] != c.shape[0]:
            raise ValidationError("one radius per center is required")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(r))):
            raise ValidationError("sphere set contains non-finite values")
        if np.any(r <= 0):
            raise ValidationError("all radii must be > 0")
        c.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)
        if self.normals is not None:
            n = np.array(self.normals, dtype=float).reshape(-1, 3)
            if n.shape != c.shape:
                raise ValidationError("one normal per sphere is required")
            n.setflags(write=False)
            object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return self.centers.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SphereSet):
            return NotImplemented
        return (
            self.frame == other.frame
            and np.array_equal(self.centers, other.centers)
            and np.array_equal(self.radii, other.radii)
        )


@dataclass(frozen=True)
class CylinderSpec:
    """Cylinder along +z with its bottom face centred on the origin."""

    radius: float
    height: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError("cylinder radius must be > 0")
        if not self.height > 0:
            raise ValidationError("cylinder height must be > 0")


@dataclass(frozen=True)
class RoughnessSpec:
    Ra: float = 0.0
    distribution: str = GAUSSIAN

    def __post_init__(self):
        if not self.Ra >= 0:
            raise ValidationError("Ra must be >= 0")
        if self.distribution not in (GAUSSIAN, UNIFORM):
            raise ValidationError(f"distribution must be {GAUSSIAN!r} or {UNIFORM!r}")


def _helical_lattice(radius: float, height: float, count: int):
    """Angles and heights of a single helix wound so that the spacing along
    the helix matches the spacing between turns."""
    if count == 1:
        return np.zeros(1), np.zeros(1)
    z = height * np.arange(count) / (count - 1)
    # points per turn m so that 2 pi r / m == m * dz
    dz = height / (count - 1)
    m = math.sqrt(2.0 * math.pi * radius / dz)
    m = max(m, 3.0)
    phi = 2.0 * math.pi * np.arange(count) / m
    return phi, z


def decompose_cylinder_lateral(spec: CylinderSpec, count: int, sphere_radius: float, rng=None) -> SphereSet:
    """Place `count` spheres on the lateral surface of the cylinder.

    The lattice is deterministic, so `rng` is accepted only for interface
    symmetry with the other generators. The first sphere sits on the bottom
    rim and the last on the top rim. Normals point radially outward.
    """
    if int(count) < 1:
        raise ValidationError("count must be >= 1")
    if not sphere_radius > 0:
        raise ValidationError("sphere_radius must be > 0")
    phi, z = _helical_lattice(spec.radius, spec.height, int(count))
    normals = np.column_stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)])
    centers = np.column_stack([spec.radius * normals[:, 0], spec.radius * normals[:, 1], z])
    return SphereSet(centers, np.full(len(z), float(sphere_radius)), "peg", normals)


def hole_surface_spheres(bore_radius: float, depth: float, count: int, sphere_radius: float, rng=None) -> SphereSet:
    """Tile the inner wall of a bore whose top opening lies in the z=0 plane
    and whose floor is at z=-depth. Normals point toward the bore axis, i.e.
    out of the hole material into the cavity."""
    if int(count) < 1:
        raise ValidationError("count must be >= 1")
    if not (bore_radius > 0 and depth >= 0):
        raise ValidationError("bore_radius must be > 0 and depth >= 0")
    if not sphere_radius > 0:
        raise ValidationError("sphere_radius must be > 0")
    if depth == 0:
        phi = 2.0 * math.pi * np.arange(int(count)) / int(count)
        z = np.zeros(int(count))
    else:
        phi, z = _helical_lattice(bore_radius, depth, int(count))
        z = -z
    radial = np.column_stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)])
    centers = np.column_stack([bore_radius * radial[:, 0], bore_radius * radial[:, 1], z])
    return SphereSet(centers, np.full(len(z), float(sphere_radius)), "hole", -radial)


def roughness_offsets(spec: RoughnessSpec, n: int, rng) -> np.ndarray:
    """Signed normal offsets with E|delta| = Ra."""
    gen = as_generator(rng)
    if spec.Ra == 0:
        return np.zeros(n)
    if spec.distribution == GAUSSIAN:
        return gen.normal(0.0, spec.Ra * math.sqrt(math.pi / 2.0), n)
    return gen.uniform(-2.0 * spec.Ra, 2.0 * spec.Ra, n)


def apply_roughness(spheres: SphereSet, spec: RoughnessSpec, surface_normals=None, rng=0) -> SphereSet:
    """Displace every center along its surface normal by a random offset."""
    normals = spheres.normals if surface_normals is None else np.asarray(surface_normals, dtype=float)
    if normals is None:
        raise ValidationError("surface normals are required")
    normals = normals.reshape(-1, 3)
    if normals.shape[0] != len(spheres):
        raise ValidationError(f"expected {len(spheres)} normals, got {normals.shape[0]}")
    if not np.allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-9):
        raise ValidationError("surface normals must be unit length")
    if spec.Ra == 0:
        return spheres
    delta = roughness_offsets(spec, len(spheres), rng)
    centers = spheres.centers + delta[:, None] * normals
    return SphereSet(centers, spheres.radii, spheres.frame, normals)


def save_sphere_set(spheres: SphereSet, path) -> None:
    lines = [f"# frame: {spheres.frame}"]
    for c, r in zip(spheres.centers.tolist(), spheres.radii.tolist()):
        lines.append(f"{c[0]!r},{c[1]!r},{c[2]!r},{r!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_sphere_set(path, frame: str | None = None) -> SphereSet:
    """Read `cx,cy,cz,radius` records (meters). Lines starting with '#' are
    comments; `# frame: <name>` sets the body identifier."""
    text = Path(path).read_text(encoding="utf-8")
    found_frame = None
    centers, radii = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.lower().startswith("frame:"):
                found_frame = body.split(":", 1)[1].strip()
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise SphereSetParseError(f"expected 4 comma-separated values, got {len(parts)}", lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise SphereSetParseError(f"non-numeric value in {line!r}", lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise SphereSetParseError("non-finite value", lineno)
        if vals[3] <= 0:
            raise SphereSetParseError("radius must be > 0", lineno)
        centers.append(vals[:3])
        radii.append(vals[3])
    if not centers:
        raise SphereSetParseError("file contains no spheres", 1 if not text else len(text.splitlines()))
    return SphereSet(np.array(centers), np.array(radii), frame or found_frame or "imported")
