"""Divergence-free trigonometric eigenbasis of the Stokes operator on the torus.

Each retained wave vector ``k`` (one representative of ``{k, -k}``) yields the
real modes ``A * beta * cos(k.x)`` and ``A * beta * sin(k.x)`` for every unit
polarization ``beta`` orthogonal to ``k``.  With ``A = sqrt(2 / (2 pi)^d)`` the
modes are orthonormal in L2([-pi, pi]^d) and satisfy ``-lap w = |k|^2 w``.
Because ``k = 0`` never appears, every mode has zero mean.
"""
from __future__ import annotations

import enum
import hashlib
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class Trig(enum.IntEnum):
    COS = 0
    SIN = 1


@dataclass(frozen=True, order=True)
class WaveVector:
    components: tuple[int, ...]

    def __post_init__(self):
        if not any(self.components):
            raise ValueError("wave vector must be nonzero")
        first = next(c for c in self.components if c != 0)
        if first < 0:
            raise ValueError(f"wave vector {self.components} is not canonical")

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def norm2(self) -> int:
        return sum(c * c for c in self.components)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.components, dtype=float)


def canonicalize(k) -> WaveVector:
    """Return the representative of ``{k, -k}`` whose first nonzero entry is positive."""
    comps = tuple(int(c) for c in k)
    if not any(comps):
        raise ValueError("cannot canonicalize the zero wave vector")
    first = next(c for c in comps if c != 0)
    if first < 0:
        comps = tuple(-c for c in comps)
    return WaveVector(comps)


def polarizations(k: WaveVector, d: int | None = None) -> list[np.ndarray]:
    """Unit vectors orthogonal to ``k``.

    2D gives the single rotated vector ``(-k2, k1)/|k|``.  3D crosses ``k`` with
    the coordinate axis least aligned with it (lowest index on ties), then
    crosses again to complete the orthonormal pair.
    """
    d = k.dim if d is None else d
    if d != k.dim:
        raise ValueError(f"wave vector has dimension {k.dim}, expected {d}")
    kv = k.as_array()
    if d == 2:
        perp = np.array([-kv[1], kv[0]])
        return [perp / np.linalg.norm(perp) + 0.0]  # + 0.0 clears negative zeros
    if d == 3:
        axis = np.zeros(3)
        axis[int(np.argmin(np.abs(kv)))] = 1.0
        b1 = np.cross(kv, axis)
        b1 /= np.linalg.norm(b1)
        b2 = np.cross(kv, b1)
        b2 /= np.linalg.norm(b2)
        return [b1 + 0.0, b2 + 0.0]
    raise ValueError(f"unsupported dimension {d}")


def amplitude(d: int) -> float:
    return math.sqrt(2.0 / (2.0 * math.pi) ** d)


@dataclass(frozen=True)
class BasisMode:
    wave: WaveVector
    trig: Trig
    polarization: np.ndarray = field(compare=False)
    pol_index: int
    ordinal: int

    @property
    def dim(self) -> int:
        return self.wave.dim

    @property
    def eigenvalue(self) -> int:
        return self.wave.norm2

    @property
    def amplitude(self) -> float:
        return amplitude(self.dim)


def evaluate_mode(mode: BasisMode, x) -> np.ndarray:
    """Velocity of ``mode`` at points ``x`` of shape ``(..., d)``; returns ``(..., d)``.

    Points outside ``[-pi, pi]^d`` are handled by periodicity of the trig factor.
    """
    x = np.asarray(x, dtype=float)
    phase = x @ mode.wave.as_array()
    trig = np.cos(phase) if mode.trig is Trig.COS else np.sin(phase)
    return mode.amplitude * trig[..., None] * mode.polarization


def _shells(d: int):
    """Yield lists of canonical wave vectors grouped by |k|^2, ascending."""
    radius = 1
    emitted = 0
    while True:
        # every vector with |k|^2 <= radius^2 has all |k_i| <= radius
        found: dict[int, list[WaveVector]] = {}
        for comps in itertools.product(range(-radius, radius + 1), repeat=d):
            if not any(comps):
                continue
            n2 = sum(c * c for c in comps)
            if n2 <= emitted or n2 > radius * radius:
                continue
            wv = canonicalize(comps)
            if wv.components == comps:
                found.setdefault(n2, []).append(wv)
        for n2 in sorted(found):
            yield n2, sorted(found[n2])
        emitted = radius * radius
        radius += 1


@dataclass(frozen=True)
class BasisSet:
    dim: int
    modes: tuple[BasisMode, ...]

    def __len__(self) -> int:
        return len(self.modes)

    def __getitem__(self, i) -> BasisMode:
        return self.modes[i]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.array([m.eigenvalue for m in self.modes], dtype=float)

    @cached_property
    def waves(self) -> np.ndarray:
        """Integer wave vectors, shape ``(m, d)``."""
        return np.array([m.wave.components for m in self.modes], dtype=np.int64).reshape(-1, self.dim)

    @cached_property
    def pols(self) -> np.ndarray:
        return np.array([m.polarization for m in self.modes]).reshape(-1, self.dim)

    @cached_property
    def trigs(self) -> np.ndarray:
        return np.array([int(m.trig) for m in self.modes], dtype=np.int64)

    @property
    def max_wavenumber(self) -> int:
        """Largest absolute wave-vector component over all modes."""
        return int(np.abs(self.waves).max()) if len(self) else 0

    @property
    def grid_hint(self) -> int:
        """Per-axis points for which periodic trapezoid integrates w_i . w_j exactly."""
        return 2 * self.max_wavenumber + 1

    def prefix(self, m: int) -> "BasisSet":
        if m > len(self):
            raise ValueError(f"basis has {len(self)} modes, asked for {m}")
        return BasisSet(self.dim, self.modes[:m])

    def evaluate(self, x) -> np.ndarray:
        """All mode values at points ``x`` of shape ``(..., d)``: returns ``(m, ..., d)``."""
        x = np.asarray(x, dtype=float)
        phase = np.tensordot(self.waves.astype(float), x, axes=([1], [x.ndim - 1]))
        trig = np.where(
            self.trigs.reshape((-1,) + (1,) * (phase.ndim - 1)) == Trig.COS,
            np.cos(phase), np.sin(phase))
        pol = self.pols.reshape((len(self),) + (1,) * (phase.ndim - 1) + (self.dim,))
        return amplitude(self.dim) * trig[..., None] * pol

    def manifest_lines(self) -> list[str]:
        lines = []
        for mode in self.modes:
            k = " ".join(str(c) for c in mode.wave.components)
            beta = " ".join(f"{b:.17g}" for b in mode.polarization)
            lines.append(f"{mode.ordinal} {k} {mode.trig.name.lower()} {beta} {mode.eigenvalue}")
        return lines

    @cached_property
    def basis_id(self) -> str:
        digest = hashlib.sha256("\n".join(self.manifest_lines()).encode()).hexdigest()[:12]
        return f"d{self.dim}-m{len(self)}-{digest}"


def build_basis(d: int, m: int) -> BasisSet:
    """First ``m`` modes ordered by eigenvalue, then wave vector, cos before sin, polarization."""
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    if m < 1:
        raise ValueError(f"mode count must be positive, got {m}")
    modes: list[BasisMode] = []
    for _, waves in _shells(d):
        for wv in waves:
            betas = polarizations(wv, d)
            for trig in (Trig.COS, Trig.SIN):
                for p, beta in enumerate(betas):
                    if len(modes) == m:
                        return BasisSet(d, tuple(modes))
                    modes.append(BasisMode(wv, trig, beta, p, len(modes) + 1))
        if len(modes) == m:
            return BasisSet(d, tuple(modes))


def periodic_grid(d: int, n: int) -> np.ndarray:
    """Uniform periodic grid on ``[-pi, pi)^d`` with ``n`` points per axis, shape ``(n,)*d + (d,)``."""
    axis = -np.pi + 2.0 * np.pi * np.arange(n) / n
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack(mesh, axis=-1)
