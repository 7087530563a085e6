"""Galerkin truncation of incompressible Navier-Stokes in the Stokes eigenbasis.

The coefficient ODE is

    d/dt d_k = -nu * lambda_k * d_k - sum_{j,l} d_j d_l T[j, l, k],
    T[j, l, k] = int (w_j . grad) w_l . w_k dx,

with ``T`` assembled exactly from the triad rule for products of three
trigonometric factors and marched with classical RK4.
"""
from __future__ import annotations

import itertools
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import BasisSet, Trig, amplitude, canonicalize

TRAJECTORY_MAGIC = b"NSTRJ1"

# Fourier coefficients of each trig factor: f(theta) = sum_s c[s] * exp(i s theta)
_COEF = {
    (Trig.COS, False): {1: 0.5, -1: 0.5},
    (Trig.SIN, False): {1: -0.5j, -1: 0.5j},
    # derivatives: cos' = -sin, sin' = cos
    (Trig.COS, True): {1: 0.5j, -1: -0.5j},
    (Trig.SIN, True): {1: 0.5, -1: 0.5},
}


class IntegrationError(RuntimeError):
    """Non-finite state during time marching."""

    def __init__(self, step: int, rows=None):
        self.step = step
        self.rows = rows
        where = f" (rows {list(rows)})" if rows is not None else ""
        super().__init__(f"non-finite state at step {step}{where}")


def triple_trig_integral(d: int, waves, trigs, derivative: int) -> float:
    """Exact integral over ``[-pi, pi]^d`` of three trig factors ``f_i(k_i . x)``.

    ``derivative`` names the factor (0, 1 or 2) that is differentiated.
    """
    total = 0j
    coefs = [_COEF[(Trig(t), i == derivative)] for i, t in enumerate(trigs)]
    k = [np.asarray(w, dtype=np.int64) for w in waves]
    for s in itertools.product((1, -1), repeat=3):
        if np.any(s[0] * k[0] + s[1] * k[1] + s[2] * k[2]):
            continue
        total += coefs[0][s[0]] * coefs[1][s[1]] * coefs[2][s[2]]
    return float(total.real) * (2.0 * math.pi) ** d


@dataclass(frozen=True)
class StructureTensor:
    """Nonzero entries of ``T[j,l,k]``, stored sorted by ``(k, j, l)``."""

    m: int
    j: np.ndarray
    l: np.ndarray
    k: np.ndarray
    values: np.ndarray
    _targets: np.ndarray = field(repr=False, compare=False)
    _starts: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_entries(cls, m: int, entries: dict) -> "StructureTensor":
        keys = sorted(entries, key=lambda key: (key[2], key[0], key[1]))
        j, l, k = (np.array([key[i] for key in keys], dtype=np.int64) for i in range(3))
        values = np.array([entries[key] for key in keys], dtype=float)
        targets, starts = np.unique(k, return_index=True)
        return cls(m, j, l, k, values, targets, starts)

    @property
    def nnz(self) -> int:
        return len(self.values)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.m, self.m, self.m))
        out[self.j, self.l, self.k] = self.values
        return out

    def contract(self, d: np.ndarray) -> np.ndarray:
        """``N_k = sum_{j,l} d_j d_l T[j,l,k]`` for ``d`` of shape ``(m,)`` or ``(B, m)``."""
        out = np.zeros(d.shape)
        if self.nnz:
            prod = d[..., self.j] * d[..., self.l] * self.values
            out[..., self._targets] = np.add.reduceat(prod, self._starts, axis=-1)
        return out


def assemble_structure_tensor(basis: BasisSet) -> StructureTensor:
    m, d = len(basis), basis.dim
    amp3 = amplitude(d) ** 3
    by_wave: dict[tuple, list[int]] = {}
    for idx, mode in enumerate(basis.modes):
        by_wave.setdefault(mode.wave.components, []).append(idx)
    waves = basis.waves
    pols = basis.pols
    entries: dict[tuple[int, int, int], float] = {}
    for jj in range(m):
        for ll in range(m):
            coupling = float(pols[jj] @ waves[ll])
            if coupling == 0.0:
                continue
            targets = set()
            for sign in (1, -1):
                cand = waves[jj] + sign * waves[ll]
                if np.any(cand):
                    targets.add(canonicalize(cand).components)
            for key in targets:
                for kk in by_wave.get(key, ()):
                    # T[j,k,l] = -T[j,l,k]; compute each unordered {l,k} once
                    if kk <= ll:
                        continue
                    dot = float(pols[ll] @ pols[kk])
                    if dot == 0.0:
                        continue
                    integral = triple_trig_integral(
                        d, (waves[jj], waves[ll], waves[kk]),
                        (basis.trigs[jj], basis.trigs[ll], basis.trigs[kk]), derivative=1)
                    val = amp3 * dot * coupling * integral
                    if abs(val) < 1e-14:
                        continue
                    entries[(jj, ll, kk)] = val
                    entries[(jj, kk, ll)] = -val
    return StructureTensor.from_entries(m, entries)


@dataclass(frozen=True)
class SolverConfig:
    nu: float
    dt: float
    t_final: float
    snapshot_stride: int = 1
    stability_guard: bool = True

    def validate(self, basis: BasisSet | None = None) -> None:
        if self.nu <= 0:
            raise ValueError(f"viscosity must be positive, got {self.nu}")
        if self.dt <= 0 or self.t_final <= 0:
            raise ValueError("dt and t_final must be positive")
        if self.dt > self.t_final:
            raise ValueError(f"dt={self.dt} exceeds t_final={self.t_final}")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be a positive integer")
        if self.stability_guard and basis is not None:
            limit = 0.5 / (self.nu * basis.eigenvalues.max())
            if self.dt > limit:
                raise ValueError(f"dt={self.dt} exceeds stability limit {limit:.6g}")

    @property
    def n_steps(self) -> int:
        n = round(self.t_final / self.dt)
        if abs(n * self.dt - self.t_final) > 1e-9 * self.t_final:
            n = math.ceil(self.t_final / self.dt)
        return max(n, 1)

    def with_dt(self, dt: float) -> "SolverConfig":
        return SolverConfig(self.nu, dt, self.t_final, self.snapshot_stride, self.stability_guard)


@dataclass
class GalerkinState:
    t: float
    coeffs: np.ndarray


@dataclass
class Trajectory:
    basis_id: str
    times: np.ndarray
    snapshots: np.ndarray  # (n_snapshots, m)
    eigenvalues: np.ndarray

    @property
    def m(self) -> int:
        return self.snapshots.shape[1]

    @property
    def energy_series(self) -> np.ndarray:
        return 0.5 * np.sum(self.snapshots**2, axis=1)

    @property
    def dissipation_series(self) -> np.ndarray:
        return self.snapshots**2 @ self.eigenvalues

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]


def rhs(coeffs: np.ndarray, tensor: StructureTensor, eigenvalues: np.ndarray, nu: float) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != tensor.m:
        raise ValueError(f"coefficient length {coeffs.shape[-1]} does not match tensor size {tensor.m}")
    return -nu * eigenvalues * coeffs - tensor.contract(coeffs)


def snapshot_steps(cfg: SolverConfig) -> list[int]:
    n = cfg.n_steps
    steps = list(range(0, n + 1, cfg.snapshot_stride))
    if steps[-1] != n:
        steps.append(n)
    return steps


def integrate_batch(initial: np.ndarray, cfg: SolverConfig, tensor: StructureTensor,
                    basis: BasisSet) -> tuple[np.ndarray, np.ndarray]:
    """RK4 march of ``B`` initial states at once.

    Returns ``(times, snapshots)`` with snapshots shaped ``(n_snapshots, B, m)``.
    Rows do not interact, so each row matches a single-state solve.
    """
    cfg.validate(basis)
    y = np.array(initial, dtype=float, copy=True)
    if y.ndim == 1:
        y = y[None, :]
    lam = basis.eigenvalues
    if y.shape[1] != len(lam):
        raise ValueError(f"initial state has {y.shape[1]} coefficients, basis has {len(lam)}")
    n = cfg.n_steps
    h = cfg.t_final / n
    keep = snapshot_steps(cfg)
    snaps = np.empty((len(keep), y.shape[0], y.shape[1]))
    snaps[0] = y
    slot = 1
    decay = -cfg.nu * lam
    f = lambda z: decay * z - tensor.contract(z)  # noqa: E731
    # blow-up is detected below and reported with its step index
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, n + 1):
            k1 = f(y)
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not math.isfinite(y.sum()):
                bad = np.nonzero(~np.all(np.isfinite(y), axis=1))[0]
                raise IntegrationError(step, bad.tolist())
            if slot < len(keep) and keep[slot] == step:
                snaps[slot] = y
                slot += 1
    times = np.array([s * h for s in keep])
    times[-1] = cfg.t_final
    return times, snaps


def integrate(initial: GalerkinState | np.ndarray, cfg: SolverConfig, tensor: StructureTensor,
              basis: BasisSet) -> Trajectory:
    coeffs = initial.coeffs if isinstance(initial, GalerkinState) else initial
    try:
        times, snaps = integrate_batch(np.asarray(coeffs)[None, :], cfg, tensor, basis)
    except IntegrationError as err:
        raise IntegrationError(err.step) from None
    return Trajectory(basis.basis_id, times, snaps[:, 0, :], basis.eigenvalues)


def project_initial(full_coeffs, m: int) -> GalerkinState:
    """Galerkin projection of the initial datum: keep the first ``m`` coefficients.

    Shorter inputs are zero-padded, which is the low-dimensional case.
    """
    full = np.asarray(full_coeffs, dtype=float)
    out = np.zeros(m)
    n = min(m, len(full))
    out[:n] = full[:n]
    return GalerkinState(0.0, out)


def write_trajectory(path, traj: Trajectory, sidecar: dict | None = None) -> None:
    path = Path(path)
    n_snap, m = traj.snapshots.shape
    with open(path, "wb") as fh:
        fh.write(TRAJECTORY_MAGIC)
        fh.write(struct.pack("<II", m, n_snap))
        fh.write(np.ascontiguousarray(traj.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(traj.snapshots, dtype="<f8").tobytes())
    if sidecar is not None:
        meta = dict(sidecar)
        meta.update(basis_id=traj.basis_id,
                    energy=traj.energy_series.tolist(),
                    dissipation=traj.dissipation_series.tolist())
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_trajectory(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(times, snapshots)`` from a trajectory file."""
    raw = Path(path).read_bytes()
    if raw[:6] != TRAJECTORY_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:6]!r}")
    m, n_snap = struct.unpack("<II", raw[6:14])
    expected = 14 + 8 * (n_snap + n_snap * m)
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    times = np.frombuffer(raw, dtype="<f8", count=n_snap, offset=14).astype(float)
    snaps = np.frombuffer(raw, dtype="<f8", offset=14 + 8 * n_snap).reshape(n_snap, m).astype(float)
    return times, snaps
