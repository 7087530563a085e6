"""Basis encoders and decoders between fields and leading eigen-coefficients.

Inputs are encoded by inner products with ``w_1 .. w_{d_H}``; outputs are
snapshots of the Galerkin coefficients at one evaluation time truncated to
``d_Y`` entries.  Decoding is the finite sum ``sum_i a_i w_i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSet, periodic_grid
from .galerkin import Trajectory


@dataclass(frozen=True)
class InputCode:
    values: np.ndarray


@dataclass(frozen=True)
class OutputCode:
    values: np.ndarray
    eval_time: float


@dataclass(frozen=True)
class DecodedField:
    """``sum_i a_i w_i`` as coefficients over ``basis`` plus pointwise evaluation."""

    coeffs: np.ndarray
    basis: BasisSet

    def __call__(self, x) -> np.ndarray:
        values = self.basis.evaluate(x)
        return np.tensordot(self.coeffs, values, axes=1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


def encode_H(coeffs, d_H: int) -> InputCode:
    coeffs = np.asarray(coeffs, dtype=float)
    if d_H > coeffs.shape[-1]:
        raise ValueError(f"d_H={d_H} exceeds available coefficients {coeffs.shape[-1]}")
    return InputCode(coeffs[..., :d_H].copy())


def decode_H(code, basis: BasisSet) -> DecodedField:
    a = np.asarray(code.values if isinstance(code, InputCode) else code, dtype=float)
    if a.shape[-1] > len(basis):
        raise ValueError(f"code length {a.shape[-1]} exceeds basis size {len(basis)}")
    full = np.zeros(len(basis))
    full[: a.shape[-1]] = a
    return DecodedField(full, basis)


def required_resolution(basis: BasisSet) -> int:
    return basis.grid_hint


def encode_field(samples, basis: BasisSet, d_H: int) -> InputCode:
    """Trapezoid approximation of ``<x, w_i>`` for velocity samples on a periodic grid.

    ``samples`` has shape ``(n,)*d + (d,)`` on the grid from :func:`periodic_grid`.
    Exact for trigonometric polynomials with wave numbers below ``n/2``.
    """
    samples = np.asarray(samples, dtype=float)
    d = basis.dim
    n = samples.shape[0]
    if samples.shape != (n,) * d + (d,):
        raise ValueError(f"expected samples of shape {(n,) * d + (d,)}, got {samples.shape}")
    sub = basis.prefix(d_H)
    need = required_resolution(sub)
    if n < need:
        raise ValueError(f"grid with {n} points per axis is under-resolved; need at least {need}")
    modes = sub.evaluate(periodic_grid(d, n))
    weight = (2.0 * np.pi / n) ** d
    axes = tuple(range(1, d + 2))
    values = weight * np.sum(modes * samples[None], axis=axes)
    return InputCode(values)


def encode_Y(traj: Trajectory, t_star: float, d_Y: int) -> OutputCode:
    """Coefficients at ``t_star`` by linear interpolation between snapshots, first ``d_Y`` kept."""
    times = traj.times
    if not (0.0 < t_star <= times[-1]) or t_star < times[0]:
        raise ValueError(f"t_star={t_star} outside trajectory span (0, {times[-1]}]")
    if d_Y > traj.m:
        raise ValueError(f"d_Y={d_Y} exceeds trajectory basis size {traj.m}")
    return OutputCode(interpolate_snapshots(times, traj.snapshots, t_star)[..., :d_Y].copy(), float(t_star))


def interpolate_snapshots(times: np.ndarray, snaps: np.ndarray, t_star: float) -> np.ndarray:
    """Linear interpolation in time along the first axis of ``snaps``."""
    hit = np.nonzero(times == t_star)[0]
    if hit.size:
        return snaps[hit[0]].copy()
    i = int(np.searchsorted(times, t_star)) - 1
    i = min(max(i, 0), len(times) - 2)
    w = (t_star - times[i]) / (times[i + 1] - times[i])
    return (1.0 - w) * snaps[i] + w * snaps[i + 1]


def decode_Y(code, basis: BasisSet) -> DecodedField:
    b = code.values if isinstance(code, OutputCode) else code
    return decode_H(b, basis)


def projection_error(coeffs, d_H: int) -> float | np.ndarray:
    """Tail energy ``||x - Pi_{d_H} x||^2`` of a coefficient expansion (batched on leading axes)."""
    coeffs = np.asarray(coeffs, dtype=float)
    return np.sum(coeffs[..., d_H:] ** 2, axis=-1)


def y_norm_squared(times: np.ndarray, snaps: np.ndarray, eigenvalues: np.ndarray) -> float:
    """``int_0^T sum_k lambda_k d_k(t)^2 dt`` by the trapezoid rule over snapshots."""
    return float(np.trapezoid(snaps**2 @ eigenvalues, times, axis=0))
