"""Measured reports for the inequalities satisfied by Galerkin trajectories and learned operators.

Nothing here raises on a violated inequality: each check returns a report
carrying both sides, the verdict and any constants calibrated from data.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .basis import BasisSet, build_basis
from .codec import projection_error
from .dataset import Distribution, SampleSpec, _fit, sample_many, solve_outputs
from .galerkin import SolverConfig, StructureTensor, Trajectory, assemble_structure_tensor, integrate_batch

STEP_TOL = 1e-3


@dataclass
class EnergyReport:
    initial_energy: float
    sup_energy: float
    dissipation_integral: float
    sup_ok: bool
    dissipation_ok: bool
    stepwise_violations: int
    rel_tol: float

    @property
    def ok(self) -> bool:
        return self.sup_ok and self.dissipation_ok and self.stepwise_violations == 0


def check_energy(traj: Trajectory, nu: float, rel_tol: float = 1e-6,
                 initial_energy: float | None = None) -> EnergyReport:
    """Sup-energy bound, integrated dissipation bound and the per-interval energy drop.

    ``initial_energy`` defaults to the energy of the first snapshot; pass
    ``0.5 * ||u_0||^2`` of an unprojected datum to test against it instead.
    """
    energy = traj.energy_series
    diss = traj.dissipation_series
    e0 = float(energy[0]) if initial_energy is None else float(initial_energy)
    sup = float(energy.max())
    integral = nu * float(np.trapezoid(diss, traj.times))
    slack = rel_tol * e0
    dt = np.diff(traj.times)
    drop = energy[1:] - energy[:-1]
    allowed = -nu * dt * (1 - STEP_TOL) * np.minimum(diss[1:], diss[:-1])
    stepwise = int(np.sum(drop > allowed + 1e-15 * max(e0, 1e-300)))
    return EnergyReport(e0, sup, integral, sup <= e0 + slack, integral <= e0 + slack, stepwise, rel_tol)


@dataclass
class LipschitzReport:
    dimension: int
    m: int
    pair_count: int
    skipped: int
    exponent: float
    ratios: list[float]
    final_h_ratio_sq: list[float]
    envelopes: list[float]
    required_C: list[float]
    calibrated_C: float
    C: float
    max_ratio: float
    violations: int


def gradient_norms(snaps: np.ndarray, eigenvalues: np.ndarray) -> np.ndarray:
    """``||grad u(t)||`` per snapshot (the V-seminorm ``sqrt(sum lambda_k d_k^2)``)."""
    return np.sqrt(np.maximum(snaps**2 @ eigenvalues, 0.0))


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    inc = 0.5 * (y[1:] + y[:-1]) * np.diff(t).reshape((-1,) + (1,) * (y.ndim - 1))
    out[1:] = np.cumsum(inc, axis=0)
    return out


def empirical_lipschitz(u0: np.ndarray, v0: np.ndarray, cfg: SolverConfig, basis: BasisSet,
                        C: float | None = None, tensor: StructureTensor | None = None,
                        rel_tol: float = 1e-9) -> LipschitzReport:
    """Difference growth of paired solves against the Gronwall envelope.

    For each pair, ``||h(t)||^2 <= ||h_0||^2 exp(C int_0^t ||grad u||^p)`` with
    ``p = 4/(4-d)`` is tested at every snapshot.  ``required_C`` is the smallest
    constant that makes the pair satisfy it; ``calibrated_C`` is their maximum and
    is used when ``C`` is not given.
    """
    tensor = tensor or assemble_structure_tensor(basis)
    u0 = np.atleast_2d(np.asarray(u0, float))
    v0 = np.atleast_2d(np.asarray(v0, float))
    m, d = len(basis), basis.dim
    u0, v0 = _fit(u0, m), _fit(v0, m)
    p = 4.0 / (4.0 - d)
    h0 = np.linalg.norm(u0 - v0, axis=1)
    keep = h0 > 0
    skipped = int(np.sum(~keep))
    u0, v0, h0 = u0[keep], v0[keep], h0[keep]
    n = u0.shape[0]
    times, snaps = integrate_batch(np.concatenate([u0, v0]), cfg, tensor, basis)
    su, sv = snaps[:, :n], snaps[:, n:]
    lam = basis.eigenvalues
    hs = su - sv  # (n_snap, n, m)
    hnorm2 = np.sum(hs**2, axis=2)
    growth = _cumtrapz(gradient_norms(su, lam) ** p, times)  # (n_snap, n)
    y_norm = np.sqrt(np.trapezoid(hs**2 @ lam, times, axis=0))
    log_ratio = np.log(np.maximum(hnorm2, 1e-300) / h0**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where((log_ratio > 0) & (growth > 0), log_ratio / growth, 0.0)
    required = need[1:].max(axis=0) if len(times) > 1 else np.zeros(n)
    calibrated = float(required.max()) if n else 0.0
    used = calibrated if C is None else float(C)
    envelope = h0**2 * np.exp(used * growth)
    violated = np.any(hnorm2 > envelope * (1 + rel_tol), axis=0)
    ratios = y_norm / h0
    return LipschitzReport(
        dimension=d, m=m, pair_count=n, skipped=skipped, exponent=p,
        ratios=ratios.tolist(), final_h_ratio_sq=(hnorm2[-1] / h0**2).tolist(),
        envelopes=np.exp(used * growth[-1]).tolist(), required_C=required.tolist(),
        calibrated_C=calibrated, C=used, max_ratio=float(ratios.max()) if n else 0.0,
        violations=int(np.sum(violated)))


def lipschitz_pairs(spec: SampleSpec, n_pairs: int) -> tuple[np.ndarray, np.ndarray]:
    a = sample_many(spec, range(2 * n_pairs))
    return a[0::2], a[1::2]


@dataclass
class LipschitzSweep:
    dimension: int
    ms: list[int]
    calibrated_C: list[float]
    eigenvalue_max: list[float]
    drift: float
    max_ratios: list[float]


def lipschitz_m_sweep(spec: SampleSpec, ms, n_pairs: int, cfg: SolverConfig) -> LipschitzSweep:
    """Calibrated envelope constant across Galerkin orders for a fixed set of pairs."""
    u0, v0 = lipschitz_pairs(spec, n_pairs)
    cs, lam, ratios = [], [], []
    for m in ms:
        basis = build_basis(spec.dim, m)
        rep = empirical_lipschitz(u0, v0, cfg, basis)
        cs.append(rep.calibrated_C)
        lam.append(float(basis.eigenvalues[-1]))
        ratios.append(rep.max_ratio)
    lo, hi = min(cs), max(cs)
    drift = (hi - lo) / lo if lo > 0 else (0.0 if hi == 0 else math.inf)
    return LipschitzSweep(spec.dim, list(ms), cs, lam, drift, ratios)


def directional_ratios(u0: np.ndarray, direction: np.ndarray, eps_list, cfg: SolverConfig,
                       basis: BasisSet, tensor: StructureTensor | None = None) -> list[float]:
    """``||h(T)|| / ||h_0||`` for perturbations ``eps * direction`` of ``u0``."""
    tensor = tensor or assemble_structure_tensor(basis)
    m = len(basis)
    base = _fit(np.atleast_2d(u0), m)[0]
    dirn = _fit(np.atleast_2d(direction), m)[0]
    starts = np.array([base] + [base + e * dirn for e in eps_list])
    _, snaps = integrate_batch(starts, cfg, tensor, basis)
    fin = snaps[-1]
    return [float(np.linalg.norm(fin[i + 1] - fin[0]) / (e * np.linalg.norm(dirn)))
            for i, e in enumerate(eps_list)]


@dataclass
class ProjectionDecayReport:
    d_H_values: list[int]
    N_values: list[int]
    replicates: int
    Pr_exact: list[float]
    Pr_N: dict  # N -> list over d_H (first replicate)
    mean_abs_deviation: dict  # N -> list over d_H
    fit_d_H: int
    fit_exponent: float
    fitted_Q_H: float
    nonincreasing_in_d_H: bool


def exact_projection_error(spec: SampleSpec, d_H: int) -> float:
    """``E ||x - Pi_{d_H} x||^2`` for the sampling distribution of ``spec``."""
    tail = max(spec.D - d_H, 0)
    per_coord = spec.R**2 / (3 * spec.D) if spec.distribution is Distribution.UNIFORM_BOX else spec.R**2 / spec.D
    return tail * per_coord


def projection_decay(spec: SampleSpec, N_values, d_H_values, replicates: int = 16,
                     fit_d_H: int | None = None) -> ProjectionDecayReport:
    """Empirical projection errors over independent sample sets and an ``N``-power fit.

    Replicate ``r`` of size ``N`` uses record indices disjoint from every other
    replicate, so the sets are independent draws.
    """
    N_values = [int(n) for n in N_values]
    d_H_values = sorted(int(d) for d in d_H_values)
    exact = [exact_projection_error(spec, d) for d in d_H_values]
    pr_first, mad = {}, {}
    offset = 0
    monotone = True
    for N in N_values:
        devs = []
        for r in range(replicates):
            a = sample_many(spec, range(offset, offset + N))
            offset += N
            pr = [float(np.mean(projection_error(a, d))) for d in d_H_values]
            monotone &= all(x >= y for x, y in zip(pr, pr[1:]))
            if r == 0:
                pr_first[N] = pr
            devs.append([abs(p - e) for p, e in zip(pr, exact)])
        mad[N] = np.mean(devs, axis=0).tolist()
    if fit_d_H is None:
        fit_d_H = next((d for d, e in zip(d_H_values, exact) if e > 0), d_H_values[0])
    col = d_H_values.index(fit_d_H)
    y = np.array([mad[N][col] for N in N_values])
    if np.all(y > 0) and len(N_values) > 1:
        slope = float(np.polyfit(np.log(N_values), np.log(y), 1)[0])
    else:
        slope = float("nan")
    q = max((N * max(pr_first[N][col] - exact[col], 0.0) ** 2 / fit_d_H for N in N_values), default=0.0)
    return ProjectionDecayReport(d_H_values, N_values, replicates, exact,
                                 {str(k): v for k, v in pr_first.items()},
                                 {str(k): v for k, v in mad.items()},
                                 fit_d_H, slope, float(q), bool(monotone))


@dataclass
class OperatorErrorReport:
    n_test: int
    total: float
    network_term: float
    projection_term: float
    bound: float
    zero_baseline: float
    total_stderr: float
    identity_ok: bool
    relative_error: float = field(init=False)

    def __post_init__(self):
        self.relative_error = self.total / self.zero_baseline if self.zero_baseline > 0 else math.nan


def exact_code_map(basis: BasisSet, cfg: SolverConfig, d_Y: int, t_star: float,
                   tensor: StructureTensor | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """``a -> P^{d_Y} Psi^m D^{d_H}(a)``: the map a perfect network would realise."""
    tensor = tensor or assemble_structure_tensor(basis)

    def oracle(a):
        a = np.atleast_2d(np.asarray(a, float))
        out, _ = solve_outputs(_fit(a, len(basis)), cfg, tensor, basis, t_star)
        return out[:, :d_Y]

    return oracle


def evaluate_operator(predict: Callable[[np.ndarray], np.ndarray], spec: SampleSpec, cfg: SolverConfig,
                      basis: BasisSet, d_H: int, d_Y: int, t_star: float | None = None,
                      n_test: int = 200, tensor: StructureTensor | None = None,
                      first_index: int = 0) -> OperatorErrorReport:
    """Test-set squared code error of ``R o predict o E`` against reference solves.

    ``total = mean ||pad(G(E x)) - Psi(x)(t*)||^2`` splits into the network term
    ``mean ||G(E x) - psi(E x)||^2`` and the projection term
    ``mean ||pad(psi(E x)) - Psi(x)(t*)||^2``; ``total <= 2 I + 2 II`` holds per sample.
    Test records are ``first_index .. first_index + n_test - 1`` of ``spec``.
    """
    t_star = cfg.t_final if t_star is None else t_star
    tensor = tensor or assemble_structure_tensor(basis)
    m = len(basis)
    a = sample_many(spec, range(first_index, first_index + n_test))
    x_full = _fit(a, m)
    x_enc = _fit(a, d_H)
    reference, _ = solve_outputs(x_full, cfg, tensor, basis, t_star)
    projected, _ = solve_outputs(_fit(x_enc, m), cfg, tensor, basis, t_star)
    psi = projected[:, :d_Y]
    pred = np.asarray(predict(x_enc), float).reshape(n_test, d_Y)
    total_i = np.sum((_fit(pred, m) - reference) ** 2, axis=1)
    net_i = np.sum((pred - psi) ** 2, axis=1)
    proj_i = np.sum((_fit(psi, m) - reference) ** 2, axis=1)
    total, net, proj = float(total_i.mean()), float(net_i.mean()), float(proj_i.mean())
    bound = 2 * net + 2 * proj
    stderr = float(total_i.std(ddof=1) / math.sqrt(n_test)) if n_test > 1 else 0.0
    baseline = float(np.mean(np.sum(reference**2, axis=1)))
    return OperatorErrorReport(n_test, total, net, proj, bound, baseline, stderr,
                               bool(total <= bound + 1e-12 * max(1.0, bound)))


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        obj = dataclasses.asdict(obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def write_csv(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
