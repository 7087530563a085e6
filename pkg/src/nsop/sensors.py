"""Sensor grids on ``[-pi, pi]^3``, trilinear reconstruction of basis modes and sensor counts.

A grid with ``n`` points per axis (both faces included) holds ``n^3`` sensors.
The trilinear interpolant ``T_m w`` of a mode is compared with ``w`` on a
dense probe grid to measure ``kappa``; the Galerkin coefficients of ``T_m w``
are computed exactly from the Fourier transform of the 1D hat functions.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .basis import BasisMode, BasisSet, Trig, amplitude, build_basis, evaluate_mode
from .dataset import SampleSpec, _fit, sample_many, solve_outputs
from .galerkin import SolverConfig, assemble_structure_tensor
from .network import MlpArchitecture, TrainConfig, forward, train


@dataclass(frozen=True)
class SensorGrid:
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need at least 2 points per axis, got {self.n}")

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-np.pi, np.pi, self.n)

    @property
    def spacing(self) -> float:
        return 2.0 * np.pi / (self.n - 1)

    @property
    def sensor_count(self) -> int:
        return self.n**3

    @property
    def m(self) -> int:
        """Index of the last sensor: sensors are ``x_0 .. x_m``."""
        return self.n**3 - 1

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, 3)


def _wrap(x: np.ndarray) -> np.ndarray:
    """Map coordinates into ``[-pi, pi]``, leaving values already inside untouched."""
    out = np.asarray(x, dtype=float)
    outside = (out < -np.pi) | (out > np.pi)
    if np.any(outside):
        out = out.copy()
        out[outside] = np.mod(out[outside] + np.pi, 2 * np.pi) - np.pi
    return out


def trilinear(values: np.ndarray, grid: SensorGrid, x) -> np.ndarray:
    """Trilinear interpolation of ``values`` (shape ``(n, n, n, ...)``) at points ``x`` ``(..., 3)``."""
    x = _wrap(np.asarray(x, dtype=float))
    pos = (x + np.pi) / grid.spacing
    idx = np.clip(np.floor(pos).astype(int), 0, grid.n - 2)
    frac = pos - idx
    out = 0.0
    for corner in itertools.product((0, 1), repeat=3):
        weight = np.ones(x.shape[:-1])
        for a, c in enumerate(corner):
            weight = weight * (frac[..., a] if c else 1.0 - frac[..., a])
        vals = values[idx[..., 0] + corner[0], idx[..., 1] + corner[1], idx[..., 2] + corner[2]]
        out = out + weight.reshape(weight.shape + (1,) * (vals.ndim - weight.ndim)) * vals
    return out


def interp_matrix(grid: SensorGrid, probe: np.ndarray) -> np.ndarray:
    """1D linear-interpolation weights from grid nodes to ``probe`` points, shape ``(P, n)``."""
    pos = (_wrap(probe) + np.pi) / grid.spacing
    idx = np.clip(np.floor(pos).astype(int), 0, grid.n - 2)
    frac = pos - idx
    mat = np.zeros((len(probe), grid.n))
    rows = np.arange(len(probe))
    mat[rows, idx] += 1.0 - frac
    mat[rows, idx + 1] += frac
    return mat


def trilinear_on_grid(values: np.ndarray, grid: SensorGrid, probe_axis: np.ndarray) -> np.ndarray:
    """Trilinear interpolant on the tensor probe grid ``probe_axis^3`` by axis-wise 1D passes."""
    mat = interp_matrix(grid, probe_axis)
    out = np.tensordot(mat, values, axes=([1], [0]))
    out = np.moveaxis(np.tensordot(mat, out, axes=([1], [1])), 0, 1)
    out = np.moveaxis(np.tensordot(mat, out, axes=([1], [2])), 0, 2)
    return out


@dataclass
class InterpolatedMode:
    ordinal: int
    grid: SensorGrid
    sensor_values: np.ndarray  # (n, n, n, 3)

    def __call__(self, x) -> np.ndarray:
        return trilinear(self.sensor_values, self.grid, x)


def interpolate_mode(mode, grid: SensorGrid) -> InterpolatedMode:
    """Sample ``mode`` (a :class:`BasisMode` or a callable of points) at the sensors."""
    pts = grid.points
    vals = evaluate_mode(mode, pts) if isinstance(mode, BasisMode) else np.asarray(mode(pts), float)
    ordinal = mode.ordinal if isinstance(mode, BasisMode) else 0
    return InterpolatedMode(ordinal, grid, vals.reshape(grid.n, grid.n, grid.n, -1))


def probe_axis(resolution: int) -> np.ndarray:
    return np.linspace(-np.pi, np.pi, resolution)


@dataclass
class KappaReport:
    D: int
    n: int
    m: int
    probe: int
    per_mode: list[float]
    kappa: float


@lru_cache(maxsize=256)
def _kappa_cached(D: int, n: int, probe: int) -> tuple[float, ...]:
    basis = build_basis(3, D)
    grid = SensorGrid(n)
    pa = probe_axis(probe)
    mesh = np.stack(np.meshgrid(pa, pa, pa, indexing="ij"), axis=-1)
    devs = []
    for mode in basis.modes:
        sensors = interpolate_mode(mode, grid).sensor_values
        approx = trilinear_on_grid(sensors, grid, pa)
        exact = evaluate_mode(mode, mesh)
        devs.append(float(np.sqrt(np.sum((exact - approx) ** 2, axis=-1)).max()))
    return tuple(devs)


def kappa(D: int, grid: SensorGrid | int, probe: int = 64) -> KappaReport:
    """Worst pointwise Euclidean deviation ``|w_i - T_m w_i|`` over the first ``D`` modes."""
    grid = grid if isinstance(grid, SensorGrid) else SensorGrid(int(grid))
    if probe <= grid.n:
        raise ValueError(f"probe resolution {probe} must exceed the sensor resolution {grid.n}")
    devs = list(_kappa_cached(int(D), grid.n, int(probe)))
    return KappaReport(int(D), grid.n, grid.m, int(probe), devs, max(devs))


@dataclass
class KappaSweep:
    D: int
    n_values: list[int]
    m_values: list[int]
    kappas: list[float]
    slope_vs_m: float
    slope_vs_h: float


def kappa_sweep(D: int, n_values, probe: int = 64) -> KappaSweep:
    """Kappa across grids with log-log fits against ``m`` and against the spacing ``h``."""
    reps = [kappa(D, n, probe) for n in n_values]
    ms = np.array([r.m for r in reps], float)
    hs = np.array([SensorGrid(n).spacing for n in n_values])
    ks = np.array([r.kappa for r in reps])
    slope_m = float(np.polyfit(np.log(ms), np.log(ks), 1)[0]) if len(reps) > 1 else math.nan
    slope_h = float(np.polyfit(np.log(hs), np.log(ks), 1)[0]) if len(reps) > 1 else math.nan
    return KappaSweep(D, list(n_values), ms.astype(int).tolist(), ks.tolist(), slope_m, slope_h)


class SensorSearchExhausted(RuntimeError):
    def __init__(self, best_n: int, best_margin: float):
        self.best_n, self.best_margin = best_n, best_margin
        super().__init__(f"no grid in range satisfies the sensor bound; best n={best_n} "
                         f"misses by {-best_margin:.6g}")


@dataclass
class SensorRequirement:
    n: int
    m: int
    kappa: float
    margin: float
    lipschitz_factor: float


def required_sensors(epsilon: float, D: int, R: float, C: float = 1.0, C1: float = 1.0,
                     n_min: int = 2, n_max: int = 33, probe: int = 64) -> SensorRequirement:
    """Smallest grid with ``C1 exp(C R^4 lambda_D) kappa(D, m) < epsilon / 2``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    lam_d = float(build_basis(3, D).eigenvalues[-1])
    factor = C1 * math.exp(C * R**4 * lam_d)
    best = (n_min, -math.inf)
    for n in range(n_min, n_max + 1):
        if probe <= n:
            break
        k = kappa(D, n, probe).kappa
        margin = 0.5 * epsilon - factor * k
        if margin > 0:
            return SensorRequirement(n, n**3 - 1, k, margin, factor)
        if margin > best[1]:
            best = (n, margin)
    raise SensorSearchExhausted(*best)


def hat_transform(k: int, q: int, grid: SensorGrid) -> complex:
    """``int_{-pi}^{pi} L[exp(i k .)](x) exp(i q x) dx`` for the piecewise-linear interpolant ``L``.

    Periodic hats at the ``n - 1`` distinct nodes have transform ``h sinc^2(q h / 2)``.
    """
    h = grid.spacing
    z = 0.5 * q * h
    sinc2 = 1.0 if z == 0 else (math.sin(z) / z) ** 2
    nodes = grid.axis[:-1]
    return h * sinc2 * complex(np.sum(np.exp(1j * (k + q) * nodes)))


_TRIG_COEF = {Trig.COS: {1: 0.5, -1: 0.5}, Trig.SIN: {1: -0.5j, -1: 0.5j}}


def sensor_projection_matrix(source: BasisSet, target: BasisSet, grid: SensorGrid) -> np.ndarray:
    """``G[i, j] = <T_m w_i, w_j>``: Galerkin coefficients of interpolated source modes."""
    amp2 = amplitude(3) ** 2
    out = np.zeros((len(source), len(target)))
    cache: dict[tuple[int, int], complex] = {}

    def J(k, q):
        key = (k, q)
        if key not in cache:
            cache[key] = hat_transform(k, q, grid)
        return cache[key]

    for i, wi in enumerate(source.modes):
        for j, wj in enumerate(target.modes):
            dot = float(wi.polarization @ wj.polarization)
            if abs(dot) < 1e-15:
                continue
            total = 0j
            for s, cs in _TRIG_COEF[wi.trig].items():
                for r, cr in _TRIG_COEF[wj.trig].items():
                    prod = 1.0 + 0j
                    for a in range(3):
                        prod *= J(s * wi.wave.components[a], r * wj.wave.components[a])
                        if prod == 0:
                            break
                    total += cs * cr * prod
            out[i, j] = amp2 * dot * total.real
    return out


def tm_continuity(D: int, grid: SensorGrid, n_pairs: int = 50, probe: int = 32, seed: int = 0) -> float:
    """Largest observed ``max_x |T_m u - T_m v| / ||a - b||`` over random coefficient pairs."""
    basis = build_basis(3, D)
    pa = probe_axis(probe)
    interp = np.stack([trilinear_on_grid(interpolate_mode(md, grid).sensor_values, grid, pa)
                       for md in basis.modes])
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        diff = rng.standard_normal(D)
        field_ = np.tensordot(diff, interp, axes=1)
        worst = max(worst, float(np.sqrt(np.sum(field_**2, axis=-1)).max() / np.linalg.norm(diff)))
    return worst


@dataclass
class PipelineReport:
    D: int
    n: int
    m: int
    width: int
    d_Y: int
    kappa: float
    total_error: float
    interpolation_error: float
    network_error: float
    decomposition_ok: bool
    train_history: list = field(default_factory=list)


def sensor_targets(a: np.ndarray, grid: SensorGrid | None, basis: BasisSet, cfg: SolverConfig,
                   t_star: float, d_Y: int, tensor=None) -> np.ndarray:
    """``phi_m(a)`` for each row of ``a``; ``grid=None`` gives the uninterpolated ``psi(a)``."""
    tensor = tensor or assemble_structure_tensor(basis)
    D = a.shape[1]
    if grid is None:
        init = _fit(a, len(basis))
    else:
        init = a @ sensor_projection_matrix(build_basis(3, D), basis, grid)
    out, _ = solve_outputs(init, cfg, tensor, basis, t_star)
    return out[:, :d_Y]


def eval_grid(D: int, R: float, per_axis: int) -> np.ndarray:
    half = R / math.sqrt(D)
    ax = np.linspace(-half, half, per_axis)
    return np.array(list(itertools.product(ax, repeat=D)))


def depth2_pipeline(spec: SampleSpec, basis: BasisSet, cfg: SolverConfig, t_star: float, d_Y: int,
                    grid: SensorGrid | None, width: int, n_train: int, train_cfg: TrainConfig,
                    eval_per_axis: int = 3, probe: int = 64) -> PipelineReport:
    """Train one-hidden-layer ReLU nets on sensor-interpolated data and measure sup errors.

    Errors are maxima over a tensor grid of coefficient vectors: ``total`` against
    solves from exact initial data, split into the interpolation part
    ``|psi - phi_m|`` and the network part ``|phi_m - Gamma|``.
    """
    if width < 1:
        raise ValueError(f"hidden width must be >= 1, got {width}")
    if basis.dim != 3 or spec.dim != 3:
        raise ValueError("the sensor pipeline is three-dimensional")
    tensor = assemble_structure_tensor(basis)
    D = spec.D
    a = sample_many(spec, range(n_train))
    targets = sensor_targets(a, grid, basis, cfg, t_star, d_Y, tensor)
    arch = MlpArchitecture(D, d_Y, (width,), clamp=spec.R / math.sqrt(D))
    result = train(a, targets, arch, train_cfg)
    probe_a = eval_grid(D, spec.R, eval_per_axis)
    exact = sensor_targets(probe_a, None, basis, cfg, t_star, d_Y, tensor)
    interp = sensor_targets(probe_a, grid, basis, cfg, t_star, d_Y, tensor) if grid is not None else exact
    pred = forward(result.params, probe_a, arch.clamp)
    total = float(np.linalg.norm(exact - pred, axis=1).max())
    e_int = float(np.linalg.norm(exact - interp, axis=1).max())
    e_net = float(np.linalg.norm(interp - pred, axis=1).max())
    kap = kappa(D, grid, probe).kappa if grid is not None else 0.0
    return PipelineReport(D, grid.n if grid else 0, grid.m if grid else 0, width, d_Y, kap,
                          total, e_int, e_net, total <= e_int + e_net + 1e-12, result.history)
