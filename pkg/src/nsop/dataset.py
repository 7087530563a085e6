"""Sampling of bounded initial data, paired Galerkin solves and on-disk datasets.

Layout of a dataset directory::

    manifest.json   metadata, FNV-1a 64-bit checksums of the payloads
    inputs.f64      row-major N x d_H little-endian doubles
    outputs.f64     row-major N x d_Y little-endian doubles

Record ``i`` depends only on ``(seed, i)``: its generator is a Philox stream
keyed by ``SeedSequence(seed, spawn_key=(i,))``.
"""
from __future__ import annotations

import enum
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .basis import BasisSet, build_basis
from .codec import interpolate_snapshots
from .galerkin import (IntegrationError, SolverConfig, StructureTensor,
                       assemble_structure_tensor, integrate_batch)

log = logging.getLogger(__name__)

FORMAT_NAME = "nsop-dataset"
FORMAT_VERSION = 1
MAX_RETRIES = 2


class Distribution(str, enum.Enum):
    UNIFORM_BOX = "uniform_box"
    UNIFORM_SPHERE = "uniform_sphere"


class DatasetError(Exception):
    pass


class ChecksumError(DatasetError):
    def __init__(self, filename, expected, found):
        self.filename = filename
        super().__init__(f"checksum mismatch in {filename}: manifest {expected}, file {found}")


class TruncatedFileError(DatasetError):
    def __init__(self, filename, expected, found):
        self.filename = filename
        super().__init__(f"{filename} holds {found} bytes, expected {expected}")


class VersionError(DatasetError):
    pass


def fnv1a_64(data: bytes) -> str:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


@dataclass(frozen=True)
class SampleSpec:
    dim: int
    R: float
    D: int
    distribution: Distribution = Distribution.UNIFORM_BOX
    seed: int = 0

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError(f"energy radius must be positive, got {self.R}")
        if self.D < 1:
            raise ValueError(f"active mode count must be >= 1, got {self.D}")
        object.__setattr__(self, "distribution", Distribution(self.distribution))


def record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def record_seed(seed: int, index: int) -> int:
    """64-bit seed identifying record ``index``."""
    lo, hi = np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(2, np.uint32)
    return int(hi) << 32 | int(lo)


def _draw(spec: SampleSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.distribution is Distribution.UNIFORM_BOX:
        half = spec.R / math.sqrt(spec.D)
        return rng.uniform(-half, half, size=spec.D)
    g = rng.standard_normal(spec.D)
    return spec.R * g / np.linalg.norm(g)


def sample_initial(spec: SampleSpec, index: int) -> np.ndarray:
    """Coefficients of the ``index``-th initial datum in ``span{w_1..w_D}``."""
    return _draw(spec, record_rng(spec.seed, index))


def sample_many(spec: SampleSpec, indices) -> np.ndarray:
    return np.array([sample_initial(spec, int(i)) for i in indices]).reshape(-1, spec.D)


def bounded_noise(rng: np.random.Generator, size: int, level: float) -> np.ndarray:
    """Zero-mean noise with Euclidean norm at most ``level``."""
    half = level / math.sqrt(size)
    return rng.uniform(-half, half, size=size)


@dataclass
class DatasetManifest:
    N: int
    d_H: int
    d_Y: int
    dim: int
    m: int
    nu: float
    dt: float
    t_final: float
    t_star: float
    R: float
    D: int
    distribution: str
    seed: int
    noise: float = 0.0
    retried: list = field(default_factory=list)
    checksums: dict = field(default_factory=dict)
    format: str = FORMAT_NAME
    version: int = FORMAT_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @property
    def sample_spec(self) -> SampleSpec:
        return SampleSpec(self.dim, self.R, self.D, Distribution(self.distribution), self.seed)

    @property
    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.nu, self.dt, self.t_final)


@dataclass
class DatasetRecord:
    input: np.ndarray
    output: np.ndarray
    sample_seed: int


@dataclass
class Dataset:
    manifest: DatasetManifest
    inputs: np.ndarray | None
    outputs: np.ndarray | None

    def __len__(self) -> int:
        return self.manifest.N

    def record(self, i: int) -> DatasetRecord:
        return DatasetRecord(self.inputs[i], self.outputs[i], record_seed(self.manifest.seed, i))


def _fit(a: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros(a.shape[:-1] + (width,))
    n = min(width, a.shape[-1])
    out[..., :n] = a[..., :n]
    return out


def solve_outputs(initial: np.ndarray, cfg: SolverConfig, tensor: StructureTensor, basis: BasisSet,
                  t_star: float) -> tuple[np.ndarray, list[int]]:
    """Galerkin coefficients at ``t_star`` for each row of ``initial`` (shape ``(B, m)``).

    A row that blows up is re-solved alone with the step halved, at most twice.
    Returns the ``(B, m)`` outputs and the positions that needed a retry.
    """
    try:
        times, snaps = integrate_batch(initial, cfg, tensor, basis)
        return interpolate_snapshots(times, snaps, t_star), []
    except IntegrationError as err:
        log.warning("batch unstable at step %d; retrying rows individually", err.step)
    out = np.empty_like(initial)
    retried = []
    for row in range(initial.shape[0]):
        dt = cfg.dt
        for attempt in range(MAX_RETRIES + 1):
            try:
                times, snaps = integrate_batch(initial[row:row + 1], cfg.with_dt(dt), tensor, basis)
                out[row] = interpolate_snapshots(times, snaps, t_star)[0]
                break
            except IntegrationError as err:
                if attempt == MAX_RETRIES:
                    raise IntegrationError(err.step, [row]) from None
                dt /= 2
        if dt != cfg.dt:
            retried.append(row)
    return out, retried


def _generate_chunk(args):
    spec, cfg, basis, indices, d_H, d_Y, t_star, noise = args
    tensor = assemble_structure_tensor(basis)
    a = sample_many(spec, indices)
    m = len(basis)
    outputs, retried = solve_outputs(_fit(a, m), cfg, tensor, basis, t_star)
    outputs = outputs[:, :d_Y]
    if noise > 0:
        for row, i in enumerate(indices):
            rng = record_rng(spec.seed, int(i))
            _draw(spec, rng)
            outputs[row] += bounded_noise(rng, d_Y, noise)
    return _fit(a, d_H), outputs, [int(indices[r]) for r in retried]


def generate(spec: SampleSpec, cfg: SolverConfig, basis: BasisSet, N: int, d_H: int, d_Y: int,
             t_star: float | None = None, noise: float = 0.0, workers: int = 1,
             chunk_size: int = 128) -> Dataset:
    """Sample, solve and encode ``N`` records; the result does not depend on ``workers``."""
    t_star = cfg.t_final if t_star is None else t_star
    m = len(basis)
    if spec.dim != basis.dim:
        raise ValueError(f"sample dimension {spec.dim} differs from basis dimension {basis.dim}")
    if m < max(d_H, d_Y, spec.D):
        raise ValueError(f"Galerkin order {m} must be at least max(d_H, d_Y, D)")
    if not 0 < t_star <= cfg.t_final:
        raise ValueError(f"t_star={t_star} outside (0, {cfg.t_final}]")
    if d_H < spec.D:
        warnings.warn(f"d_H={d_H} < D={spec.D}: inputs are truncated", stacklevel=2)
    cfg.validate(basis)
    tasks = [(spec, cfg, basis, np.arange(s, min(s + chunk_size, N)), d_H, d_Y, t_star, noise)
             for s in range(0, N, chunk_size)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_generate_chunk, tasks))
    else:
        parts = [_generate_chunk(t) for t in tasks]
    inputs = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, d_H))
    outputs = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, d_Y))
    retried = sorted(i for p in parts for i in p[2])
    manifest = DatasetManifest(
        N=N, d_H=d_H, d_Y=d_Y, dim=basis.dim, m=m, nu=cfg.nu, dt=cfg.dt, t_final=cfg.t_final,
        t_star=t_star, R=spec.R, D=spec.D, distribution=spec.distribution.value, seed=spec.seed,
        noise=noise, retried=retried)
    return Dataset(manifest, inputs, outputs)


def regenerate(manifest: DatasetManifest, workers: int = 1) -> Dataset:
    basis = build_basis(manifest.dim, manifest.m)
    return generate(manifest.sample_spec, manifest.solver_config, basis, manifest.N,
                    manifest.d_H, manifest.d_Y, manifest.t_star, manifest.noise, workers)


def write(dataset: Dataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    man = dataset.manifest
    payloads = {
        "inputs.f64": np.ascontiguousarray(dataset.inputs, dtype="<f8").reshape(man.N, man.d_H).tobytes(),
        "outputs.f64": np.ascontiguousarray(dataset.outputs, dtype="<f8").reshape(man.N, man.d_Y).tobytes(),
    }
    for name, raw in payloads.items():
        (path / name).write_bytes(raw)
    man.checksums = {name: fnv1a_64(raw) for name, raw in payloads.items()}
    (path / "manifest.json").write_text(man.to_json())


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    raw = json.loads((path / "manifest.json").read_text())
    if raw.get("format") != FORMAT_NAME:
        raise VersionError(f"{path / 'manifest.json'}: not a {FORMAT_NAME} manifest")
    if raw.get("version") != FORMAT_VERSION:
        raise VersionError(f"{path / 'manifest.json'}: version {raw.get('version')} unsupported "
                           f"(expected {FORMAT_VERSION})")
    return DatasetManifest(**raw)


def read(path, manifest_only: bool = False) -> Dataset:
    path = Path(path)
    man = read_manifest(path)
    if manifest_only:
        return Dataset(man, None, None)
    arrays = []
    for name, width in (("inputs.f64", man.d_H), ("outputs.f64", man.d_Y)):
        raw = (path / name).read_bytes()
        expected = 8 * man.N * width
        if len(raw) != expected:
            raise TruncatedFileError(name, expected, len(raw))
        found = fnv1a_64(raw)
        if found != man.checksums.get(name):
            raise ChecksumError(name, man.checksums.get(name), found)
        arrays.append(np.frombuffer(raw, dtype="<f8").reshape(man.N, width).astype(float))
    return Dataset(man, *arrays)
