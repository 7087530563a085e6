"""Command-line entry point: ``nsop <subcommand> [flags]``.

Every parameter may come from a JSON file given with ``--config``; flags on the
command line override file values and unknown keys are rejected.  Each run
writes its artifacts into ``--out`` and records provenance in ``run.json``
under the subcommand's name.  ``run.json`` carries timings and is therefore
the one file that differs between otherwise identical runs.

Exit status: 0 success, 2 invalid configuration, 3 numerical failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as ds
from .basis import build_basis, periodic_grid
from .codec import encode_field
from .galerkin import (IntegrationError, SolverConfig, assemble_structure_tensor, integrate,
                       write_trajectory)
from .network import (BudgetError, MlpArchitecture, TrainConfig, TrainingError, forward,
                      load_model, save_model, size_for_accuracy, train)
from .sensors import (SensorGrid, SensorSearchExhausted, depth2_pipeline, kappa, kappa_sweep,
                      required_sensors, tm_continuity)
from .verify import (check_energy, empirical_lipschitz, evaluate_operator, exact_code_map,
                     lipschitz_m_sweep, lipschitz_pairs, projection_decay, write_csv, write_json)

log = logging.getLogger("nsop")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


class ConfigError(ValueError):
    pass


def _ints(value) -> list[int]:
    if isinstance(value, str):
        return [int(v) for v in value.split(",") if v.strip()]
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(value)]


def _strs(value) -> list[str]:
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return [str(v) for v in value]


def _opt_int(value):
    return None if value in (None, "none", "") else int(value)


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if str(value).lower() in ("1", "true", "yes", "on"):
        return True
    if str(value).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


GLOBAL = {
    "seed": (int, 0, "global random seed"),
    "workers": (int, 1, "worker processes"),
}

SOLVER = {
    "dim": (int, 2, "spatial dimension (2 or 3)"),
    "modes": (int, 16, "Galerkin order m"),
    "nu": (float, 0.1, "viscosity"),
    "dt": (float, 1e-3, "time step"),
    "t_final": (float, 1.0, "final time"),
}

SAMPLING = {
    "R": (float, 1.0, "energy radius"),
    "D": (int, 4, "number of active initial modes"),
    "distribution": (str, "uniform_box", "uniform_box or uniform_sphere"),
}

COMMANDS = {
    "basis": {
        "dim": SOLVER["dim"],
        "modes": SOLVER["modes"],
    },
    "simulate": {
        **SOLVER,
        "stride": (int, 10, "snapshot every this many steps"),
        "init": (str, "taylor-green", "taylor-green, random, or comma-separated coefficients"),
        "index": (int, 0, "record index for random initial data"),
        **SAMPLING,
    },
    "gen-data": {
        **SOLVER,
        **SAMPLING,
        "N": (int, 1000, "number of records"),
        "d_H": (int, 4, "input code length"),
        "d_Y": (int, 8, "output code length"),
        "t_star": (float, None, "evaluation time (defaults to t_final)"),
        "noise": (float, 0.0, "bound on additive output noise"),
        "chunk_size": (int, 128, "records per solve batch"),
    },
    "train": {
        "hidden": (_ints, [64, 64], "hidden layer widths"),
        "epochs": (int, 200, "training epochs"),
        "batch_size": (int, 64, "minibatch size"),
        "learning_rate": (float, 1e-3, "step size"),
        "optimizer": (str, "adam", "sgd, momentum or adam"),
        "validation_fraction": (float, 0.1, "held-out fraction"),
        "patience": (_opt_int, None, "early-stopping patience in epochs"),
        "clamp": (_bool, True, "zero the network outside the sampling box"),
        "data": (str, None, "dataset directory (defaults to --out)"),
    },
    "eval": {
        "n_test": (int, 200, "test records, taken after the training records"),
        "data": (str, None, "dataset directory (defaults to --out)"),
        "model": (str, None, "model directory (defaults to <out>/model)"),
    },
    "verify": {
        **SOLVER,
        **SAMPLING,
        "suites": (_strs, ["energy", "lipschitz", "projection", "operator", "size"], "suites to run"),
        "n_traj": (int, 20, "trajectories for the energy suite"),
        "n_pairs": (int, 20, "pairs for the Lipschitz suite"),
        "sweep_modes": (_ints, [], "Galerkin orders for the Lipschitz m-sweep"),
        "N_values": (_ints, [10, 100, 1000], "sample sizes for the projection suite"),
        "d_H_values": (_ints, [1, 2, 3, 4], "code lengths for the projection suite"),
        "replicates": (int, 16, "replicates per sample size"),
        "d_H": (int, 4, "input code length for the operator and size suites"),
        "d_Y": (int, 8, "output code length for the operator and size suites"),
        "n_test": (int, 50, "test records for the operator suite"),
        "delta": (float, 0.1, "target accuracy for the size suite"),
    },
    "sensors": {
        "D": (int, 6, "number of active modes"),
        "epsilon": (float, 1.0, "target accuracy"),
        "R": (float, 1.0, "energy radius"),
        "C": (float, 1.0, "Lipschitz exponent constant"),
        "C1": (float, 1.0, "network accuracy constant"),
        "n_min": (int, 2, "smallest points per axis searched"),
        "n_max": (int, 17, "largest points per axis searched"),
        "sweep": (_ints, [3, 5, 9, 17], "points per axis for the kappa sweep"),
        "probe": (int, 64, "probe points per axis"),
        "pipeline": (_bool, False, "also train a depth-2 network on interpolated data"),
        "n": (int, 5, "points per axis for the pipeline"),
        "width": (int, 32, "hidden width of the depth-2 network"),
        "modes": (int, 16, "Galerkin order for the pipeline"),
        "nu": (float, 0.5, "viscosity for the pipeline"),
        "dt": (float, 1e-3, "time step for the pipeline"),
        "t_final": (float, 0.5, "final time for the pipeline"),
        "n_train": (int, 500, "training records for the pipeline"),
        "epochs": (int, 200, "training epochs for the pipeline"),
        "eval_per_axis": (int, 3, "grid points per axis of held-out coefficients"),
    },
}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON parameter file")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    for name, (_, _, help_) in GLOBAL.items():
        common.add_argument(f"--{name}", default=argparse.SUPPRESS, help=help_)
    parser = argparse.ArgumentParser(prog="nsop", parents=[common],
                                     description="Galerkin Navier-Stokes operator-learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, params in COMMANDS.items():
        p = sub.add_parser(cmd, parents=[common])
        for name, (_, default, help_) in params.items():
            flag = "--" + name.replace("_", "-")
            p.add_argument(flag, dest=name, default=argparse.SUPPRESS,
                           help=f"{help_} (default: {default})")
    return parser


def resolve_config(command: str, cli: dict, file_cfg: dict) -> dict:
    """Defaults, then the JSON file, then explicit flags; every value converted and checked."""
    params = {**GLOBAL, **COMMANDS[command]}
    unknown = sorted(set(file_cfg) - set(params) - {"out"})
    if unknown:
        raise ConfigError(f"unknown config key(s) for '{command}': {', '.join(unknown)}")
    merged = {name: default for name, (_, default, _) in params.items()}
    merged.update(file_cfg)
    merged.update({k: v for k, v in cli.items() if k in params})
    out = {}
    for name, value in merged.items():
        conv = params[name][0]
        try:
            out[name] = value if value is None else conv(value)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid value for '{name}': {value!r} ({err})") from None
    return out


def _solver(cfg: dict, stride: int = 1) -> SolverConfig:
    return SolverConfig(cfg["nu"], cfg["dt"], cfg["t_final"], stride)


def _spec(cfg: dict) -> ds.SampleSpec:
    return ds.SampleSpec(cfg["dim"], cfg["R"], cfg["D"], ds.Distribution(cfg["distribution"]), cfg["seed"])


def _validate(command: str, cfg: dict) -> None:
    """Construct every domain object once so bad parameters fail before any work starts."""
    try:
        if command in ("basis", "simulate", "gen-data", "verify"):
            if cfg["dim"] not in (2, 3):
                raise ConfigError(f"dim must be 2 or 3, got {cfg['dim']}")
            if cfg["modes"] < 1:
                raise ConfigError(f"modes must be >= 1, got {cfg['modes']}")
        if command in ("simulate", "gen-data", "verify"):
            _solver(cfg).validate(build_basis(cfg["dim"], cfg["modes"]))
            _spec(cfg)
        if command == "train":
            TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                        learning_rate=cfg["learning_rate"], optimizer=cfg["optimizer"],
                        validation_fraction=cfg["validation_fraction"], patience=cfg["patience"])
            MlpArchitecture(1, 1, tuple(cfg["hidden"]))
        if command == "sensors":
            if cfg["epsilon"] <= 0:
                raise ConfigError("epsilon must be positive")
            if cfg["probe"] <= max(cfg["sweep"] + [cfg["n_max"]]):
                raise ConfigError("probe resolution must exceed every sensor resolution")
            if cfg["width"] < 1:
                raise ConfigError(f"width must be >= 1, got {cfg['width']}")
            SensorGrid(cfg["n"])
        if command == "verify":
            bad = set(cfg["suites"]) - {"energy", "lipschitz", "projection", "operator", "size"}
            if bad:
                raise ConfigError(f"unknown suite(s): {', '.join(sorted(bad))}")
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from None


# subcommands -----------------------------------------------------------------

def _taylor_green(basis) -> np.ndarray:
    if basis.dim != 2:
        raise ConfigError("taylor-green initial data is two-dimensional")
    n = max(basis.grid_hint, 8)
    x = periodic_grid(2, n)
    u = np.stack([np.sin(x[..., 0]) * np.cos(x[..., 1]),
                  -np.cos(x[..., 0]) * np.sin(x[..., 1])], axis=-1)
    return encode_field(u, basis, len(basis)).values


def cmd_basis(cfg: dict, out: Path) -> dict:
    basis = build_basis(cfg["dim"], cfg["modes"])
    (out / "basis.txt").write_text("\n".join(basis.manifest_lines()) + "\n")
    write_json({"basis_id": basis.basis_id, "dim": basis.dim, "m": len(basis),
                "eigenvalues": basis.eigenvalues.tolist()}, out / "basis.json")
    return {"basis_id": basis.basis_id}


def cmd_simulate(cfg: dict, out: Path) -> dict:
    basis = build_basis(cfg["dim"], cfg["modes"])
    solver = _solver(cfg, cfg["stride"])
    init = cfg["init"]
    if init == "taylor-green":
        a = _taylor_green(basis)
    elif init == "random":
        a = ds._fit(ds.sample_initial(_spec(cfg), cfg["index"]), len(basis))
    else:
        try:
            a = ds._fit(np.array([float(v) for v in init.split(",")]), len(basis))
        except ValueError:
            raise ConfigError(f"init must be taylor-green, random or numbers, got {init!r}") from None
    traj = integrate(a, solver, assemble_structure_tensor(basis), basis)
    report = check_energy(traj, cfg["nu"])
    write_trajectory(out / "trajectory.nstrj", traj,
                     {"config": {k: cfg[k] for k in COMMANDS["simulate"]}, "seed": cfg["seed"],
                      "energy_ok": report.ok})
    return {"basis_id": basis.basis_id, "energy_ok": report.ok}


def cmd_gen_data(cfg: dict, out: Path) -> dict:
    basis = build_basis(cfg["dim"], cfg["modes"])
    data = ds.generate(_spec(cfg), _solver(cfg), basis, cfg["N"], cfg["d_H"], cfg["d_Y"],
                       cfg["t_star"], cfg["noise"], cfg["workers"], cfg["chunk_size"])
    ds.write(data, out)
    return {"N": cfg["N"], "retried": data.manifest.retried, "checksums": data.manifest.checksums}


def cmd_train(cfg: dict, out: Path) -> dict:
    data = ds.read(cfg["data"] or out)
    man = data.manifest
    clamp = man.R / math.sqrt(man.d_H) if cfg["clamp"] else None
    arch = MlpArchitecture(man.d_H, man.d_Y, tuple(cfg["hidden"]), clamp)
    tcfg = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                       learning_rate=cfg["learning_rate"], optimizer=cfg["optimizer"],
                       seed=cfg["seed"], validation_fraction=cfg["validation_fraction"],
                       patience=cfg["patience"], workers=cfg["workers"])
    result = train(data.inputs, data.outputs, arch, tcfg)
    save_model(out / "model", arch, result.params, cfg["seed"], tcfg,
               {"dataset": {"checksums": man.checksums, "N": man.N},
                "best_epoch": result.best_epoch})
    write_csv(result.history, out / "model" / "history.csv")
    return {"best_epoch": result.best_epoch, "final_val": result.history[result.best_epoch]["val"]}


def cmd_eval(cfg: dict, out: Path) -> dict:
    data = ds.read(cfg["data"] or out, manifest_only=True)
    man = data.manifest
    arch, params, _ = load_model(cfg["model"] or out / "model")
    if (arch.input_dim, arch.output_dim) != (man.d_H, man.d_Y):
        raise ConfigError("model and dataset code lengths differ")
    basis = build_basis(man.dim, man.m)
    rep = evaluate_operator(lambda a: forward(params, a, arch.clamp), man.sample_spec,
                            man.solver_config, basis, man.d_H, man.d_Y, man.t_star,
                            cfg["n_test"], first_index=man.N)
    write_json(rep, out / "eval.json")
    return {"relative_error": rep.relative_error}


def cmd_verify(cfg: dict, out: Path) -> dict:
    basis = build_basis(cfg["dim"], cfg["modes"])
    tensor = assemble_structure_tensor(basis)
    solver = _solver(cfg)
    spec = _spec(cfg)
    summary = {}
    if "energy" in cfg["suites"]:
        rows = []
        for i in range(cfg["n_traj"]):
            a = ds._fit(ds.sample_initial(spec, i), len(basis))
            rep = check_energy(integrate(a, solver, tensor, basis), cfg["nu"])
            rows.append({"index": i, "initial_energy": rep.initial_energy, "sup_energy": rep.sup_energy,
                         "dissipation_integral": rep.dissipation_integral, "ok": rep.ok})
        write_csv(rows, out / "energy.csv")
        summary["energy_ok"] = all(r["ok"] for r in rows)
        write_json({"trajectories": len(rows), "all_ok": summary["energy_ok"]}, out / "energy.json")
    if "lipschitz" in cfg["suites"]:
        u0, v0 = lipschitz_pairs(spec, cfg["n_pairs"])
        rep = empirical_lipschitz(u0, v0, solver, basis, tensor=tensor)
        write_json(rep, out / "lipschitz.json")
        summary["calibrated_C"] = rep.calibrated_C
        if cfg["sweep_modes"]:
            sweep = lipschitz_m_sweep(spec, cfg["sweep_modes"], cfg["n_pairs"], solver)
            write_json(sweep, out / "lipschitz_sweep.json")
            write_csv([{"m": m, "calibrated_C": c, "lambda_max": lam}
                       for m, c, lam in zip(sweep.ms, sweep.calibrated_C, sweep.eigenvalue_max)],
                      out / "lipschitz_sweep.csv")
            summary["C_drift"] = sweep.drift
    if "projection" in cfg["suites"]:
        rep = projection_decay(spec, cfg["N_values"], cfg["d_H_values"], cfg["replicates"])
        write_json(rep, out / "projection.json")
        write_csv([{"N": n, **{f"dH{d}": v for d, v in zip(rep.d_H_values, rep.mean_abs_deviation[str(n)])}}
                   for n in rep.N_values], out / "projection.csv")
        summary["projection_exponent"] = rep.fit_exponent
    if "operator" in cfg["suites"]:
        oracle = exact_code_map(basis, solver, cfg["d_Y"], cfg["t_final"], tensor)
        rep = evaluate_operator(oracle, spec, solver, basis, cfg["d_H"], cfg["d_Y"],
                                n_test=cfg["n_test"], tensor=tensor)
        write_json(rep, out / "operator.json")
        summary["operator_identity_ok"] = rep.identity_ok
    if "size" in cfg["suites"]:
        try:
            est = size_for_accuracy(cfg["delta"], cfg["d_H"], cfg["d_Y"], cfg["R"])
            write_json(est, out / "size.json")
            summary["size_params"] = est.params
        except BudgetError as err:
            write_json({"error": str(err), "r": err.r}, out / "size.json")
            summary["size_params"] = None
    return summary


def cmd_sensors(cfg: dict, out: Path) -> dict:
    D = cfg["D"]
    sweep = kappa_sweep(D, cfg["sweep"], cfg["probe"])
    write_csv([{"n": n, "m": m, "kappa": k} for n, m, k in zip(sweep.n_values, sweep.m_values, sweep.kappas)],
              out / "kappa_sweep.csv")
    write_json(sweep, out / "kappa_sweep.json")
    write_json(kappa(D, cfg["sweep"][-1], cfg["probe"]), out / "kappa.json")
    summary = {"slope_vs_m": sweep.slope_vs_m, "slope_vs_h": sweep.slope_vs_h}
    try:
        req = required_sensors(cfg["epsilon"], D, cfg["R"], cfg["C"], cfg["C1"],
                               cfg["n_min"], cfg["n_max"], cfg["probe"])
        write_json(req, out / "required_sensors.json")
        summary["required_n"] = req.n
    except SensorSearchExhausted as err:
        write_json({"exhausted": True, "best_n": err.best_n, "best_margin": err.best_margin},
                   out / "required_sensors.json")
        summary["required_n"] = None
    if cfg["pipeline"]:
        grid = SensorGrid(cfg["n"])
        spec = ds.SampleSpec(3, cfg["R"], D, seed=cfg["seed"])
        basis = build_basis(3, cfg["modes"])
        solver = SolverConfig(cfg["nu"], cfg["dt"], cfg["t_final"])
        tcfg = TrainConfig(epochs=cfg["epochs"], seed=cfg["seed"], workers=cfg["workers"])
        rep = depth2_pipeline(spec, basis, solver, cfg["t_final"], len(basis), grid, cfg["width"],
                              cfg["n_train"], tcfg, cfg["eval_per_axis"], cfg["probe"])
        rep_dict = {k: v for k, v in vars(rep).items() if k != "train_history"}
        rep_dict["tm_continuity"] = tm_continuity(D, grid, seed=cfg["seed"])
        write_json(rep_dict, out / "pipeline.json")
        summary["pipeline_total_error"] = rep.total_error
    return summary


HANDLERS = {"basis": cmd_basis, "simulate": cmd_simulate, "gen-data": cmd_gen_data,
            "train": cmd_train, "eval": cmd_eval, "verify": cmd_verify, "sensors": cmd_sensors}


def _record_run(out: Path, command: str, cfg: dict, summary: dict, seconds: float) -> None:
    path = out / "run.json"
    runs = json.loads(path.read_text()) if path.exists() else {}
    runs[command] = {"config": cfg, "seed": cfg["seed"], "summary": summary,
                     "versions": {"nsop": __version__, "python": platform.python_version(),
                                  "numpy": np.__version__},
                     "timings": {"seconds": seconds}}
    write_json(runs, path)


def run(argv=None) -> int:
    parser = _build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    logging.basicConfig(level=logging.INFO if args.pop("verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_cfg = {}
        if "config" in args:
            try:
                file_cfg = json.loads(Path(args.pop("config")).read_text())
            except json.JSONDecodeError as err:
                raise ConfigError(f"config file is not valid JSON: {err}") from None
            if not isinstance(file_cfg, dict):
                raise ConfigError("config file must hold a JSON object")
        out = Path(args.pop("out", None) or file_cfg.pop("out", None) or ".")
        cfg = resolve_config(command, args, file_cfg)
        _validate(command, cfg)
        out.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        summary = HANDLERS[command](cfg, out)
        _record_run(out, command, cfg, summary, time.perf_counter() - start)
    except ValueError as err:
        print(f"nsop {command}: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, TrainingError, FloatingPointError) as err:
        print(f"nsop {command}: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ds.DatasetError) as err:
        print(f"nsop {command}: I/O failure: {err}", file=sys.stderr)
        return EXIT_IO
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
