"""Experiment runner: parameter sweeps to CSV tables and SVG rate plots.

Presets freeze the benchmark setups (material constants, mesh ladder,
schemes); a config file or command-line flags override single knobs.  All
numeric output goes through one fixed formatter so re-running a preset
reproduces its CSV byte for byte.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .assembly import MaterialParams, assemble_biot_blocks, assemble_stokes, \
    build_biot_system
from .fespace import build_dof_layout
from .mesh import build_structured_unit_square
from .timestep import save_state
from .verify import (
    BIOT_SCHEMES,
    STOKES_SCHEMES,
    biot_benchmark_case,
    convergence_study,
    spectral_equivalence_report,
    stokes_benchmark_case,
    stokes_pair_infsup,
)

EXPERIMENTS = ("table1", "table2", "biot-convergence", "stokes-convergence",
               "diagnostics")
CSV_COLUMNS = ("experiment", "scheme", "kappa", "N", "h", "err_u_energy",
               "err_p_l2", "err_w_l2", "rate_u", "rate_p", "gamma_h", "eta",
               "status")
LARGE_N = 128


class CLIError(Exception):
    """Configuration or input problem reported with exit code 2."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep: which benchmark, which meshes, which schemes."""

    experiment: str = "table2"
    N: tuple = (8, 16, 32, 64)
    kappas: tuple = (1e-4, 1e-6, 1e-8, 1e-10)
    schemes: tuple = ("AD",)
    diagonal: str = "right-down"
    out: Path = Path("out")
    seed: int = 0
    large: bool = False
    tau: float = 1.0
    t_max: float = 1.0
    dump_matrix: bool = False
    dump_state: bool = False
    material: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise CLIError(f"unknown experiment {self.experiment!r}; "
                           f"choose from {', '.join(EXPERIMENTS)}")
        if not self.N or not self.schemes:
            raise CLIError("mesh list and scheme list must be non-empty")
        if any(n < 1 for n in self.N):
            raise CLIError("mesh subdivisions must be positive")
        if not self.kappas or any(k <= 0 for k in self.kappas):
            raise CLIError("kappa list must be non-empty and positive")
        known = BIOT_SCHEMES + STOKES_SCHEMES
        bad = [s for s in self.schemes if s not in known]
        if bad:
            raise CLIError(f"unknown schemes {bad}; known: {', '.join(known)}")
        if self.tau <= 0 or self.t_max < self.tau:
            raise CLIError("need 0 < tau <= t_max")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.tau))


PRESETS = {
    "table1": dict(experiment="table1", schemes=("P1",)),
    "table2": dict(experiment="table2", schemes=("AD",)),
    "biot": dict(experiment="biot-convergence", schemes=("A", "AD"),
                 kappas=(1e-8,)),
    "biot-convergence": dict(experiment="biot-convergence",
                             schemes=("A", "AD"), kappas=(1e-8,)),
    "stokes": dict(experiment="stokes-convergence", schemes=("AS", "ASD")),
    "stokes-convergence": dict(experiment="stokes-convergence",
                               schemes=("AS", "ASD")),
    "diagnostics": dict(experiment="diagnostics", schemes=("A", "P1"),
                        N=(4, 8, 16, 32)),
}

_MATERIAL_KEYS = ("lam", "mu", "alpha", "M", "mu_f", "nu")
_CONFIG_KEYS = {
    "experiment": str, "n": None, "kappa": None, "schemes": None,
    "diagonal": str, "out": str, "seed": int, "large": bool,
    "tau": float, "t_max": float, "dump_matrix": bool, "dump_state": bool,
}


def _parse_list(text, cast):
    items = [t for t in text.replace(",", " ").split() if t]
    return tuple(cast(t) for t in items)


def load_config(path) -> dict:
    """Flat key=value sections to override fields; unknown keys are fatal."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise CLIError(f"config file {path} not found")
    overrides = {}
    material = {}
    bad = []
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in _MATERIAL_KEYS or key.lower() == "m":
                material["M" if key.lower() == "m" else key] = float(value)
            elif key == "n":
                overrides["N"] = _parse_list(value, int)
            elif key == "kappa":
                overrides["kappas"] = _parse_list(value, float)
            elif key == "schemes":
                overrides["schemes"] = _parse_list(value, str)
            elif key in _CONFIG_KEYS:
                cast = _CONFIG_KEYS[key]
                if cast is bool:
                    overrides[key] = parser.getboolean(section, key)
                elif key == "out":
                    overrides["out"] = Path(value)
                else:
                    overrides[key] = cast(value)
            else:
                bad.append(f"[{section}] {key}")
    if bad:
        raise CLIError("unknown config keys: " + ", ".join(bad))
    if material:
        overrides["material"] = material
    return overrides


def build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.preset:
        if args.preset not in PRESETS:
            raise CLIError(f"unknown preset {args.preset!r}; "
                           f"choose from {', '.join(sorted(PRESETS))}")
        cfg = replace(cfg, **PRESETS[args.preset])
    if args.config:
        cfg = replace(cfg, **load_config(args.config))
    flag_overrides = {}
    if args.mesh:
        flag_overrides["N"] = _parse_list(args.mesh, int)
    if args.schemes:
        flag_overrides["schemes"] = _parse_list(args.schemes, str)
    if args.diagonal:
        flag_overrides["diagonal"] = args.diagonal
    if args.out:
        flag_overrides["out"] = Path(args.out)
    if args.seed is not None:
        flag_overrides["seed"] = args.seed
    if args.large:
        flag_overrides["large"] = True
    if args.dump_matrix:
        flag_overrides["dump_matrix"] = True
    if args.dump_state:
        flag_overrides["dump_state"] = True
    cfg = replace(cfg, **flag_overrides)
    if cfg.large and LARGE_N not in cfg.N:
        cfg = replace(cfg, N=tuple(cfg.N) + (LARGE_N,))
    return cfg.validate()


def _case_for(cfg: ExperimentConfig, scheme: str, kappa: float):
    mat = cfg.material
    if scheme in STOKES_SCHEMES:
        return stokes_benchmark_case(mat.get("nu", 1.0))
    keys = ("lam", "mu", "alpha", "M", "mu_f")
    return biot_benchmark_case(kappa, **{k: mat[k] for k in keys if k in mat})


def _diagnostics_rows(cfg: ExperimentConfig):
    """Stability constants per mesh level: inf-sup gamma and bubble eta."""
    rows = []
    params = MaterialParams(lam=cfg.material.get("lam", 2.0),
                            mu=cfg.material.get("mu", 1.0))
    for scheme in cfg.schemes:
        enrich = scheme != "P1"
        for N in cfg.N:
            mesh = build_structured_unit_square(N, cfg.diagonal)
            gamma = stokes_pair_infsup(mesh, enrich=enrich).gamma
            eta = None
            if enrich:
                eta = spectral_equivalence_report(mesh, params).eta
            rows.append({"experiment": "diagnostics", "scheme": scheme,
                         "kappa": None, "N": N, "h": mesh.h_max,
                         "err_u_energy": None, "err_p_l2": None,
                         "err_w_l2": None, "rate_u": None, "rate_p": None,
                         "gamma_h": gamma, "eta": eta, "status": "ok"})
    return rows


def run_experiment(cfg: ExperimentConfig) -> list:
    """All CSV rows of one configured sweep, in deterministic order."""
    if cfg.experiment == "diagnostics":
        return _diagnostics_rows(cfg)
    rows = []
    for scheme in cfg.schemes:
        kappas = (None,) if scheme in STOKES_SCHEMES else cfg.kappas
        for kappa in kappas:
            case = _case_for(cfg, scheme, kappa)
            result = convergence_study(
                case, scheme, cfg.N, diagonal=cfg.diagonal, tau=cfg.tau,
                n_steps=cfg.n_steps, experiment=cfg.experiment)
            rows.extend(result.rows)
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "%.6e" % value
    return str(value)


def _header_lines(cfg: ExperimentConfig) -> list:
    mat = {"lam": 2.0, "mu": 1.0, "mu_f": 1.0, "alpha": 1.0, "M": 1e6,
           "nu": 1.0}
    mat.update(cfg.material)
    pairs = [("experiment", cfg.experiment),
             ("schemes", " ".join(cfg.schemes)),
             ("N", " ".join(str(n) for n in cfg.N)),
             ("kappa", " ".join("%g" % k for k in cfg.kappas)),
             ("diagonal", cfg.diagonal),
             ("tau", "%g" % cfg.tau), ("t_max", "%g" % cfg.t_max),
             ("seed", str(cfg.seed))]
    pairs += [(k, "%g" % v) for k, v in sorted(mat.items())]
    return [f"# {k}={v}" for k, v in pairs]


def write_csv(rows, cfg: ExperimentConfig, path: Path) -> None:
    lines = _header_lines(cfg)
    lines.append(",".join(CSV_COLUMNS))
    for row in rows:
        lines.append(",".join(_fmt(row.get(c)) for c in CSV_COLUMNS))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def read_csv(path) -> list:
    """Rows of a results CSV back as dicts with floats restored."""
    path = Path(path)
    if not path.exists():
        raise CLIError(f"{path}: not found")
    lines = path.read_text().splitlines()
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body:
        raise CLIError(f"{path}: no rows")
    columns = body[0].split(",")
    rows = []
    for ln in body[1:]:
        cells = ln.split(",")
        row = {}
        for key, cell in zip(columns, cells):
            if cell == "":
                row[key] = None
            elif key in ("experiment", "scheme", "status", "diagonal"):
                row[key] = cell
            elif key == "N":
                row[key] = int(cell)
            else:
                row[key] = float(cell)
        rows.append(row)
    if not rows:
        raise CLIError(f"{path}: no data rows")
    return rows


def dump_first_matrix(cfg: ExperimentConfig, path: Path) -> Path:
    """Monolithic matrix of the sweep's first cell, MatrixMarket coordinates."""
    from scipy.io import mmwrite

    scheme = cfg.schemes[0]
    mesh = build_structured_unit_square(cfg.N[0], cfg.diagonal)
    layout = build_dof_layout(mesh, enrich=(scheme != "P1"))
    case = _case_for(cfg, scheme, cfg.kappas[0])
    if scheme in STOKES_SCHEMES:
        variant = "enriched" if scheme == "AS" else "diagonal"
        system = assemble_stokes(mesh, case.params, layout, variant)
    else:
        blocks = assemble_biot_blocks(mesh, case.params, layout)
        variant = "diagonal" if scheme == "AD" else "enriched"
        system = build_biot_system(blocks, variant, cfg.tau)
    path.parent.mkdir(parents=True, exist_ok=True)
    mmwrite(path, system.matrix.tocoo())
    return path


def dump_final_state(cfg: ExperimentConfig, path: Path) -> Path:
    """Step the sweep's first cell to t_max and checkpoint its state."""
    from .verify import _solve_biot

    scheme = cfg.schemes[0]
    if scheme in STOKES_SCHEMES:
        raise CLIError("state checkpoints need a time-stepping scheme "
                       "(P1, A or AD first in --schemes)")
    mesh = build_structured_unit_square(cfg.N[0], cfg.diagonal)
    layout = build_dof_layout(mesh, enrich=(scheme != "P1"))
    case = _case_for(cfg, scheme, cfg.kappas[0])
    _, state = _solve_biot(mesh, layout, case, scheme, cfg.tau, cfg.n_steps,
                           "interpolate-exact")
    save_state(state, path)
    return path


def _fit_slope(h, e):
    """Least-squares slope of log e against log h with its standard error."""
    x = np.log(np.asarray(h, dtype=float))
    y = np.log(np.asarray(e, dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, residual, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = max(len(x) - 2, 1)
    var = (residual[0] / dof if residual.size else 0.0) \
        / np.sum((x - x.mean()) ** 2)
    return float(coef[0]), float(np.sqrt(var))


def plot_csv(path, out_dir=None, echo=print) -> list:
    """One SVG per error column: log-log error vs h with a slope-1 guide."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "bubblefem"

    rows = read_csv(path)
    usable = [r for r in rows if r.get("status") == "ok"]
    for r in rows:
        if r.get("status") != "ok":
            print(f"warning: skipping row N={r.get('N')} "
                  f"({r.get('status')})", file=sys.stderr)
    if not usable:
        raise CLIError(f"{path}: no usable rows")
    path = Path(path)
    out_dir = Path(out_dir) if out_dir else path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for col in ("err_u_energy", "err_p_l2", "err_w_l2"):
        groups = {}
        for r in usable:
            if r.get(col) is None or r[col] <= 0:
                continue
            label = r["scheme"]
            if r.get("kappa") is not None:
                label += " k=%g" % r["kappa"]
            groups.setdefault(label, []).append((r["h"], r[col]))
        if not groups:
            continue
        fig, ax = plt.subplots(figsize=(5, 4))
        h_all = []
        e_all = []
        for label in sorted(groups):
            pts = sorted(groups[label])
            h = [p[0] for p in pts]
            e = [p[1] for p in pts]
            h_all += h
            e_all += e
            ax.loglog(h, e, "o-", label=label)
            if len(h) >= 2:
                slope, err = _fit_slope(h, e)
                echo(f"{col} {label}: fitted slope {slope:.2f} +- {err:.2f}")
        # slope-1 reference triangle anchored at the coarse end
        h1, h0 = max(h_all), max(h_all) / 2.0
        e1 = max(e_all)
        ax.loglog([h0, h1, h1, h0], [e1 / 2.0, e1, e1 / 2.0, e1 / 2.0],
                  "k-", linewidth=0.8)
        ax.text(h1 * 1.03, e1 * 0.7, "1", fontsize=8)
        ax.set_xlabel("h")
        ax.set_ylabel(col)
        ax.legend(fontsize=8)
        ax.grid(True, which="both", linewidth=0.3)
        target = out_dir / f"{path.stem}_{col}.svg"
        fig.savefig(target, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(target)
    return written


def _summarize(rows, echo=print):
    echo(f"{'scheme':>6} {'kappa':>8} {'N':>4} {'err_u':>11} {'err_p':>11} "
         f"{'gamma_h':>9} status")
    for r in rows:
        kappa = "" if r.get("kappa") is None else "%g" % r["kappa"]
        cells = [("%.4e" % r[c]) if r.get(c) is not None else "-"
                 for c in ("err_u_energy", "err_p_l2")]
        gamma = ("%.3f" % r["gamma_h"]) if r.get("gamma_h") is not None else "-"
        echo(f"{r['scheme']:>6} {kappa:>8} {r['N']:>4} {cells[0]:>11} "
             f"{cells[1]:>11} {gamma:>9} {r['status']}")


def _cmd_run(args) -> int:
    cfg = build_config(args)
    rows = run_experiment(cfg)
    csv_path = cfg.out / f"{cfg.experiment}.csv"
    write_csv(rows, cfg, csv_path)
    _summarize(rows)
    print(f"wrote {csv_path}")
    if cfg.dump_matrix:
        target = dump_first_matrix(cfg, cfg.out / f"{cfg.experiment}_matrix.mtx")
        print(f"wrote {target}")
    if cfg.dump_state:
        target = dump_final_state(cfg, cfg.out / f"{cfg.experiment}_state.csv")
        print(f"wrote {target}")
    if cfg.experiment != "diagnostics" and not args.no_plots:
        for svg in plot_csv(csv_path, cfg.out):
            print(f"wrote {svg}")
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        print(f"{len(failed)} run(s) failed; see status column", file=sys.stderr)
        return 1
    return 0


def _cmd_plot(args) -> int:
    written = plot_csv(args.csv, args.out)
    for svg in written:
        print(f"wrote {svg}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bubblefem",
        description="Consolidation and Stokes benchmark sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a preset or configured sweep")
    run.add_argument("--preset", help=", ".join(sorted(PRESETS)))
    run.add_argument("--config", help="key=value config file")
    run.add_argument("--out", help="output directory (default: out)")
    run.add_argument("--mesh", help="comma list of subdivisions, e.g. 8,16")
    run.add_argument("--diagonal", choices=("right-down", "right-up"))
    run.add_argument("--schemes", help="comma list, e.g. A,AD")
    run.add_argument("--large", action="store_true",
                     help=f"include the N={LARGE_N} level")
    run.add_argument("--dump-matrix", action="store_true",
                     help="save the first assembled matrix (MatrixMarket)")
    run.add_argument("--dump-state", action="store_true",
                     help="save the first run's final state as dof,value CSV")
    run.add_argument("--seed", type=int, help="recorded in the CSV header")
    run.add_argument("--no-plots", action="store_true",
                     help="skip SVG generation")
    run.set_defaults(func=_cmd_run)

    plot = sub.add_parser("plot", help="plot an existing results CSV")
    plot.add_argument("csv")
    plot.add_argument("--out", help="output directory (default: CSV's)")
    plot.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver and IO failures: diagnostic, code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
