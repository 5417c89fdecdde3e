"""``pinn-is`` command line: run, compare and checkgrad.

Exit codes: 0 success, 1 gradient check failure, 2 configuration error,
3 training aborted.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import os
import subprocess
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from . import nn
from .geometry import GeometryFileError, DegenerateDomainError, sample_interior
from .importance import MODES
from .plots import write_chart
from .problems import DiffusionProblem, ElasticityProblem, MaterialProperties, PlaneStressProblem
from .problems.base import LossGraph
from .trainer import LossMonitor, TrainConfig, TrainingAborted, collocation_loss, train

THREADS_ENV = "PINN_IS_THREADS"
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, path, line, message):
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")
        self.line = line


@dataclass
class RunSpec:
    path: Path
    text: str
    train: TrainConfig
    eval_every: int = 10


# ------------------------------------------------------------------- config

_KEYS = {
    "problem": {"name", "geometry", "e", "nu", "weights", "split_residual_squares",
                "length_scale", "displacement_scale"},
    "network": {"hidden", "activation", "init_seed"},
    "training": {"mode", "n_collocation", "n_boundary", "n_seeds", "batch_size", "learning_rate",
                 "max_iterations", "tolerance", "seed", "halton_scramble", "boundary_generator",
                 "eval_every"},
}


def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number, plus (section, None) for headers."""
    where, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            where[(section, None)] = no
        elif "=" in line and section is not None:
            where[(section, line.split("=", 1)[0].strip().lower())] = no
    return where


class _Reader:
    def __init__(self, path, text):
        self.path = path
        self.lines = _line_index(text)
        self.cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            self.cp.read_string(text, source=str(path))
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            message = exc.message.splitlines()[0]
            if isinstance(exc, configparser.MissingSectionHeaderError):
                message = "expected a [section] header before any key"
            elif isinstance(exc, configparser.ParsingError) and exc.errors:
                line = exc.errors[0][0]
                bad = text.splitlines()[line - 1].strip()
                message = f"cannot parse {bad!r} (expected key = value)"
            raise ConfigError(path, line, message) from exc
        for section in self.cp.sections():
            if section not in _KEYS:
                raise self.error(section, None, f"unknown section [{section}]")
            for key in self.cp[section]:
                if key not in _KEYS[section]:
                    raise self.error(section, key, f"unknown key {key!r} in [{section}]")

    def error(self, section, key, message):
        return ConfigError(self.path, self.lines.get((section, key)), message)

    def has(self, section, key):
        return self.cp.has_option(section, key)

    def get(self, section, key, conv=str, default=None):
        if not self.has(section, key):
            if default is None:
                line = self.lines.get((section, None))
                raise ConfigError(self.path, line, f"missing key {key!r} in [{section}]")
            return default
        raw = self.cp.get(section, key)
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise self.error(section, key, f"bad value for {key}: {raw!r} ({exc})") from exc


def _floats(raw: str) -> tuple:
    return tuple(float(v) for v in raw.replace(",", " ").split())


def _ints(raw: str) -> tuple:
    return tuple(int(v) for v in raw.replace(",", " ").split())


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _optional_int(raw: str):
    return None if raw.strip().lower() in ("", "none") else int(raw)


def _build_problem(r: _Reader):
    name = r.get("problem", "name").strip().lower()
    if name == "diffusion":
        w = r.get("problem", "weights", _floats, (500.0, 500.0))
        if len(w) != 2:
            raise r.error("problem", "weights", "diffusion needs two weights")
        return DiffusionProblem(*w)
    if name == "elasticity":
        props = MaterialProperties(r.get("problem", "e", float, 0.25), r.get("problem", "nu", float, 0.2))
        w = r.get("problem", "weights", _floats, (1.0,))
        if len(w) != 1:
            raise r.error("problem", "weights", "elasticity takes one boundary weight")
        geometry = None
        if r.has("problem", "geometry"):
            geometry = (Path(r.path).parent / r.get("problem", "geometry").strip()).resolve()
            if not geometry.is_file():
                raise r.error("problem", "geometry", f"geometry file not found: {geometry}")
        try:
            return ElasticityProblem(props, boundary_weight=w[0], geometry_file=geometry,
                                     split_residual_squares=r.get(
                                         "problem", "split_residual_squares", _bool, False))
        except (GeometryFileError, DegenerateDomainError) as exc:
            raise r.error("problem", "geometry", str(exc)) from exc
    if name == "planestress":
        kw = {}
        if r.has("problem", "weights"):
            kw["weights"] = r.get("problem", "weights", _floats)
            if len(kw["weights"]) != 9:
                raise r.error("problem", "weights", "plane stress needs nine weights")
        return PlaneStressProblem(
            E=r.get("problem", "e", float, 210_000.0), nu=r.get("problem", "nu", float, 0.3),
            length_scale=r.get("problem", "length_scale", float, 35.0),
            displacement_scale=r.get("problem", "displacement_scale", float, 1.5), **kw)
    raise r.error("problem", "name", f"unknown problem {name!r}")


def load_config(path) -> RunSpec:
    """Parse a run configuration; every failure is a ConfigError with a line number."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(path, None, f"cannot read config ({exc.strerror})") from exc
    r = _Reader(path, text)
    for section in ("problem", "network", "training"):
        if not r.cp.has_section(section):
            raise ConfigError(path, None, f"missing section [{section}]")
    problem = _build_problem(r)
    try:
        network = nn.NetworkConfig(
            problem.input_dim, problem.output_dim,
            r.get("network", "hidden", _ints, (32, 32, 32, 32)),
            r.get("network", "activation", str, "sine").strip().lower(),
            r.get("network", "init_seed", int, 0),
        )
    except ValueError as exc:
        raise r.error("network", "activation", str(exc)) from exc
    mode = r.get("training", "mode", str, "pwc-loss").strip().lower()
    if mode not in MODES:
        raise r.error("training", "mode", f"mode must be one of {', '.join(MODES)}")
    n = r.get("training", "n_collocation", int)
    try:
        cfg = TrainConfig(
            problem=problem,
            network=network,
            n_collocation=n,
            n_boundary=r.get("training", "n_boundary", int, n),
            n_seeds=r.get("training", "n_seeds", int),
            batch_size=r.get("training", "batch_size", int),
            learning_rate=r.get("training", "learning_rate", float),
            max_iterations=r.get("training", "max_iterations", int),
            tolerance=r.get("training", "tolerance", float, 0.0),
            sampling_mode=mode,
            rng_seed=r.get("training", "seed", int, 0),
            halton_scramble=r.get("training", "halton_scramble", _optional_int, "none")
            if r.has("training", "halton_scramble") else None,
            boundary_generator=r.get("training", "boundary_generator", str, "uniform-random").strip(),
        )
    except ValueError as exc:
        raise r.error("training", None, str(exc)) from exc
    return RunSpec(path, text, cfg, r.get("training", "eval_every", int, 10))


# ---------------------------------------------------------------------- I/O


def csv_header(config: TrainConfig) -> list[str]:
    return ["iter", "wall_s", "total_loss", *config.problem.term_names, "proposal_entropy"]


def write_records(path, config: TrainConfig, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(config))
        for rec in records:
            w.writerow([rec.iteration, f"{rec.wall_clock_seconds:.17g}", f"{rec.total_loss:.17g}",
                        *(f"{v:.17g}" for v in rec.term_losses), f"{rec.proposal_entropy:.17g}"])


def read_records(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: np.array([float(r[k]) for r in body]) for k, h in enumerate(header)}


def plot_records(csv_path, out_dir, label: str) -> None:
    """Both loss plots, computed from the CSV alone."""
    cols = read_records(csv_path)
    out_dir = Path(out_dir)
    write_chart(out_dir / "loss_vs_iter.svg", {label: (cols["iter"], cols["total_loss"])},
                "training loss", "iteration")
    write_chart(out_dir / "loss_vs_time.svg", {label: (cols["wall_s"], cols["total_loss"])},
                "training loss", "wall time [s]")


def _git_version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def write_manifest(path, spec: RunSpec, cfg: TrainConfig, outputs: dict, started, finished) -> None:
    lines = [
        f"pinn-is {__version__} (git {_git_version()})",
        f"config_path = {spec.path.resolve()}",
        f"problem = {cfg.problem.name}",
        f"sampling_mode = {cfg.sampling_mode}",
        f"rng_seed = {cfg.rng_seed}",
        f"init_seed = {cfg.network.init_seed}",
        f"started = {started}",
        f"finished = {finished}",
    ]
    lines += [f"output.{k} = {v}" for k, v in outputs.items()]
    lines += ["", "# config snapshot", spec.text.rstrip("\n")]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _run_once(spec: RunSpec, cfg: TrainConfig, out_dir: Path, label: str, monitor=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _now()
    code = EXIT_OK
    try:
        params, records = train(cfg, callback=monitor)
    except TrainingAborted as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        params, records, code = exc.params, exc.records, EXIT_ABORT
    outputs = {"records": out_dir / "records.csv", "checkpoint": out_dir / "checkpoint.txt",
               "loss_vs_iter": out_dir / "loss_vs_iter.svg",
               "loss_vs_time": out_dir / "loss_vs_time.svg"}
    write_records(outputs["records"], cfg, records)
    nn.save_checkpoint(params, outputs["checkpoint"])
    plot_records(outputs["records"], out_dir, label)
    write_manifest(out_dir / "manifest.txt", spec, cfg, outputs, started, _now())
    return code, params, records


# ----------------------------------------------------------------- commands


def cmd_run(config_path, output_dir) -> int:
    spec = load_config(config_path)
    code, _, records = _run_once(spec, spec.train, Path(output_dir), spec.train.sampling_mode)
    if code == EXIT_OK:
        print(f"{len(records)} iterations, final loss {records[-1].total_loss:.6g}"
              if records else "0 iterations")
    return code


def _median_curve(xs_list, ys_list):
    k = min(len(y) for y in ys_list)
    xs = np.median(np.array([x[:k] for x in xs_list]), axis=0)
    ys = np.median(np.array([y[:k] for y in ys_list]), axis=0)
    return xs, ys


def cmd_compare(config_path, modes, repeats: int, output_dir) -> int:
    """Each mode trained ``repeats`` times; repeat r uses seeds base + r for all modes."""
    spec = load_config(config_path)
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise ConfigError(config_path, None, f"unknown mode(s): {', '.join(bad)}")
    if repeats < 1:
        raise ConfigError(config_path, None, "repeats must be >= 1")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = spec.train
    curves, summary = {}, []
    for mode in modes:
        runs = []
        for r in range(repeats):
            net = replace(base.network, init_seed=base.network.init_seed + r)
            cfg = replace(base, sampling_mode=mode, rng_seed=base.rng_seed + r, network=net)
            mon = LossMonitor(cfg, spec.eval_every)
            code, params, _ = _run_once(spec, cfg, out / mode / f"run_{r}", mode, mon)
            if code != EXIT_OK:
                return code
            runs.append((mon, collocation_loss(cfg, params)))
        it, loss = _median_curve([np.array(m.iterations) for m, _ in runs],
                                 [np.array(m.loss) for m, _ in runs])
        wall, _ = _median_curve([np.array(m.wall) for m, _ in runs],
                                [np.array(m.loss) for m, _ in runs])
        curves[mode] = (it, wall, loss)
        with open(out / f"median_{mode}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "wall_s", "loss"])
            for a, b, c in zip(it, wall, loss):
                w.writerow([int(a), f"{b:.17g}", f"{c:.17g}"])
        finals = np.array([f for _, f in runs])
        q25, med, q75 = np.percentile(finals, [25, 50, 75])
        summary.append((mode, med, q25, q75, q75 - q25))
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "final_loss_median", "q25", "q75", "iqr"])
        for row in summary:
            w.writerow([row[0], *(f"{v:.17g}" for v in row[1:])])
    write_chart(out / "loss_vs_iter.svg", {m: (c[0], c[2]) for m, c in curves.items()},
                "median loss", "iteration")
    write_chart(out / "loss_vs_time.svg", {m: (c[1], c[2]) for m, c in curves.items()},
                "median loss", "wall time [s]")
    for row in summary:
        print(f"{row[0]:<11} median {row[1]:.6g}  IQR {row[4]:.3g}")
    return EXIT_OK


def gradient_audit(cfg: TrainConfig, n_points: int = 8, seed: int = 0, max_coords=None,
                   h: float = 1e-4):
    """Autodiff vs central-difference gradient of the mean composite loss.

    Returns ``(max_relative_error, per_coordinate_errors)``; errors are
    scaled by the largest gradient magnitude.
    """
    problem = cfg.problem
    rng = np.random.default_rng(seed)
    sample = {problem.groups[0]: problem.point_data(
        problem.groups[0], sample_interior(problem.domain, n_points, "uniform-random", seed=seed))}
    for k, g in enumerate(problem.groups[1:], 1):
        sample[g] = problem.point_data(g, problem.sample_group(g, n_points, seed=seed + k))
    graph = LossGraph(problem, cfg.network, sample)
    params = nn.init(cfg.network)
    params = nn.Parameters(params.weights, [rng.uniform(-0.5, 0.5, b.shape) for b in params.biases])
    weights = np.full(n_points, 1.0 / n_points)
    _, grads, _ = graph.objective_and_grad(params, sample, weights)
    auto = np.concatenate([g.ravel() for g in grads])
    inputs = graph._inputs(sample, weights)

    def f(theta):
        ws = ad.evaluate(graph.tape, inputs, params.with_vector(theta).flat_list(), [graph.objective],
                         keep=False)
        return float(ws[graph.objective.id])

    theta = params.to_vector()
    coords = np.arange(theta.size)
    if max_coords is not None and max_coords < theta.size:
        coords = np.sort(rng.choice(theta.size, size=max_coords, replace=False))
    fd = ad.central_difference_gradient(f, theta, h=h, coords=coords)
    scale = max(np.abs(auto[coords]).max(), np.abs(fd[coords]).max(), 1e-300)
    errs = np.zeros(theta.size)
    errs[coords] = np.abs(auto[coords] - fd[coords]) / scale
    return float(errs.max()), errs


def cmd_checkgrad(config_path, tol: float = 1e-4, n_points: int = 8, max_coords=None) -> int:
    spec = load_config(config_path)
    try:
        err, errs = gradient_audit(spec.train, n_points=n_points, max_coords=max_coords)
    except ad.UnsupportedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"max relative error {err:.3e}")
    if err < tol:
        return EXIT_OK
    bad = np.flatnonzero(errs >= tol)
    print(f"{len(bad)} coordinate(s) exceed {tol:g}:")
    for k in bad[:50]:
        print(f"  theta[{k}] relative error {errs[k]:.3e}")
    return EXIT_CHECK


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pinn-is", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="train once from a config file")
    run.add_argument("config")
    run.add_argument("-o", "--output", required=True)
    cmp_ = sub.add_parser("compare", help="compare sampling modes over repeated runs")
    cmp_.add_argument("config")
    cmp_.add_argument("--modes", default="uniform,pwc-loss")
    cmp_.add_argument("--repeats", type=int, default=5)
    cmp_.add_argument("-o", "--output", required=True)
    chk = sub.add_parser("checkgrad", help="finite-difference audit of parameter gradients")
    chk.add_argument("config")
    chk.add_argument("--tol", type=float, default=1e-4)
    chk.add_argument("--points", type=int, default=8)
    chk.add_argument("--max-coords", type=int, default=None)
    return p


def _dispatch(args) -> int:
    try:
        if args.command == "run":
            return cmd_run(args.config, args.output)
        if args.command == "compare":
            modes = [m.strip() for m in args.modes.split(",") if m.strip()]
            return cmd_compare(args.config, modes, args.repeats, args.output)
        return cmd_checkgrad(args.config, args.tol, args.points, args.max_coords)
    except (ConfigError, ad.UnsupportedError, ad.DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get(THREADS_ENV)
    if threads:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=int(threads)):
            return _dispatch(args)
    return _dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
