"""Pipeline driver: synth -> fit -> cluster -> estimate -> report.

Every stage is a subcommand reading a shared flat key-value config file
(``key = value`` lines, ``#`` comments) with CLI flags taking
precedence. Stages are deterministic for a given config and seed and
write through temp-file renames, so re-running a stage reproduces its
outputs byte for byte.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

Config keys (defaults in parentheses):
  data_dir          directory of run CSVs (<out_dir>/data)
  out_dir           workspace for all stage outputs (pipeline)
  window (25), stride (1)
  components        comma list of mixture sizes to sweep (3)
  gmm_seed (0), max_iter (500), tol (1e-6), init_mode (kmeanspp|random)
  q (1e-3), r (1e-2), p0 (1.0), x0_mode (first_measurement|zero)
  tr_diag (0.95)    stay probability of the sticky transition matrix
  tr_matrix         explicit row-stochastic matrix "p11,p12;p21,p22" (overrides tr_diag)
  tail (0.025)      per-side chi-squared tail probability
  seen, unseen      comma run-id lists (default: every run is seen)
  workers (1)       parallel (model-set, run) estimation jobs
  regimes           synth triples "a,b1,b2; a,b1,b2" (3-regime default)
  dwell (120), fixed_dwell (false)
  process_noise_std (0.01), measurement_noise_std (0.02)
  steps (358), runs (9), synth_seed (0), dt (0.1)
  input_amplitude (6.0), input_period_min (5), input_period_max (18)
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import consistency, gmm, imm, svgplot, synth, sysid
from .consistency import LabeledReport, NisSeries
from .kalman import run_kf
from .sysid import LinearModel
from .trajectory import IngestError, Trajectory, load_trajectories, save_trajectory

DEFAULT_REGIMES = ((0.5, -0.08, 0.08), (0.85, -0.03, 0.03), (0.97, -0.006, 0.006))

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class ConfigError(ValueError):
    """Invalid configuration file, flag, or referenced run id."""


@dataclass
class PipelineConfig:
    data_dir: str = ""
    out_dir: str = "pipeline"
    window: int = sysid.DEFAULT_WINDOW
    stride: int = sysid.DEFAULT_STRIDE
    components: tuple[int, ...] = (3,)
    gmm_seed: int = 0
    max_iter: int = gmm.DEFAULT_MAX_ITER
    tol: float = gmm.DEFAULT_TOL
    init_mode: str = "kmeanspp"
    q: float = sysid.DEFAULT_PROCESS_VAR
    r: float = sysid.DEFAULT_MEASUREMENT_VAR
    p0: float = 1.0
    x0_mode: str = "first_measurement"
    tr_diag: float = imm.DEFAULT_STAY_PROB
    tr_matrix: tuple[tuple[float, ...], ...] | None = None
    tail: float = consistency.DEFAULT_TAIL
    seen: tuple[str, ...] = ()
    unseen: tuple[str, ...] = ()
    workers: int = 1
    regimes: tuple[tuple[float, float, float], ...] = DEFAULT_REGIMES
    dwell: float = 120.0
    fixed_dwell: bool = False
    process_noise_std: float = 0.01
    measurement_noise_std: float = 0.02
    steps: int = 358
    runs: int = 9
    synth_seed: int = 0
    dt: float = 0.1
    input_amplitude: float = 6.0
    input_period_min: int = 5
    input_period_max: int = 18

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    @property
    def data(self) -> Path:
        return Path(self.data_dir) if self.data_dir else self.out / "data"


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_int_list(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {raw!r}") from None


def _parse_str_list(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _parse_regimes(raw: str) -> tuple[tuple[float, float, float], ...]:
    triples = []
    for chunk in raw.split(";"):
        if not chunk.strip():
            continue
        parts = chunk.split(",")
        if len(parts) != 3:
            raise ConfigError(f"regime must be three comma-separated numbers, got {chunk!r}")
        try:
            triples.append(tuple(float(p) for p in parts))
        except ValueError:
            raise ConfigError(f"regime values must be numeric, got {chunk!r}") from None
    if not triples:
        raise ConfigError("regimes list is empty")
    return tuple(triples)


def _parse_matrix(raw: str) -> tuple[tuple[float, ...], ...]:
    try:
        rows = tuple(
            tuple(float(cell) for cell in row.split(","))
            for row in raw.split(";")
            if row.strip()
        )
    except ValueError:
        raise ConfigError(f"matrix cells must be numeric, got {raw!r}") from None
    if not rows or any(len(row) != len(rows) for row in rows):
        raise ConfigError(f"transition matrix must be square, got {raw!r}")
    return rows


_KEY_PARSERS: dict[str, Callable[[str], object]] = {
    "data_dir": str,
    "out_dir": str,
    "window": int,
    "stride": int,
    "components": _parse_int_list,
    "gmm_seed": int,
    "max_iter": int,
    "tol": float,
    "init_mode": str,
    "q": float,
    "r": float,
    "p0": float,
    "x0_mode": str,
    "tr_diag": float,
    "tr_matrix": _parse_matrix,
    "tail": float,
    "seen": _parse_str_list,
    "unseen": _parse_str_list,
    "workers": int,
    "regimes": _parse_regimes,
    "dwell": float,
    "fixed_dwell": _parse_bool,
    "process_noise_std": float,
    "measurement_noise_std": float,
    "steps": int,
    "runs": int,
    "synth_seed": int,
    "dt": float,
    "input_amplitude": float,
    "input_period_min": int,
    "input_period_max": int,
}


def load_config_file(path: str | Path) -> dict[str, object]:
    """Parse a flat ``key = value`` config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, object] = {}
    for line_num, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path.name}, line {line_num}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _KEY_PARSERS:
            raise ConfigError(f"{path.name}, line {line_num}: unknown key {key!r}")
        try:
            values[key] = _KEY_PARSERS[key](raw.strip())
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(
                f"{path.name}, line {line_num}: bad value for {key!r}: {raw.strip()!r}"
            ) from None
    return values


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then config file, then explicit CLI flags."""
    config = PipelineConfig()
    if getattr(args, "config", None):
        config = replace(config, **load_config_file(args.config))
    overrides: dict[str, object] = {}
    flag_to_key = {
        "out": "out_dir",
        "data": "data_dir",
        "window": "window",
        "stride": "stride",
        "components": "components",
        "tail": "tail",
        "tr_diag": "tr_diag",
        "workers": "workers",
        "runs": "runs",
        "steps": "steps",
    }
    for flag, key in flag_to_key.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    seed = getattr(args, "seed", None)
    if seed is not None:
        overrides["synth_seed" if args.command == "synth" else "gmm_seed"] = seed
    config = replace(config, **overrides)
    _validate_config(config)
    return config


def _validate_config(config: PipelineConfig) -> None:
    if config.window < 3:
        raise ConfigError(f"window must be >= 3, got {config.window}")
    if config.stride < 1:
        raise ConfigError(f"stride must be >= 1, got {config.stride}")
    if not config.components or any(m < 1 for m in config.components):
        raise ConfigError(f"components must be positive integers, got {config.components}")
    if config.init_mode not in ("kmeanspp", "random"):
        raise ConfigError(f"init_mode must be 'kmeanspp' or 'random', got {config.init_mode!r}")
    if config.x0_mode not in ("first_measurement", "zero"):
        raise ConfigError(f"x0_mode must be 'first_measurement' or 'zero', got {config.x0_mode!r}")
    if not 0.0 < config.tail < 0.5:
        raise ConfigError(f"tail must be in (0, 0.5), got {config.tail}")
    if not 0.0 < config.tr_diag <= 1.0:
        raise ConfigError(f"tr_diag must be in (0, 1], got {config.tr_diag}")
    if config.q <= 0 or config.r <= 0 or config.p0 <= 0:
        raise ConfigError("q, r, and p0 must be positive")
    if config.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {config.workers}")
    overlap = set(config.seen) & set(config.unseen)
    if overlap:
        raise ConfigError(f"run ids listed as both seen and unseen: {sorted(overlap)}")


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _atomic_write_via(path: Path, writer: Callable[[Path], None]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _x0_for(config: PipelineConfig, trajectory: Trajectory) -> float:
    return 0.0 if config.x0_mode == "zero" else trajectory.samples[0].x_k


def _transition_for(config: PipelineConfig, n_models: int) -> np.ndarray | None:
    if config.tr_matrix is None:
        return None
    matrix = np.array(config.tr_matrix, dtype=float)
    if matrix.shape != (n_models, n_models):
        raise ConfigError(
            f"tr_matrix is {matrix.shape[0]}x{matrix.shape[1]} but the bank has {n_models} models"
        )
    return matrix


def _split_tag(config: PipelineConfig, run_id: str) -> str:
    """A run is seen exactly when it belongs to the fitting set."""
    if config.seen:
        return "seen" if run_id in config.seen else "unseen"
    return "unseen" if run_id in config.unseen else "seen"


def _fitting_runs(config: PipelineConfig, dataset: list[Trajectory]) -> list[Trajectory]:
    run_ids = {t.run_id for t in dataset}
    unknown = (set(config.seen) | set(config.unseen)) - run_ids
    if unknown:
        raise ConfigError(f"config references unknown run ids: {sorted(unknown)}")
    fitting = [t for t in dataset if _split_tag(config, t.run_id) == "seen"]
    if not fitting:
        raise ConfigError("the seen/unseen split leaves no runs to fit models on")
    return fitting


def cmd_synth(config: PipelineConfig) -> None:
    """Generate the synthetic corpus: run CSVs, label sidecars, manifest."""
    synth_config = synth.SynthConfig(
        regimes=config.regimes,
        dwell=config.dwell,
        process_noise_std=config.process_noise_std,
        measurement_noise_std=config.measurement_noise_std,
        steps=config.steps,
        runs=config.runs,
        seed=config.synth_seed,
        input_amplitude=config.input_amplitude,
        input_period=(config.input_period_min, config.input_period_max),
        fixed_dwell=config.fixed_dwell,
        dt=config.dt,
    )
    trajectories, labels = synth.generate(synth_config)
    produced = []
    for traj, run_labels in zip(trajectories, labels):
        data_path = config.data / f"{traj.run_id}.csv"
        _atomic_write_via(data_path, lambda tmp, t=traj: save_trajectory(t, tmp))
        labels_path = config.out / "labels" / f"{traj.run_id}.csv"
        _atomic_write_via(
            labels_path, lambda tmp, l=run_labels: synth.save_labels(l, config.dt, tmp)
        )
        produced += [data_path, labels_path]
    manifest = "".join(
        f"{p.relative_to(config.out) if p.is_relative_to(config.out) else p}\n"
        for p in sorted(produced)
    )
    _atomic_write_text(config.out / "manifest.txt", manifest)
    print(f"synth: wrote {len(trajectories)} runs to {config.data}")


def cmd_fit(config: PipelineConfig) -> None:
    """Fit the sliding-window model cloud and the pooled global model.

    Runs tagged unseen are held out of both fits; they only enter later
    as evaluation data.
    """
    dataset = load_trajectories(config.data)
    fitting = _fitting_runs(config, dataset)
    cloud = sysid.fit_local_models(fitting, window=config.window, stride=config.stride)
    _atomic_write_via(config.out / "models.csv", lambda tmp: sysid.write_model_cloud(cloud, tmp))
    global_model = sysid.fit_global(fitting, q=config.q, r=config.r)
    _atomic_write_via(
        config.out / "global_model.json", lambda tmp: sysid.write_global_model(global_model, tmp)
    )
    print(
        f"fit: {len(cloud)} local models from {len(fitting)} runs "
        f"({cloud.degenerate_windows} degenerate windows excluded), global a={global_model.a:.4f}"
    )


def cmd_cluster(config: PipelineConfig) -> None:
    """Fit one mixture per requested component count."""
    cloud = sysid.read_model_cloud(
        config.out / "models.csv", window=config.window, stride=config.stride
    )
    for m in config.components:
        params, trace = gmm.gmm_fit(
            cloud,
            n_components=m,
            seed=config.gmm_seed,
            max_iter=config.max_iter,
            tol=config.tol,
            init=config.init_mode,
        )
        _atomic_write_via(
            config.out / f"gmm_{m}.json",
            lambda tmp, p=params, t=trace: gmm.write_gmm_params(p, tmp, seed=config.gmm_seed, trace=t),
        )
        status = "converged" if trace.converged else "hit max_iter"
        print(f"cluster: M={m} {status} after {trace.iterations} updates")


def _baseline_rows(model: LinearModel, trajectory: Trajectory, config: PipelineConfig) -> str:
    outcomes = run_kf(model, trajectory, x0=_x0_for(config, trajectory), p0=config.p0)
    lines = ["k,z,x_hat,p_hat,nu"]
    for k, (sample, outcome) in enumerate(zip(trajectory.samples, outcomes)):
        nu = consistency.nis_step(outcome.innovation, outcome.innovation_var)
        lines.append(
            f"{k},{sample.x_next!r},{outcome.state.x!r},{outcome.state.p!r},{nu!r}"
        )
    return "\n".join(lines) + "\n"


def _imm_rows(models: Sequence[LinearModel], trajectory: Trajectory, config: PipelineConfig) -> str:
    outputs = imm.run_imm(
        models,
        trajectory,
        transition=_transition_for(config, len(models)),
        stay_prob=config.tr_diag,
        x0=_x0_for(config, trajectory),
        p0=config.p0,
    )
    header = ["k", "z", "x_hat", "p_hat"] + [f"w_{i + 1}" for i in range(len(models))] + ["nu"]
    lines = [",".join(header)]
    for k, (sample, output) in enumerate(zip(trajectory.samples, outputs)):
        nu = consistency.nis_step(*output.innovation_mix)
        cells = [str(k), repr(sample.x_next), repr(output.combined.x), repr(output.combined.p)]
        cells += [repr(float(w)) for w in output.weights]
        cells.append(repr(nu))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_estimate(config: PipelineConfig) -> None:
    """Run the baseline filter and each clustered bank over every run."""
    dataset = load_trajectories(config.data)
    run_ids = {t.run_id for t in dataset}
    unknown = (set(config.seen) | set(config.unseen)) - run_ids
    if unknown:
        raise ConfigError(f"config references unknown run ids: {sorted(unknown)}")

    stored = sysid.read_global_model(config.out / "global_model.json")
    global_model = LinearModel(a=stored.a, b1=stored.b1, b2=stored.b2, q=config.q, r=config.r)
    model_sets: list[tuple[str, list[LinearModel] | None]] = [("global", None)]
    for m in config.components:
        params = gmm.read_gmm_params(config.out / f"gmm_{m}.json")
        model_sets.append((f"m{m}", gmm.extract_models(params, q=config.q, r=config.r)))

    def job(label: str, models: list[LinearModel] | None, traj: Trajectory) -> tuple[Path, str]:
        path = config.out / "estimates" / f"estimate_{label}_{traj.run_id}.csv"
        if models is None:
            return path, _baseline_rows(global_model, traj, config)
        return path, _imm_rows(models, traj, config)

    tasks = [(label, models, traj) for label, models in model_sets for traj in dataset]
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(lambda t: job(*t), tasks))
    else:
        results = [job(*t) for t in tasks]
    for path, text in sorted(results):
        _atomic_write_text(path, text)
    print(f"estimate: wrote {len(results)} estimate files for {len(model_sets)} model sets")


def _read_estimate(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        columns: dict[str, list[float]] = {name: [] for name in reader.fieldnames or []}
        for record in reader:
            for name, value in record.items():
                columns[name].append(float(value))
    return {name: np.array(values) for name, values in columns.items()}


def _label_sort_key(label: str) -> tuple[int, int]:
    return (0, 0) if label == "global" else (1, int(label[1:]))


def _components_of(label: str) -> int:
    return 1 if label == "global" else int(label[1:])


def cmd_report(config: PipelineConfig) -> None:
    """Summarize innovation statistics and emit report JSON, CSV, and plots."""
    estimates_dir = config.out / "estimates"
    files = sorted(estimates_dir.glob("estimate_*.csv"))
    if not files:
        raise FileNotFoundError(f"no estimate files under {estimates_dir}")

    per_run: dict[tuple[str, str], dict[str, np.ndarray]] = {}
    for path in files:
        label, _, run_id = path.stem[len("estimate_") :].partition("_")
        per_run[(label, run_id)] = _read_estimate(path)
    run_ids = {run_id for _, run_id in per_run}
    unknown = (set(config.seen) | set(config.unseen)) - run_ids
    if unknown:
        raise ConfigError(f"config references unknown run ids: {sorted(unknown)}")

    reports_dir = config.out / "reports"
    plots_dir = reports_dir / "plots"
    entries = []
    pooled: dict[tuple[str, str], list[np.ndarray]] = {}
    for (label, run_id), columns in sorted(per_run.items()):
        tag = _split_tag(config, run_id)
        series = NisSeries(values=columns["nu"])
        entries.append(
            LabeledReport(label=label, run_id=run_id, report=consistency.nis_report(series, config.tail, tag))
        )
        pooled.setdefault((label, tag), []).append(columns["nu"])

    lower, upper = consistency.chi2_bounds(1, config.tail)
    for (label, tag), chunks in sorted(pooled.items()):
        combined = consistency.nis_report(
            NisSeries(values=np.concatenate(chunks)), config.tail, tag
        )
        _atomic_write_via(
            reports_dir / f"nis_report_{label}_{tag}.json",
            lambda tmp, rep=combined, lab=label: consistency.write_nis_report(
                rep, tmp, label=lab, n_components=_components_of(lab)
            ),
        )

    rows = consistency.compare_runs(entries)
    _atomic_write_via(reports_dir / "nis_summary.csv", lambda tmp: consistency.write_summary(rows, tmp))

    for (label, run_id), columns in sorted(per_run.items()):
        steps = columns["k"]
        chart = svgplot.line_chart(
            [("nis", steps, columns["nu"])],
            title=f"{label} on {run_id}: innovation consistency",
            x_label="step",
            y_label="normalized innovation squared",
            h_lines=[("lower", lower), ("upper", upper)],
        )
        _atomic_write_text(plots_dir / f"nis_{label}_{run_id}.svg", chart)
        weight_names = [name for name in columns if name.startswith("w_")]
        if len(weight_names) > 1:
            chart = svgplot.line_chart(
                [(name, steps, columns[name]) for name in sorted(weight_names, key=lambda n: int(n[2:]))],
                title=f"{label} on {run_id}: model weights",
                x_label="step",
                y_label="model probability",
            )
            _atomic_write_text(plots_dir / f"weights_{label}_{run_id}.svg", chart)

    labels = sorted({label for label, _ in pooled}, key=_label_sort_key)
    summary_by_key = {(row.label, row.dataset_tag): row for row in rows}
    categories = ("seen over", "seen under", "unseen over", "unseen under")
    values = []
    for tag, kind in (("seen", "over"), ("seen", "under"), ("unseen", "over"), ("unseen", "under")):
        row_values = []
        for label in labels:
            row = summary_by_key.get((label, tag))
            row_values.append(getattr(row, f"avg_count_{kind}") if row else 0.0)
        values.append(row_values)
    chart = svgplot.bar_chart(
        labels,
        categories,
        values,
        title="average out-of-band innovation counts per run",
        y_label="violations per run",
    )
    _atomic_write_text(plots_dir / "nis_violations.svg", chart)
    print(f"report: wrote {len(rows)} summary rows and plots to {reports_dir}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skidest",
        description="Identify local skid-steer motion models, cluster them, and run a multiple-model estimator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="output workspace directory")
        p.add_argument("--data", help="trajectory CSV directory")
        p.add_argument("--window", type=int, help="sliding-window length")
        p.add_argument("--stride", type=int, help="sliding-window stride")
        p.add_argument("--components", type=_parse_int_list, help="mixture sizes, e.g. 3,6,9")
        p.add_argument("--seed", type=int, help="stage RNG seed")
        p.add_argument("--tail", type=float, help="per-side chi-squared tail probability")
        p.add_argument("--tr-diag", dest="tr_diag", type=float, help="transition stay probability")
        p.add_argument("--workers", type=int, help="parallel estimation jobs")

    p_synth = sub.add_parser("synth", help="generate a synthetic regime-switching corpus")
    add_common(p_synth)
    p_synth.add_argument("--runs", type=int, help="number of runs to generate")
    p_synth.add_argument("--steps", type=int, help="transitions per run")
    p_synth.set_defaults(func=cmd_synth)

    p_fit = sub.add_parser("fit", help="fit local model cloud and global model")
    add_common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_cluster = sub.add_parser("cluster", help="fit mixtures over the model cloud")
    add_common(p_cluster)
    p_cluster.set_defaults(func=cmd_cluster)

    p_estimate = sub.add_parser("estimate", help="run baseline filter and model banks")
    add_common(p_estimate)
    p_estimate.set_defaults(func=cmd_estimate)

    p_report = sub.add_parser("report", help="summarize innovation statistics and plot")
    add_common(p_report)
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        args.func(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
