"""Experiment harness: INI configuration, sweeps and the command bodies.

Every command is a pure function of its :class:`ExperimentConfig`; seeds
for the phantom, operators and noise are derived from ``(seed, tag)`` so a
sweep point gives the same numbers whether it runs alone, serially or in a
worker pool.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import os
import re
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from io import StringIO
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import io, plotting
from .errors import ConfigError, NotConverged, RankDeficient
from .model import GroundTruth, PhantomSpec, generate_phantom
from .sampling import (
    CommonOperator,
    MeasurementSet,
    PerColumnOperators,
    add_noise,
    gaussian_operator,
    measure,
    per_column_operators,
    radial_fourier_operator,
)
from .solver import (
    AdmmParams,
    BlockSystem,
    RecoveryResult,
    recovery_error,
    solve_joint_sparse_tv,
    solve_least_squares,
    solve_tv,
)
from .subspace import estimate_row_subspace, projection_error
from .verify import CheckResult, measurement_budget, verification_suite

# seed tags keep the random streams of one experiment independent
_TAG_PHI, _TAG_A, _TAG_NOISE = 1, 2, 3


def derive_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


# -- configuration ----------------------------------------------------------


@dataclass
class PhantomConfig:
    image_side: int = 32
    N: int = 40
    r: int = 5
    k: int = 64
    layout: str = "band"
    sigma_min: float = 1.0
    sigma_max: float = 10.0

    @property
    def n(self) -> int:
        return self.image_side**2

    def spec(self, seed: int) -> PhantomSpec:
        return PhantomSpec(
            n=self.n, N=self.N, r=self.r, k=self.k, seed=seed, image_side=self.image_side,
            layout=self.layout, sigma_range=(self.sigma_min, self.sigma_max),
        )


@dataclass
class OperatorConfig:
    """Sampling settings.

    ``kind`` selects Gaussian or radial operators for both the common and
    the per-column part. ``samples_per_line`` accepts an integer, ``side``
    (one sample per grid column, lines reach radius pi) or ``corners``
    (``ceil(sqrt(2) * side)`` samples, lines reach the k-space corners).
    """

    kind: str = "radial"
    common_s: int = 5
    per_column_s: int = 20
    common_lines: int = 4
    variable_lines: int = 5
    samples_per_line: str = "side"
    angle_offset: float = 0.0

    def spl(self, image_side: int) -> int:
        v = str(self.samples_per_line).strip().lower()
        if v == "side":
            return image_side
        if v == "corners":
            return math.ceil(math.sqrt(2.0) * image_side)
        try:
            out = int(v)
        except ValueError:
            raise ConfigError(f"samples_per_line must be an integer, 'side' or 'corners', got {v!r}") from None
        if out < 1:
            raise ConfigError("samples_per_line must be positive")
        return out


@dataclass
class SolverConfig:
    method: str = "joint"
    lam: float = 1e-7
    lam_grid: list = field(default_factory=lambda: [1e-7])
    rho: float = 1e-5
    max_iters: int = 300
    primal_tol: float = 1e-6
    dual_tol: float = 1e-6
    over_relaxation: float = 1.7
    cg_iters: int = 10
    cg_tol: float = 1e-10
    adaptive_rho: bool = False
    lam_start: Optional[float] = 1e-4
    continuation_iters: int = 150
    ls_tol: float = 1e-10
    ls_max_iters: int = 1000

    def params(self, lam: Optional[float] = None) -> AdmmParams:
        lam = self.lam if lam is None else lam
        # rho keeps its ratio to lam so lam/rho (the shrink threshold) is fixed
        rho = self.rho * lam / self.lam if self.lam > 0 else self.rho
        return AdmmParams(
            lam=lam, rho=rho, max_iters=self.max_iters, primal_tol=self.primal_tol,
            dual_tol=self.dual_tol, over_relaxation=self.over_relaxation, cg_iters=self.cg_iters,
            cg_tol=self.cg_tol, adaptive_rho=self.adaptive_rho, lam_start=self.lam_start,
            continuation_iters=self.continuation_iters,
        )


@dataclass
class SweepConfig:
    variable: str = ""
    values: list = field(default_factory=list)


@dataclass
class ExperimentConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    operator: OperatorConfig = field(default_factory=OperatorConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    noise: list = field(default_factory=lambda: [None])
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "out"
    rank_tol: float = 1e-8
    inject_deficient: bool = False
    threads: int = 1

    def with_value(self, dotted: str, value) -> "ExperimentConfig":
        """Copy with one ``section.key`` field replaced."""
        section, key = _split_field(dotted)
        sub = getattr(self, section)
        return dataclasses.replace(self, **{section: dataclasses.replace(sub, **{key: value})})


_SECTIONS = {"phantom": PhantomConfig, "operator": OperatorConfig, "solver": SolverConfig}


def _split_field(dotted: str) -> tuple[str, str]:
    if "." not in dotted:
        raise ConfigError(f"sweep variable {dotted!r} must look like section.key")
    section, key = dotted.split(".", 1)
    cls = _SECTIONS.get(section)
    if cls is None or key not in {f.name for f in dataclasses.fields(cls)}:
        raise ConfigError(f"sweep variable {dotted!r} does not name a config field")
    return section, key


_RANGE = re.compile(r"^(\d+)\s*-\s*(\d+)$")


def _parse_list(text: str, conv: Callable[[str], Any]) -> list:
    out = []
    for tok in text.replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        span = _RANGE.match(tok) if conv is int else None
        if span:
            out.extend(range(int(span.group(1)), int(span.group(2)) + 1))
        else:
            out.append(conv(tok))
    return out


def _noise_value(tok: str) -> Optional[float]:
    t = tok.strip().lower()
    if t in ("none", "inf", "noiseless", "clean"):
        return None
    return float(t)


def _convert(cls, key: str, raw: str):
    ftype = {f.name: f for f in dataclasses.fields(cls)}[key]
    default = ftype.default if ftype.default is not dataclasses.MISSING else ftype.default_factory()
    try:
        if key == "lam_grid":
            return _parse_list(raw, float)
        if key == "lam_start":
            return None if raw.strip().lower() in ("", "none") else float(raw)
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {cls.__name__}.{key}: {raw!r}") from exc


def _parse_bool(raw: str) -> bool:
    t = raw.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _sweep_value(dotted: str, raw: str):
    section, key = _split_field(dotted)
    return _convert(_SECTIONS[section], key, raw)


def default_config(command: str) -> ExperimentConfig:
    """Desk-scale defaults for each command (all overridable from the file)."""
    cfg = ExperimentConfig()
    if command == "subspace-sweep":
        cfg.operator = OperatorConfig(kind="gaussian")
        cfg.sweep = SweepConfig("operator.common_s", list(range(1, 11)))
        cfg.noise = [None, 35.0]
        cfg.seeds = list(range(20))
    elif command == "line-sweep":
        cfg.operator = OperatorConfig(kind="radial", samples_per_line="corners")
        # a smaller weight than the comparison default: the sweep reaches
        # determined sampling, where the regularisation bias is the error floor
        cfg.solver = SolverConfig(lam=1e-9, rho=1e-7, lam_grid=[1e-9])
        cfg.sweep = SweepConfig("operator.variable_lines", [1, 2, 3, 4, 6, 8])
        cfg.seeds = list(range(10))
    elif command == "recon-compare":
        cfg.operator = OperatorConfig(kind="radial", samples_per_line="side", variable_lines=5)
        cfg.solver = SolverConfig(lam_grid=[1e-7, 1e-6])
        cfg.noise = [None, 50.0]
        cfg.seeds = list(range(10))
    elif command in ("verify", "phantom", "recover"):
        pass
    else:
        raise ConfigError(f"unknown command {command!r}")
    return cfg


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keys are case sensitive (N vs n)
    return parser


def load_config(path: Optional[str], command: str) -> ExperimentConfig:
    """Command defaults overlaid with the INI file at ``path`` (if any)."""
    cfg = default_config(command)
    if path is None:
        return cfg
    parser = _parser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return apply_ini(cfg, parser)


def parse_config_text(text: str, command: str) -> ExperimentConfig:
    parser = _parser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return apply_ini(default_config(command), parser)


def apply_ini(cfg: ExperimentConfig, parser: configparser.ConfigParser) -> ExperimentConfig:
    known = set(_SECTIONS) | {"sweep", "noise", "run", "output"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
    for section, cls in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        names = {f.name for f in dataclasses.fields(cls)}
        updates = {}
        for key, raw in parser.items(section):
            if key not in names:
                raise ConfigError(f"unknown key {section}.{key}")
            updates[key] = _convert(cls, key, raw)
        setattr(cfg, section, dataclasses.replace(getattr(cfg, section), **updates))
    if parser.has_section("sweep"):
        variable = parser.get("sweep", "variable", fallback=cfg.sweep.variable).strip()
        raw = parser.get("sweep", "values", fallback=None)
        if raw is None:
            values = cfg.sweep.values if variable == cfg.sweep.variable else []
        else:
            values = [_sweep_value(variable, tok) for tok in raw.replace(";", ",").split(",") if tok.strip()]
        cfg.sweep = SweepConfig(variable, values)
    if parser.has_section("noise"):
        raw = parser.get("noise", "snr_db", fallback="none")
        try:
            cfg.noise = [_noise_value(t) for t in raw.split(",") if t.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad noise level list {raw!r}") from exc
    if parser.has_section("run"):
        try:
            if parser.has_option("run", "seeds"):
                cfg.seeds = _parse_list(parser.get("run", "seeds"), int)
            cfg.rank_tol = parser.getfloat("run", "rank_tol", fallback=cfg.rank_tol)
            cfg.inject_deficient = parser.getboolean("run", "inject_deficient", fallback=cfg.inject_deficient)
            cfg.threads = parser.getint("run", "threads", fallback=cfg.threads)
        except ValueError as exc:
            raise ConfigError(f"bad [run] entry: {exc}") from exc
    if parser.has_section("output"):
        cfg.output_dir = parser.get("output", "dir", fallback=cfg.output_dir)
    return cfg


def validate(cfg: ExperimentConfig, need_sweep: bool = False) -> None:
    if need_sweep:
        _split_field(cfg.sweep.variable)
        if not cfg.sweep.values:
            raise ConfigError("sweep value list is empty")
    if not cfg.seeds:
        raise ConfigError("seed list is empty")
    if not cfg.noise:
        raise ConfigError("noise list is empty")
    if cfg.operator.kind not in ("gaussian", "radial"):
        raise ConfigError(f"operator.kind must be gaussian or radial, got {cfg.operator.kind!r}")
    if cfg.solver.method not in ("joint", "tv", "ls"):
        raise ConfigError(f"solver.method must be joint, tv or ls, got {cfg.solver.method!r}")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    try:
        cfg.phantom.spec(cfg.seeds[0]).validate()
        cfg.solver.params()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.operator.spl(cfg.phantom.image_side)


def config_to_ini(cfg: ExperimentConfig) -> str:
    """Serialise a config so it can be embedded next to the data it produced."""
    parser = _parser()
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        parser[section] = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, list):
                v = ", ".join(repr(x) for x in v)
            parser[section][f.name] = "none" if v is None else str(v)
    parser["sweep"] = {"variable": cfg.sweep.variable, "values": ", ".join(str(v) for v in cfg.sweep.values)}
    parser["noise"] = {"snr_db": ", ".join("none" if v is None else repr(v) for v in cfg.noise)}
    parser["run"] = {"seeds": ", ".join(str(s) for s in cfg.seeds), "rank_tol": repr(cfg.rank_tol),
                     "inject_deficient": str(cfg.inject_deficient), "threads": str(cfg.threads)}
    parser["output"] = {"dir": cfg.output_dir}
    buf = StringIO()
    parser.write(buf)
    return buf.getvalue()


# -- shared pipeline pieces -------------------------------------------------


@dataclass
class Problem:
    """Phantom, operators and measurements of one experiment point."""

    gt: GroundTruth
    phi: CommonOperator
    a: Optional[PerColumnOperators]
    clean: MeasurementSet
    noisy: MeasurementSet


def build_operators(cfg: ExperimentConfig, seed: int, common_only: bool = False):
    ph, op = cfg.phantom, cfg.operator
    if op.kind == "gaussian":
        phi = gaussian_operator(op.common_s, ph.n, derive_seed(seed, _TAG_PHI))
        a = None if common_only else per_column_operators(
            "gaussian", ph.N, ph.n, op.per_column_s, seed=derive_seed(seed, _TAG_A))
    else:
        spl = op.spl(ph.image_side)
        phi = radial_fourier_operator(op.common_lines, spl, ph.image_side, op.angle_offset)
        a = None if common_only else per_column_operators(
            "radial", ph.N, ph.n, lines=op.variable_lines, samples_per_line=spl,
            image_side=ph.image_side, exclude=phi.kpoints)
    return phi, a


def build_problem(cfg: ExperimentConfig, seed: int, snr_db: Optional[float], common_only: bool = False) -> Problem:
    gt = generate_phantom(cfg.phantom.spec(seed))
    phi, a = build_operators(cfg, seed, common_only)
    if a is None:
        z = phi.phi @ gt.x.data
        clean = MeasurementSet(z=z, y=[np.zeros(0, np.complex128)] * cfg.phantom.N)
    else:
        clean = measure(gt.x, phi, a)
    noisy = add_noise(clean, snr_db, derive_seed(seed, _TAG_NOISE))
    return Problem(gt, phi, a, clean, noisy)


def run_solver(method: str, sys: BlockSystem, y: np.ndarray, cfg: SolverConfig, image_side: int,
               lam: Optional[float] = None) -> RecoveryResult:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        if method == "ls":
            return solve_least_squares(sys, y, tol=cfg.ls_tol, max_iters=cfg.ls_max_iters)
        solver = solve_joint_sparse_tv if method == "joint" else solve_tv
        return solver(sys, y, cfg.params(lam), image_side=image_side)


def recover_problem(cfg: ExperimentConfig, m: MeasurementSet, phi: CommonOperator, a: PerColumnOperators):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficient)
        est = estimate_row_subspace(m.z, rank=cfg.phantom.r, rank_tol=cfg.rank_tol)
    sys = BlockSystem(est, a, phi)
    return est, sys, m.stacked(include_common=True)


def run_points(fn: Callable, points: Sequence, threads: int = 1) -> list:
    """Evaluate ``fn`` over ``points``; results come back in input order."""
    if threads <= 1 or len(points) <= 1:
        return [fn(p) for p in points]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, points))


def _snr_label(snr: Optional[float]) -> str:
    return "noiseless" if snr is None else f"{snr:g} dB"


def _ensure_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {path!r} is not writable: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path!r} is not writable")
    return path


# -- subspace sweep ---------------------------------------------------------


def _subspace_point(args):
    cfg, value, seed, snr = args
    c = cfg.with_value(cfg.sweep.variable, value)
    prob = build_problem(c, seed, snr, common_only=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficient)
        est = estimate_row_subspace(prob.noisy.z, rank=c.phantom.r, rank_tol=c.rank_tol)
    return (value, prob.phi.s, seed, snr, projection_error(est.q, prob.gt.svd.V))


SUBSPACE_HEADER = ["sweep_value", "s", "seed", "snr_db", "projection_error"]


def cmd_subspace_sweep(cfg: ExperimentConfig) -> list[tuple]:
    """Projection error of the estimated row space over the sweep grid.

    Writes ``subspace_sweep.csv`` and ``subspace_sweep.png``.
    """
    validate(cfg, need_sweep=True)
    out = _ensure_dir(cfg.output_dir)
    points = [(cfg, v, s, snr) for v in cfg.sweep.values for s in cfg.seeds for snr in cfg.noise]
    rows = run_points(_subspace_point, points, cfg.threads)
    io.write_table(os.path.join(out, "subspace_sweep.csv"), SUBSPACE_HEADER, rows)
    plotting.median_curve_plot(
        os.path.join(out, "subspace_sweep.png"), [r[1] for r in rows], [r[4] for r in rows],
        [_snr_label(r[3]) for r in rows], xlabel="common measurements s", ylabel="projection error",
        title=f"rank {cfg.phantom.r}",
    )
    return rows


# -- line sweep -------------------------------------------------------------


def _line_point(args):
    cfg, value, seed, snr = args
    c = cfg.with_value(cfg.sweep.variable, value)
    prob = build_problem(c, seed, snr)
    _, sys, y = recover_problem(c, prob.noisy, prob.phi, prob.a)
    t0 = time.perf_counter()
    res = run_solver(c.solver.method, sys, y, c.solver, c.phantom.image_side)
    elapsed = time.perf_counter() - t0
    err = recovery_error(res.x_hat, prob.gt.x.data)
    total = prob.phi.s + sum(prob.a.sizes) / c.phantom.N
    return (c.operator.variable_lines, seed, snr, err, total, res.iterations, elapsed)


LINE_HEADER = ["lines_per_frame", "seed", "snr_db", "recovery_error", "samples_per_frame", "iterations", "seconds"]


def cmd_line_sweep(cfg: ExperimentConfig) -> list[tuple]:
    """Recovery error against variable lines per frame.

    Writes ``line_sweep.csv`` (one row per run), ``line_sweep_median.csv``
    and ``line_sweep.png``.
    """
    if not cfg.sweep.variable:
        cfg = dataclasses.replace(cfg, sweep=SweepConfig("operator.variable_lines", cfg.sweep.values))
    validate(cfg, need_sweep=True)
    if cfg.operator.kind != "radial":
        raise ConfigError("line-sweep needs radial operators")
    out = _ensure_dir(cfg.output_dir)
    points = [(cfg, v, s, snr) for v in cfg.sweep.values for s in cfg.seeds for snr in cfg.noise]
    rows = run_points(_line_point, points, cfg.threads)
    io.write_table(os.path.join(out, "line_sweep.csv"), LINE_HEADER, rows)
    med = median_table(rows, key=lambda r: (r[0], r[2]), value=lambda r: r[3])
    io.write_table(os.path.join(out, "line_sweep_median.csv"), ["lines_per_frame", "snr_db", "median_recovery_error"],
                   [(k[0], k[1], v) for k, v in med])
    plotting.median_curve_plot(
        os.path.join(out, "line_sweep.png"), [r[0] for r in rows], [r[3] for r in rows],
        [_snr_label(r[2]) for r in rows], xlabel="variable radial lines per frame",
        ylabel="normalised recovery error", title=f"{cfg.operator.common_lines} common lines",
    )
    return rows


def median_table(rows, key: Callable, value: Callable) -> list[tuple]:
    """Median of ``value`` per distinct ``key``; keys sort with ``None`` last.

    ``key`` may return a scalar or a tuple.
    """
    groups: dict = {}
    for r in rows:
        groups.setdefault(key(r), []).append(value(r))

    def order_key(k):
        parts = k if isinstance(k, tuple) else (k,)
        return tuple((x is None, x if x is not None else 0) for x in parts)

    order = sorted(groups, key=order_key)
    return [(k, float(np.median(groups[k]))) for k in order]


# -- solver comparison ------------------------------------------------------

METHODS = ("ls", "tv", "joint")
METHOD_LABELS = {"ls": "no regularisation", "tv": "TV", "joint": "joint sparse TV"}


def _compare_point(args):
    cfg, seed, snr = args
    prob = build_problem(cfg, seed, snr)
    _, sys, y = recover_problem(cfg, prob.noisy, prob.phi, prob.a)
    truth = prob.gt.x.data
    rows, best = [], {}
    for method in METHODS:
        grid = [0.0] if method == "ls" else cfg.solver.lam_grid
        winner = None
        for lam in grid:
            res = run_solver(method, sys, y, cfg.solver, cfg.phantom.image_side, lam=lam or None)
            err = recovery_error(res.x_hat, truth)
            if winner is None or err < winner[1]:
                winner = (lam, err, res)
        rows.append((method, snr, seed, winner[0], winner[1], winner[2].iterations))
        best[method] = winner[2].x_hat
    return rows, best, truth


COMPARE_HEADER = ["method", "snr_db", "seed", "lam", "recovery_error", "iterations"]


def cmd_recon_compare(cfg: ExperimentConfig) -> list[tuple]:
    """No regularisation vs TV vs joint-sparse TV on identical measurements.

    Regularised methods report their best ``lam`` from ``solver.lam_grid``
    per seed. Writes ``recon_compare.csv``, ``recon_compare_summary.csv``,
    per-method reconstructions (``.jslr``) and PGM images for the first
    seed, and ``recon_compare.png``.
    """
    validate(cfg)
    if cfg.operator.kind != "radial":
        raise ConfigError("recon-compare needs radial operators")
    out = _ensure_dir(cfg.output_dir)
    points = [(cfg, s, snr) for snr in cfg.noise for s in cfg.seeds]
    results = run_points(_compare_point, points, cfg.threads)
    rows = [row for r in results for row in r[0]]
    io.write_table(os.path.join(out, "recon_compare.csv"), COMPARE_HEADER, rows)
    med = median_table(rows, key=lambda r: (r[0], r[1]), value=lambda r: r[4])
    io.write_table(os.path.join(out, "recon_compare_summary.csv"), ["method", "snr_db", "median_recovery_error"],
                   [(k[0], k[1], v) for k, v in med])

    side = cfg.phantom.image_side
    first_seed = cfg.seeds[0]
    for (c, seed, snr), (_, best, truth) in zip(points, results):
        if seed != first_seed:
            continue
        tag = "clean" if snr is None else f"snr{snr:g}"
        vmax = float(np.abs(truth).max())
        images, errors = {"truth": truth[:, 0].reshape(side, side)}, {"truth": np.zeros((side, side))}
        for method, x_hat in best.items():
            io.write_matrix(os.path.join(out, f"recon_{method}_{tag}.jslr"), x_hat)
            io.write_pgm(os.path.join(out, f"recon_{method}_{tag}.pgm"), x_hat[:, 0].reshape(side, side), vmax)
            err = np.abs(x_hat - truth)[:, 0].reshape(side, side)
            io.write_pgm(os.path.join(out, f"error_{method}_{tag}.pgm"), err, vmax)
            images[METHOD_LABELS[method]] = x_hat[:, 0].reshape(side, side)
            errors[METHOD_LABELS[method]] = err
        plotting.image_grid(os.path.join(out, f"recon_compare_{tag}.png"), images, errors, vmax,
                            title=f"frame 0, {_snr_label(snr)}")
    plotting.median_curve_plot(
        os.path.join(out, "recon_compare.png"),
        [0 if r[1] is None else r[1] for r in rows], [r[4] for r in rows], [r[0] for r in rows],
        xlabel="SNR (dB, 0 = noiseless)", ylabel="normalised recovery error",
    )
    return rows


# -- verification suite -----------------------------------------------------

VERIFY_HEADER = ["check", "passed", "detail"]
BUDGET_HEADER = ["k", "r", "n", "N", "proposed_total", "proposed_per_frame", "mmv_total", "dof"]


def budget_rows(cfg: ExperimentConfig) -> list[tuple]:
    ph = cfg.phantom
    rows = []
    for N in sorted({ph.N, 2 * ph.N, 200}):
        b = measurement_budget(ph.k, ph.r, ph.n, N)
        rows.append((ph.k, ph.r, ph.n, N, b.proposed_total, str(b.proposed_per_frame), b.mmv_total, b.dof))
    return rows


def cmd_verify(cfg: ExperimentConfig) -> list[CheckResult]:
    """Run the verification suite; writes ``verify_report.csv``, ``budget.csv`` and a figure."""
    validate(cfg)
    out = _ensure_dir(cfg.output_dir)
    ph = cfg.phantom
    checks = verification_suite(cfg.seeds[0], inject_deficient=cfg.inject_deficient, budget=(ph.k, ph.r, ph.n, ph.N))
    io.write_table(os.path.join(out, "verify_report.csv"), VERIFY_HEADER,
                   [(c.name, c.passed, c.detail) for c in checks])
    io.write_table(os.path.join(out, "budget.csv"), BUDGET_HEADER, budget_rows(cfg))
    plotting.check_table_plot(os.path.join(out, "verify_report.png"), [c.name for c in checks],
                              [c.passed for c in checks])
    return checks


# -- phantom and one-shot recovery ------------------------------------------


def cmd_phantom(cfg: ExperimentConfig) -> dict:
    """Generate a phantom and its measurements and save both.

    ``phantom.jslr`` holds ``X`` (sections ``U``, ``sigma``, ``V``,
    ``support``); ``measurements.jslr`` embeds the config so ``recover`` can
    rebuild the operators.
    """
    validate(cfg)
    out = _ensure_dir(cfg.output_dir)
    seed, snr = cfg.seeds[0], cfg.noise[0]
    prob = build_problem(cfg, seed, snr)
    gt = prob.gt
    phantom_path = os.path.join(out, "phantom.jslr")
    io.write_container(phantom_path, gt.x.data, {
        "U": gt.svd.U, "sigma": gt.svd.sigma[:, None], "V": gt.svd.V,
        "support": gt.support.astype(float)[:, None],
    })
    single = dataclasses.replace(cfg, seeds=[seed], noise=[snr])
    meas_path = os.path.join(out, "measurements.jslr")
    io.save_measurements(meas_path, dataclasses.replace(prob.noisy, seed=seed), config_to_ini(single))
    side = cfg.phantom.image_side
    io.write_frames_pgm(os.path.join(out, "phantom_frames"), gt.x.data, side)
    plotting.image_grid(os.path.join(out, "phantom.png"),
                        {f"frame {j}": gt.x.data[:, j].reshape(side, side) for j in range(min(3, cfg.phantom.N))})
    return {"phantom": phantom_path, "measurements": meas_path}


def cmd_recover(cfg: Optional[ExperimentConfig], measurements_path: str, truth_path: Optional[str] = None,
                output_dir: Optional[str] = None) -> dict:
    """Two-step recovery from a saved measurement set.

    The operators are rebuilt from ``cfg`` or, when ``cfg`` is ``None``,
    from the config embedded in the file.
    """
    m, embedded = io.load_measurements(measurements_path)
    if cfg is None:
        if embedded is None:
            raise ConfigError("measurement file has no embedded config; pass --config")
        cfg = parse_config_text(embedded, "recover")
    if output_dir is not None:
        cfg = dataclasses.replace(cfg, output_dir=output_dir)
    validate(cfg)
    out = _ensure_dir(cfg.output_dir)
    seed = m.seed if m.seed is not None else cfg.seeds[0]
    phi, a = build_operators(cfg, seed)
    if m.N != cfg.phantom.N or m.z.shape[0] != phi.s or [v.size for v in m.y] != a.sizes:
        raise ConfigError("measurement file does not match the operators described by the config")
    est, sys, y = recover_problem(cfg, m, phi, a)
    res = run_solver(cfg.solver.method, sys, y, cfg.solver, cfg.phantom.image_side)
    io.save_recovery(os.path.join(out, "recovery.jslr"), res)
    io.save_subspace(os.path.join(out, "subspace.jslr"), est)
    io.write_table(os.path.join(out, "spectrum.csv"), ["index", "eigenvalue"],
                   [(i + 1, float(v)) for i, v in enumerate(est.spectrum_full)])
    io.write_table(os.path.join(out, "residuals.csv"), ["iteration", "primal", "dual"],
                   [(i + 1, p, d) for i, (p, d) in enumerate(
                       zip(res.residual_history, res.dual_history or [float("nan")] * len(res.residual_history)))])
    side = cfg.phantom.image_side
    io.write_frames_pgm(os.path.join(out, "recovered_frames"), res.x_hat, side)
    plotting.spectrum_plot(os.path.join(out, "spectrum.png"), est.spectrum_full, est.r_used)
    if res.residual_history:
        plotting.residual_plot(os.path.join(out, "residuals.png"), res.residual_history, res.dual_history)
    summary = {"iterations": res.iterations, "converged": res.converged, "result": res}
    if truth_path is not None:
        truth = io.read_matrix(truth_path)
        summary["recovery_error"] = recovery_error(res.x_hat, truth)
    return summary
