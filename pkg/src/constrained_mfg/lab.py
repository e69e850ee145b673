"""Configuration-driven experiments: long-time convergence sweep and supporting checks."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from .errors import ConfigError, NonConvergence, RegimeViolation
from .ergodic_mfg import ErgodicMfgSolution, solve_ergodic_mfg
from .finite_mfg import MildSolutionPath, energy_estimate_eval, equilibrium_fixed_point, write_path_table
from .grid import Grid, GridMeasure
from .hjsolver import DEFAULT_SPEED_CAP, LaxOleinikOperator
from .library import build_coupling, build_domain, build_measure, build_model

CSV_HEADER = ["T", "E_u", "E_F", "lambda_bar", "exploitability", "energy_integral"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1, "maxItems": 2}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


CONFIG_SCHEMA = _obj(
    {
        "domain": _obj(
            {
                "kind": {"enum": ["interval", "box", "disc"]},
                "lower": _vec,
                "upper": _vec,
                "center": _vec,
                "radius": _pos,
            },
            ["kind"],
        ),
        "grid": _obj({"nodes": {"type": "integer", "minimum": 3}}, ["nodes"]),
        "model": _obj(
            {
                "name": {"type": "string"},
                "label": {"type": "string"},
                "quartic": {"type": "number", "minimum": 0},
                "potential": _obj(
                    {
                        "kind": {"enum": ["quadratic", "radial"]},
                        "center": {"oneOf": [_num, _vec]},
                        "scale": _pos,
                        "offset": _num,
                        "inner": {"type": "number", "minimum": 0},
                        "outer": {"type": "number", "minimum": 0},
                    },
                    ["kind"],
                ),
            }
        ),
        "coupling": _obj(
            {
                "kind": {"enum": ["none", "gaussian"]},
                "weight": _num,
                "sigma": _pos,
                "a3_normalize": {"type": "boolean"},
            },
            ["kind"],
        ),
        "solver": _obj(
            {
                "dt": _pos,
                "speed_cap": _pos,
                "ergodic_tol": _pos,
                "ergodic_max_iter": {"type": "integer", "minimum": 1},
                "ergodic_warm_start": {"type": "boolean"},
                "mfg_tol": _pos,
                "mfg_max_iter": {"type": "integer", "minimum": 1},
                "tol_expl": _pos,
                "max_outer": {"type": "integer", "minimum": 0},
                "averaging": {"enum": ["fictitious", "none", "simplicial"]},
            }
        ),
        "experiment": _obj(
            {
                "horizons": {"type": "array", "items": _pos, "minItems": 1},
                "initial": _obj(
                    {
                        "kind": {"enum": ["dirac", "uniform", "random", "stationary"]},
                        "point": _vec,
                        "atoms": {"type": "integer", "minimum": 1},
                    },
                    ["kind"],
                ),
                "terminal": _obj(
                    {"kind": {"enum": ["zero", "ergodic"]}, "offset": _num},
                    ["kind"],
                ),
                "path_tables": {"type": "boolean"},
            },
            ["horizons"],
        ),
        "output": _obj({"directory": {"type": "string"}}),
        "seed": {"type": "integer", "minimum": 0},
    },
    ["domain", "grid", "experiment"],
)


@dataclass
class SolverConfig:
    dt: float | None = None  # None means dt = h
    speed_cap: float = DEFAULT_SPEED_CAP
    ergodic_tol: float = 1e-10
    ergodic_max_iter: int = 200_000
    ergodic_warm_start: bool = True
    mfg_tol: float = 1e-6
    mfg_max_iter: int = 50_000
    tol_expl: float = 1e-3
    max_outer: int = 200
    averaging: str = "simplicial"


@dataclass
class ExperimentConfig:
    domain: dict
    grid_nodes: int
    model: dict = field(default_factory=lambda: {"name": "QUAD1D"})
    coupling: dict = field(default_factory=lambda: {"kind": "gaussian", "weight": 1.0, "sigma": 0.5, "a3_normalize": True})
    solver: SolverConfig = field(default_factory=SolverConfig)
    horizons: list = field(default_factory=lambda: [2.5, 5.0, 10.0, 20.0, 40.0])
    initial: dict = field(default_factory=lambda: {"kind": "dirac", "point": [0.9]})
    terminal: dict = field(default_factory=lambda: {"kind": "zero", "offset": 0.0})
    path_tables: bool = False
    output_dir: str = "results"
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "grid": {"nodes": self.grid_nodes},
            "model": self.model,
            "coupling": self.coupling,
            "solver": {k: v for k, v in asdict(self.solver).items() if v is not None},
            "experiment": {
                "horizons": list(self.horizons),
                "initial": self.initial,
                "terminal": self.terminal,
                "path_tables": self.path_tables,
            },
            "output": {"directory": self.output_dir},
            "seed": self.seed,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # builders
    def build(self):
        domain = build_domain(self.domain)
        grid = Grid(domain, self.grid_nodes)
        model = build_model(self.model, domain.dim)
        coupling = build_coupling(self.coupling)
        return grid, model, coupling

    def dt_for(self, grid: Grid) -> float:
        return grid.h if self.solver.dt is None else self.solver.dt


def _error_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = err.message.split("'")[1]
        parts.append(missing)
    elif err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        parts.append(",".join(extra))
    return ".".join(parts) or "<root>"


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config document and build the dataclass; errors name the field path."""
    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _error_path(err))
    exp = data["experiment"]
    hz = [float(t) for t in exp["horizons"]]
    if any(b <= a for a, b in zip(hz, hz[1:])):
        raise ConfigError("horizons must be strictly increasing", "experiment.horizons")
    dom = data["domain"]
    if dom["kind"] == "disc" and "radius" not in dom:
        raise ConfigError("disc needs a radius", "domain.radius")
    if dom["kind"] == "box" and not ("lower" in dom and "upper" in dom):
        raise ConfigError("box needs lower and upper", "domain.lower")
    solver = SolverConfig(**data.get("solver", {}))
    cfg = ExperimentConfig(domain=dom, grid_nodes=data["grid"]["nodes"], solver=solver, horizons=hz)
    for key in ("model", "coupling"):
        if key in data:
            setattr(cfg, key, data[key])
    for key in ("initial", "terminal", "path_tables"):
        if key in exp:
            setattr(cfg, key, exp[key])
    cfg.output_dir = data.get("output", {}).get("directory", cfg.output_dir)
    cfg.seed = data.get("seed", 0)
    try:
        cfg.build()
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc).strip("'\""), "model" if "model" in str(exc) else "domain") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", str(path)) from None
    except OSError as exc:
        raise ConfigError(str(exc), str(path)) from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", "<root>")
    return parse_config(data)


# --- long-time experiment -------------------------------------------------

@dataclass
class HorizonRow:
    T: float
    E_u: float
    E_F: float
    lambda_bar: float
    exploitability: float
    energy_integral: float
    converged: bool = True
    interpolation_ratio: float = float("nan")
    outer_iterations: int = 0


@dataclass
class ConvergenceReport:
    rows: list
    slope_E_u: float
    slope_E_F: float
    exponent: float
    lambda_bar: float
    dim: int
    ergodic: dict = field(default_factory=dict)
    interpolation: dict = field(default_factory=dict)
    failed_rows: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed_rows

    def envelope(self, key: str, slack: float = 1.25) -> list:
        """E(T) <= E(T_min) (T/T_min)^exponent * slack, row by row."""
        r0 = self.rows[0]
        e0 = getattr(r0, key)
        return [getattr(r, key) <= e0 * (r.T / r0.T) ** self.exponent * slack for r in self.rows]


def loglog_slope(T, E) -> float:
    T, E = np.asarray(T, float), np.asarray(E, float)
    if len(T) < 2 or np.any(E <= 0):
        return float("nan")
    return float(np.polyfit(np.log(T), np.log(E), 1)[0])


def _effective_field(coupling, W_nodes, grid, weights):
    F = coupling.field_batch(grid.points, grid, np.atleast_2d(weights))
    if coupling.a3_normalize:
        F = F - np.min(W_nodes[None, :] + F, axis=1, keepdims=True)
    return F


def value_error(path: MildSolutionPath, lam: float) -> float:
    """sup over time slices of || u^T(t)/T + lam (1 - t/T) ||_inf."""
    t = np.arange(path.steps + 1) * path.dt
    return float(np.max(np.abs(path.values / path.T + lam * (1.0 - t / path.T)[:, None])))


def coupling_error(path: MildSolutionPath, coupling, W_nodes, m_bar: GridMeasure, block: int = 256) -> float:
    """(1/T) sum_n dt || F~(., m_n) - F~(., mbar) ||_inf, F~ the effective (normalised) coupling."""
    grid = path.grid
    Fb = _effective_field(coupling, W_nodes, grid, m_bar.weights)[0]
    total = 0.0
    for b0 in range(0, path.steps, block):
        F = _effective_field(coupling, W_nodes, grid, path.measures[b0:min(b0 + block, path.steps)])
        total += float(np.sum(np.max(np.abs(F - Fb), axis=1)))
    return path.dt * total / path.T


def interpolation_constant(dim: int, lipschitz: float, diameter: float, volume: float) -> float:
    """C with ||f||_inf <= C max(||f||_2, ||f||_2^(2/(d+2))) for M-Lipschitz f on a convex domain.

    With a = ||f||_inf and r = a/(2M), |f| >= a/2 on B(x0, r); a homothety
    of the domain about x0 shows |B(x0, r) n Omega| >= (r/D)^d |Omega| for
    r <= D, and the whole domain is covered for r > D.
    """
    near = (4.0 * (2.0 * lipschitz * diameter) ** dim / volume) ** (1.0 / (dim + 2))
    far = 2.0 / math.sqrt(volume)
    return max(near, far)


def interpolation_inequality_check(samples, grid: Grid, bound: float, lipschitz: float, slack: float = 1e-9):
    """Worst ratio ||f||_inf / max(||f||_2, ||f||_2^(2/(d+2))) and the constant it must respect.

    Raises ``RegimeViolation`` when a sample exceeds the sup bound or the
    discrete Lipschitz bound.
    """
    from .hjsolver import max_adjacent_slope

    d = grid.dim
    q = grid.quadrature_weights()
    worst = 0.0
    for f in samples:
        f = np.asarray(f, dtype=float)
        sup = float(np.max(np.abs(f)))
        if sup > bound * (1 + slack):
            raise RegimeViolation(f"sample sup {sup:.6g} exceeds the bound {bound:.6g}")
        lip = max_adjacent_slope(f, grid)
        if lip > lipschitz * (1 + slack) + slack:
            raise RegimeViolation(f"sample Lipschitz constant {lip:.6g} exceeds {lipschitz:.6g}")
        if sup == 0.0:
            continue
        l2 = math.sqrt(float(q @ (f * f)))
        worst = max(worst, sup / max(l2, l2 ** (2.0 / (d + 2))))
    dom = grid.domain
    return worst, interpolation_constant(d, lipschitz, dom.diameter, dom.volume)


def solve_stationary(cfg: ExperimentConfig, grid=None, model=None, coupling=None) -> ErgodicMfgSolution:
    if grid is None:
        grid, model, coupling = cfg.build()
    s = cfg.solver
    m_init = GridMeasure.dirac(grid, grid.domain.center)
    try:
        return solve_ergodic_mfg(
            model,
            coupling,
            m_init,
            tol=s.mfg_tol,
            max_iter=s.mfg_max_iter,
            dt=cfg.dt_for(grid),
            ergodic_tol=s.ergodic_tol,
            ergodic_max_iter=s.ergodic_max_iter,
            speed_cap=s.speed_cap,
        )
    except NonConvergence as exc:
        if exc.result is None:
            raise
        return exc.result


def _one_horizon(cfg, T, grid, model, coupling, op, erg, m0, u_f, W_nodes, out_dir):
    s = cfg.solver
    try:
        path = equilibrium_fixed_point(
            model, coupling, m0, u_f, T, op.dt, tol_expl=s.tol_expl, max_outer=s.max_outer,
            averaging=s.averaging, operator=op,
        )
    except NonConvergence as exc:
        path = exc.result
    lam = erg.lambda_bar
    E_u = value_error(path, lam)
    E_F = coupling_error(path, coupling, W_nodes, erg.m_bar)
    energy = energy_estimate_eval(path, coupling, erg.m_bar)
    # interpolation inequality on the coupling differences along the path
    if coupling.is_zero:
        ratio = 0.0
    else:
        idx = np.linspace(0, path.steps, 9).round().astype(int)
        Fb = coupling.field(grid.points, erg.m_bar)
        samples = coupling.field_batch(grid.points, grid, path.measures[idx]) - Fb[None, :]
        ratio, _ = interpolation_inequality_check(
            samples, grid, 2 * coupling.sup_bound(grid.dim), 2 * coupling.spatial_lipschitz
        )
    if out_dir is not None and cfg.path_tables:
        write_path_table(path, Path(out_dir) / "paths", f"T{T:g}")
    return HorizonRow(
        T=float(T),
        E_u=E_u,
        E_F=E_F,
        lambda_bar=lam,
        exploitability=float(path.exploitability),
        energy_integral=energy,
        converged=bool(path.converged),
        interpolation_ratio=float(ratio),
        outer_iterations=len(path.exploitability_trace),
    )


def _row_file(out_dir, cfg, T) -> Path:
    return Path(out_dir) / "rows" / f"{cfg.digest()}_T{T:g}.json"


def run_longtime_experiment(cfg: ExperimentConfig, out_dir=None, resume: bool = False, threads: int = 1) -> ConvergenceReport:
    """One ergodic MFG solve shared by a finite-horizon equilibrium solve per horizon."""
    grid, model, coupling = cfg.build()
    dt = cfg.dt_for(grid)
    erg = solve_stationary(cfg, grid, model, coupling)
    op = LaxOleinikOperator(model, grid, dt, cfg.solver.speed_cap)
    W_nodes = model.static(grid.points)
    rng = np.random.default_rng(cfg.seed)
    if cfg.initial["kind"] == "stationary":
        m0 = erg.m_bar
    else:
        m0 = build_measure(cfg.initial, grid, rng)
    if cfg.terminal.get("kind", "zero") == "ergodic":
        u_f = erg.u_bar + cfg.terminal.get("offset", 0.0)
    else:
        u_f = np.zeros(grid.size) + cfg.terminal.get("offset", 0.0)

    def task(T):
        rf = _row_file(out_dir, cfg, T) if out_dir is not None else None
        if resume and rf is not None and rf.exists():
            return HorizonRow(**json.loads(rf.read_text()))
        row = _one_horizon(cfg, T, grid, model, coupling, op, erg, m0, u_f, W_nodes, out_dir)
        if rf is not None:
            rf.parent.mkdir(parents=True, exist_ok=True)
            rf.write_text(json.dumps(asdict(row)) + "\n")
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(task, cfg.horizons))
    else:
        rows = [task(T) for T in cfg.horizons]
    T = [r.T for r in rows]
    C = None
    if not coupling.is_zero:
        C = interpolation_constant(grid.dim, 2 * coupling.spatial_lipschitz, grid.domain.diameter, grid.domain.volume)
    cert = {k: v for k, v in erg.certificate.items() if not isinstance(v, list)}
    cert["support_points"] = erg.certificate["support_points"]
    cert["support_weights"] = erg.certificate["support_weights"]
    cert["converged"] = erg.converged
    return ConvergenceReport(
        rows=rows,
        slope_E_u=loglog_slope(T, [r.E_u for r in rows]),
        slope_E_F=loglog_slope(T, [r.E_F for r in rows]),
        exponent=-1.0 / (grid.dim + 2),
        lambda_bar=erg.lambda_bar,
        dim=grid.dim,
        ergodic=cert,
        interpolation={
            "constant": C,
            "worst_ratio": max((r.interpolation_ratio for r in rows), default=float("nan")),
        },
        failed_rows=[i for i, r in enumerate(rows) if not r.converged] + ([] if erg.converged else ["ergodic"]),
    )


def _fmt(x: float) -> str:
    return f"{x + 0.0:.12g}"  # no "-0"


def convergence_csv(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in report.rows:
        w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
    return buf.getvalue()


def write_report(report: ConvergenceReport, cfg: ExperimentConfig, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "convergence.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(convergence_csv(report))
    meta = {
        "rows": [asdict(r) for r in report.rows],
        "slopes": {"E_u": report.slope_E_u, "E_F": report.slope_E_F},
        "theoretical_exponent": report.exponent,
        "envelope": {"E_u": report.envelope("E_u"), "E_F": report.envelope("E_F")},
        "lambda_bar": report.lambda_bar,
        "ergodic_certificate": report.ergodic,
        "interpolation": report.interpolation,
        "failed_rows": report.failed_rows,
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
    }
    json_path = out / "report.json"
    json_path.write_text(json.dumps(meta, indent=2, default=_json_default) + "\n")
    return csv_path, json_path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)}")
