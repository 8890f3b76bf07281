"""Convergence and preconditioning studies on nested mesh hierarchies.

Two rate estimators are provided:

* :func:`rates_vs_interpolant` compares the discrete solution with the BDM1
  interpolant / P0 projection of a known exact solution on each level and
  uses ``gamma_k = log2(e_{k-1} / e_k)``;
* :func:`rates_cauchy` uses differences of consecutive levels,
  ``gamma_k = log2(||u_k - u_{k-1}|| / ||u_{k+1} - u_k||)``, with coarse fields
  evaluated on the fine mesh through the refinement lineage.

Undefined rates are NaN and are written as a quoted ``"nan"`` in CSV output.
"""
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from typing import List, Optional

import numpy as np

from .assembly import AssemblyConfig
from .loads import make_load
from .mesh import coarse_lshape, coarse_square, generate_lshape, generate_square, refine_levels
from .norms import BrokenField, dg_norm, exact_errors, jump_seminorm, l2_norm, pressure_l2, prolong
from .solver import PcgReport, SolverError, StokesSystem, solve_stokes
from .spaces import interpolate_velocity, project_pressure

__all__ = [
    "ConfigError",
    "StudyConfig",
    "ErrorSet",
    "LevelRecord",
    "StudyReport",
    "dg_norm",
    "rates_vs_interpolant",
    "rates_cauchy",
    "run_convergence_study",
    "run_precond_study",
    "emit",
    "load_schema",
]

log = logging.getLogger(__name__)

NAN = float("nan")
RATE_NAMES = ("gamma_0", "gamma_dg", "gamma_p", "gamma_star")
RATE_LABELS = {"gamma_0": "γ₀", "gamma_dg": "γ_DG", "gamma_p": "γ_p", "gamma_star": "γ_*"}


class ConfigError(ValueError):
    """Invalid study configuration."""


@dataclass(frozen=True)
class StudyConfig:
    domain: str = "square"
    levels: int = 3
    load: str = "manufactured"
    nu: float = 0.5
    alpha: float = 6.0
    # None: 1e-10 for convergence studies, 1e-6 for preconditioning studies
    tol: Optional[float] = None
    maxit: int = 500
    coarse_n: Optional[int] = None
    inner: str = "auto"

    def validate(self):
        if self.domain not in ("square", "lshape"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.load not in ("manufactured", "fixed", "zero"):
            raise ConfigError(f"unknown load {self.load!r}")
        if not isinstance(self.levels, (int, np.integer)) or self.levels < 0:
            raise ConfigError("levels must be a non-negative integer")
        if not (self.nu > 0 and self.alpha > 0):
            raise ConfigError("nu and alpha must be positive")
        if self.tol is not None and not 0 < self.tol < 1:
            raise ConfigError("tol must lie in (0, 1)")
        if self.inner not in ("auto", "direct", "amg"):
            raise ConfigError(f"unknown inner solver {self.inner!r}")
        if self.coarse_n is not None:
            if self.coarse_n < 1 or (self.domain == "lshape" and self.coarse_n % 2):
                raise ConfigError("coarse_n must be >= 1 (and even for the L-shape)")
        return self

    def coarse_mesh(self):
        if self.coarse_n is None:
            return coarse_square() if self.domain == "square" else coarse_lshape()
        if self.domain == "square":
            return generate_square(self.coarse_n)
        return generate_lshape(self.coarse_n)

    def assembly(self):
        return AssemblyConfig(nu=self.nu, alpha=self.alpha)


@dataclass
class ErrorSet:
    l2_velocity: float = NAN
    dg_velocity: float = NAN
    l2_pressure: float = NAN
    jump_seminorm: float = NAN
    l2_velocity_exact: float = NAN
    dg_velocity_exact: float = NAN
    l2_pressure_exact: float = NAN


@dataclass
class LevelRecord:
    level: int
    n_elements: int
    n_vertices: int
    dim_velocity: int
    dim_stream: int
    errors: ErrorSet = field(default_factory=ErrorSet)
    rates: dict = field(default_factory=lambda: {k: NAN for k in RATE_NAMES})
    pcg: Optional[PcgReport] = None
    max_div: float = NAN
    failure: str = ""


CSV_COLUMNS = (
    ["study", "domain", "load", "nu", "alpha", "tol", "rate_kind"]
    + ["level", "n_elements", "n_vertices", "dim_velocity", "dim_stream"]
    + [f.name for f in fields(ErrorSet)]
    + list(RATE_NAMES)
    + ["n_it", "rho", "ritz_min", "ritz_max", "converged", "max_div", "failure"]
)


@dataclass
class StudyReport:
    study: str
    domain: str
    load: str
    nu: float
    alpha: float
    tol: float
    rate_kind: str
    records: List[LevelRecord] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def levels(self):
        return [r.level for r in self.records]

    def rate(self, name, level=None):
        """Rate ``name`` at ``level`` (default: finest defined)."""
        vals = [(r.level, r.rates[name]) for r in self.records if not math.isnan(r.rates[name])]
        if level is None:
            return vals[-1][1] if vals else NAN
        return dict(vals).get(level, NAN)

    # -- CSV ------------------------------------------------------------
    def _row(self, r):
        e = r.errors
        pc = r.pcg
        base = [self.study, self.domain, self.load, self.nu, self.alpha, self.tol, self.rate_kind]
        base += [r.level, r.n_elements, r.n_vertices, r.dim_velocity, r.dim_stream]
        base += [getattr(e, f.name) for f in fields(ErrorSet)]
        base += [r.rates[k] for k in RATE_NAMES]
        if pc is None:
            base += ["", NAN, NAN, NAN, ""]
        else:
            base += [pc.n_it, pc.rho, pc.ritz_min, pc.ritz_max, int(pc.converged)]
        base += [r.max_div, r.failure]
        return base

    def to_csv(self):
        out = io.StringIO()
        out.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.records:
            out.write(",".join(_csv_cell(v) for v in self._row(r)) + "\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty report")
        h = rows[0]
        rep = cls(
            study=h["study"],
            domain=h["domain"],
            load=h["load"],
            nu=float(h["nu"]),
            alpha=float(h["alpha"]),
            tol=float(h["tol"]),
            rate_kind=h["rate_kind"],
        )
        for row in rows:
            rec = LevelRecord(
                level=int(row["level"]),
                n_elements=int(row["n_elements"]),
                n_vertices=int(row["n_vertices"]),
                dim_velocity=int(row["dim_velocity"]),
                dim_stream=int(row["dim_stream"]),
                errors=ErrorSet(**{f.name: float(row[f.name]) for f in fields(ErrorSet)}),
                rates={k: float(row[k]) for k in RATE_NAMES},
                max_div=float(row["max_div"]),
                failure=row["failure"],
            )
            if row["n_it"] != "":
                rec.pcg = PcgReport(
                    n_it=int(row["n_it"]),
                    residuals=[],
                    rho=float(row["rho"]),
                    converged=bool(int(row["converged"])),
                    ritz_min=float(row["ritz_min"]),
                    ritz_max=float(row["ritz_max"]),
                    level=rec.level,
                )
            rep.records.append(rec)
        return rep

    # -- JSON -----------------------------------------------------------
    def to_dict(self):
        def num(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x

        levels = []
        for r in self.records:
            levels.append(
                {
                    "level": r.level,
                    "n_elements": r.n_elements,
                    "n_vertices": r.n_vertices,
                    "dim_velocity": r.dim_velocity,
                    "dim_stream": r.dim_stream,
                    "errors": {f.name: num(getattr(r.errors, f.name)) for f in fields(ErrorSet)},
                    "rates": {k: num(v) for k, v in r.rates.items()},
                    "pcg": None if r.pcg is None else r.pcg.to_dict(),
                    "max_div": num(r.max_div),
                    "failure": r.failure,
                }
            )
        return {
            "study": self.study,
            "domain": self.domain,
            "load": self.load,
            "config": {"nu": self.nu, "alpha": self.alpha, "tol": self.tol},
            "rate_kind": self.rate_kind,
            "levels": levels,
            "notes": list(self.notes),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    # -- Markdown -------------------------------------------------------
    def to_markdown(self):
        title = f"{self.study} study, {self.domain} domain, {self.load} load"
        lines = [f"### {title}", ""]
        if self.rate_kind != "none":
            ks = [r.level for r in self.records if any(not math.isnan(v) for v in r.rates.values())]
            lines.append("| k | " + " | ".join(str(k) for k in ks) + " |")
            lines.append("|---|" + "---|" * len(ks))
            for name in RATE_NAMES:
                vals = [self._rec(k).rates[name] for k in ks]
                lines.append(f"| {RATE_LABELS[name]} | " + " | ".join(_md(v) for v in vals) + " |")
            lines.append("")
        pcs = [r for r in self.records if r.pcg is not None]
        if pcs:
            lines.append("| J | " + " | ".join(str(r.level) for r in pcs) + " |")
            lines.append("|---|" + "---|" * len(pcs))
            lines.append("| n_it | " + " | ".join(str(r.pcg.n_it) for r in pcs) + " |")
            lines.append("| ρ | " + " | ".join(_md(r.pcg.rho, 3) for r in pcs) + " |")
            lines.append("")
        for r in self.records:
            if r.failure:
                lines.append(f"- level {r.level} failed: {r.failure}")
        return "\n".join(lines) + "\n"

    def _rec(self, level):
        return next(r for r in self.records if r.level == level)


def _csv_cell(v):
    if isinstance(v, str):
        if any(c in v for c in ',"\n'):
            return '"' + v.replace('"', '""') + '"'
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return '"nan"'
    return repr(v)


def _md(v, digits=2):
    return "nan" if math.isnan(v) else f"{v:.{digits}f}"


def _log2_ratio(num, den):
    if not (math.isfinite(num) and math.isfinite(den)) or num <= 0.0 or den <= 0.0:
        return NAN
    return math.log2(num / den)


def load_schema():
    """JSON schema for :meth:`StudyReport.to_dict`."""
    return json.loads(resources.files("divfree_stokes").joinpath("report.schema.json").read_text())


# -- rate estimators ----------------------------------------------------
def _record(level, sol):
    mesh = sol.velocity.space.mesh
    return LevelRecord(
        level=level,
        n_elements=mesh.n_triangles,
        n_vertices=mesh.n_vertices,
        dim_velocity=sol.velocity.space.dim,
        dim_stream=sol.stream.space.dim,
        pcg=replace(sol.report, level=level),
        max_div=sol.max_divergence(),
    )


def _report(kind, rate_kind, cfg_like, records):
    return StudyReport(
        study=kind,
        domain=cfg_like["domain"],
        load=cfg_like["load"],
        nu=cfg_like["nu"],
        alpha=cfg_like["alpha"],
        tol=cfg_like["tol"],
        rate_kind=rate_kind,
        records=records,
    )


def _interpolant_errors(sol, load, nu):
    Vh = sol.velocity.space
    Qh = sol.pressure.space
    mesh = Vh.mesh
    uI = interpolate_velocity(Vh, load.u)
    pI = project_pressure(Qh, load.p)
    d = uI - sol.velocity
    l2e, dge = exact_errors(sol.velocity, load.u, load.grad_u, nu)
    # pressures are compared modulo constants; the exact p has zero mean
    ph = _zero_mean(mesh, sol.pressure.coeffs)
    return ErrorSet(
        l2_velocity=l2_norm(d),
        dg_velocity=dg_norm(d, nu),
        l2_pressure=pressure_l2(mesh, _zero_mean(mesh, pI.coeffs) - ph),
        jump_seminorm=jump_seminorm(sol.velocity),
        l2_velocity_exact=l2e,
        dg_velocity_exact=dge,
        l2_pressure_exact=pressure_l2(mesh, ph, load.p),
    )


def _zero_mean(mesh, q):
    return q - np.dot(mesh.areas, q) / mesh.areas.sum()


def _fill_backward_rates(records):
    for k in range(1, len(records)):
        a, b = records[k - 1].errors, records[k].errors
        records[k].rates = {
            "gamma_0": _log2_ratio(a.l2_velocity, b.l2_velocity),
            "gamma_dg": _log2_ratio(a.dg_velocity, b.dg_velocity),
            "gamma_p": _log2_ratio(a.l2_pressure, b.l2_pressure),
            # jumps of u_h themselves decay, so the older level goes on top
            "gamma_star": _log2_ratio(a.jump_seminorm, b.jump_seminorm),
        }


def rates_vs_interpolant(solutions, load, nu=0.5, meta=None):
    """Rates of ``u^I - u_h``, ``p^I - p_h`` and of the jumps of ``u_h``.

    ``solutions`` is a list of :class:`~divfree_stokes.solver.StokesSolution`
    on consecutive levels; ``load`` must carry the exact solution.
    """
    if len(solutions) < 2:
        raise ValueError("need at least two levels to estimate rates")
    if not load.is_manufactured:
        raise ValueError("interpolant rates need a load with an exact solution")
    records = []
    for k, sol in enumerate(solutions):
        rec = _record(k, sol)
        rec.errors = _interpolant_errors(sol, load, nu)
        records.append(rec)
    _fill_backward_rates(records)
    meta = meta or {"domain": solutions[0].velocity.space.mesh.domain, "load": load.name, "nu": nu, "alpha": NAN, "tol": NAN}
    return _report("convergence", "interpolant", meta, records)


def rates_cauchy(solutions, nu=0.5, meta=None):
    """Rates from consecutive-level differences on nested meshes."""
    if len(solutions) < 3:
        raise ValueError("need at least three nested levels for Cauchy rates")
    meshes = [s.velocity.space.mesh for s in solutions]
    for coarse, fine in zip(meshes, meshes[1:]):
        if fine.parent_mesh is not coarse:
            raise ValueError("solutions are not on consecutive nested meshes")
    notes = []
    records = []
    for k, sol in enumerate(solutions):
        rec = _record(k, sol)
        rec.errors.jump_seminorm = jump_seminorm(sol.velocity)
        if k > 0:
            prev = solutions[k - 1]
            fine = meshes[k]
            d = prolong(BrokenField.from_field(prev.velocity), fine) - BrokenField.from_field(sol.velocity)
            dp = _zero_mean(fine, prev.pressure.coeffs[fine.parent] - sol.pressure.coeffs)
            rec.errors.l2_velocity = l2_norm(d)
            rec.errors.dg_velocity = dg_norm(d, nu)
            rec.errors.l2_pressure = pressure_l2(fine, dp)
        records.append(rec)
    for k in range(1, len(records) - 1):
        a, b = records[k].errors, records[k + 1].errors
        jm, j0, j1 = (records[i].errors.jump_seminorm for i in (k - 1, k, k + 1))
        num, den = j0 - jm, j1 - j0
        # both differences are normally negative (jumps shrink); only a sign
        # change between them makes the absolute values matter
        if num * den < 0:
            notes.append(f"level {k}: jump-seminorm differences change sign, absolute values used")
            log.info(notes[-1])
        records[k].rates = {
            "gamma_0": _log2_ratio(a.l2_velocity, b.l2_velocity),
            "gamma_dg": _log2_ratio(a.dg_velocity, b.dg_velocity),
            "gamma_p": _log2_ratio(a.l2_pressure, b.l2_pressure),
            "gamma_star": _log2_ratio(abs(num), abs(den)),
        }
    meta = meta or {"domain": meshes[0].domain, "load": "unknown", "nu": nu, "alpha": NAN, "tol": NAN}
    rep = _report("convergence", "cauchy", meta, records)
    rep.notes.extend(notes)
    return rep


# -- orchestration --------------------------------------------------------
def _meta(cfg, tol):
    return {"domain": cfg.domain, "load": cfg.load, "nu": cfg.nu, "alpha": cfg.alpha, "tol": tol}


def _solve_levels(cfg, tol, inner):
    load = make_load(cfg.load, cfg.domain, cfg.nu)
    meshes = refine_levels(cfg.coarse_mesh(), cfg.levels)
    solutions = []
    failure = None
    for J, mesh in enumerate(meshes):
        try:
            system = StokesSystem(mesh, cfg.assembly())
            sol = solve_stokes(mesh, cfg.assembly(), load, tol=tol, maxit=cfg.maxit, system=system, inner=inner)
            if not sol.report.converged:
                raise SolverError(f"PCG did not reach tol {tol} in {cfg.maxit} iterations")
        except SolverError as exc:
            failure = (J, mesh, str(exc))
            log.error("level %d failed: %s", J, exc)
            break
        sol.system = None  # release factorizations before the next level
        log.info("level %d: T=%d n_it=%d rho=%.3g", J, mesh.n_triangles, sol.report.n_it, sol.report.rho)
        solutions.append(sol)
    return load, solutions, failure


def _failure_record(failure):
    J, mesh, msg = failure
    return LevelRecord(level=J, n_elements=mesh.n_triangles, n_vertices=mesh.n_vertices, dim_velocity=-1, dim_stream=-1, failure=msg)


def run_convergence_study(cfg):
    """Solve on levels ``0..cfg.levels`` and estimate convergence rates.

    Manufactured loads use :func:`rates_vs_interpolant`, other loads
    :func:`rates_cauchy`.
    """
    cfg.validate()
    if cfg.load == "zero":
        raise ConfigError("a convergence study needs a nonzero load")
    need = 1 if cfg.load == "manufactured" else 2
    if cfg.levels < need:
        raise ConfigError(f"{cfg.load} convergence study needs levels >= {need}")
    tol = 1e-10 if cfg.tol is None else cfg.tol
    load, solutions, failure = _solve_levels(cfg, tol, cfg.inner)
    meta = _meta(cfg, tol)
    if cfg.load == "manufactured" and len(solutions) >= 2:
        rep = rates_vs_interpolant(solutions, load, cfg.nu, meta)
    elif cfg.load != "manufactured" and len(solutions) >= 3:
        rep = rates_cauchy(solutions, cfg.nu, meta)
    else:
        rep = _report("convergence", "none", meta, [_record(k, s) for k, s in enumerate(solutions)])
    rep.load = cfg.load
    if failure is not None:
        rep.records.append(_failure_record(failure))
    return rep


def run_precond_study(cfg):
    """Record PCG iterations, reduction factor and Ritz extremes per level."""
    cfg.validate()
    tol = 1e-6 if cfg.tol is None else cfg.tol
    inner = "direct" if cfg.inner == "auto" else cfg.inner
    _, solutions, failure = _solve_levels(cfg, tol, inner)
    rep = _report("precond", "none", _meta(cfg, tol), [_record(k, s) for k, s in enumerate(solutions)])
    if failure is not None:
        rep.records.append(_failure_record(failure))
    return rep


def emit(report, fmt=None, path=None):
    """Serialize ``report`` as csv, markdown or json; write to ``path`` if given."""
    if fmt is None:
        if path is None:
            raise ValueError("need a format or a path with a known extension")
        ext = str(path).rsplit(".", 1)[-1].lower()
        fmt = {"csv": "csv", "md": "markdown", "markdown": "markdown", "json": "json"}.get(ext)
        if fmt is None:
            raise ValueError(f"cannot infer report format from {path!r}")
    if fmt == "csv":
        text = report.to_csv()
    elif fmt == "markdown":
        text = report.to_markdown()
    elif fmt == "json":
        text = report.to_json()
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
