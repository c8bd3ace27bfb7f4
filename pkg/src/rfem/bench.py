"""Benchmark problems, convergence tables and table output (CSV / SVG)."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .adapt import AdaptRecord, adapt_loop
from .fespace import FeFunction, build_space, error_norms, jump_norm_sq
from .forms import ProblemSpec, StabSpec
from .mesh import Mesh, make_crisscross, make_lshape
from .recovery import build_recovery
from .system import build_ipdg_system, build_rfem_system, condition_estimate, solve

log = logging.getLogger(__name__)

PI = np.pi
TEST1_LEVELS = (4, 8, 16, 32, 64)
DG_COMPARE_CSIGMA = (10.0, 1.0, 0.1, 0.01)
IPDG_PENALTY = 10.0
TEST4_EPS_A = (1e-1, 1e-4)
TEST4_EPS_B = (1e-2, 1e-3)
TEST4_N, TEST4_N_FULL = 64, 200


def sigma_power(alpha: float) -> float:
    """Mesh power of the penalty law: h^-1 (alpha=0), h (alpha=1), h^alpha (alpha>1)."""
    return 2.0 * alpha - 1.0 if alpha <= 1 else float(alpha)


def sigma_law(alpha: float) -> str:
    p = sigma_power(alpha)
    return f"c*A*h^{p:g}"


# ------------------------------------------------------------------- problems
def smooth_problem() -> ProblemSpec:
    """u = sin(pi x) sin(pi y) on the unit square, A = I."""
    return ProblemSpec(
        f=lambda x, y: 2 * PI**2 * np.sin(PI * x) * np.sin(PI * y),
        u=lambda x, y: np.sin(PI * x) * np.sin(PI * y),
        grad_u=lambda x, y: (PI * np.cos(PI * x) * np.sin(PI * y), PI * np.sin(PI * x) * np.cos(PI * y)),
        name="smooth",
    )


def _polar(x, y):
    r = np.hypot(x, y)
    th = np.mod(np.arctan2(y, x), 2 * PI)
    return r, th


def lshape_problem() -> ProblemSpec:
    """u = r^(2/3) sin(2 th / 3) (x^2 - 1)(y^2 - 1) on the L-shape, A = I.

    With phi = r^(2/3) sin(2 th / 3) harmonic and psi the polynomial factor,
    f = -(phi lap(psi) + 2 grad(phi).grad(psi)).
    """

    def phi(x, y):
        r, th = _polar(x, y)
        return r ** (2 / 3) * np.sin(2 * th / 3)

    def grad_phi(x, y):
        r, th = _polar(x, y)
        c = (2 / 3) * np.where(r > 0, r, 1.0) ** (-1 / 3)
        return -c * np.sin(th / 3), c * np.cos(th / 3)

    def u(x, y):
        return phi(x, y) * (x**2 - 1) * (y**2 - 1)

    def grad_u(x, y):
        px, py = grad_phi(x, y)
        psi = (x**2 - 1) * (y**2 - 1)
        p = phi(x, y)
        return px * psi + p * 2 * x * (y**2 - 1), py * psi + p * 2 * y * (x**2 - 1)

    def f(x, y):
        px, py = grad_phi(x, y)
        lap_psi = 2 * (y**2 - 1) + 2 * (x**2 - 1)
        return -(phi(x, y) * lap_psi + 2 * (px * 2 * x * (y**2 - 1) + py * 2 * y * (x**2 - 1)))

    return ProblemSpec(f=f, u=u, grad_u=grad_u, name="lshape")


def field_a(x, y):
    """Divergence-free rotating field."""
    return (2 * y - 1) * (1 - x**2), 2 * x * y * (y - 1)


def field_b(x, y):
    return np.ones_like(np.asarray(x, dtype=float)), np.ones_like(np.asarray(y, dtype=float))


def convection_problem(eps: float, which: str = "a") -> ProblemSpec:
    """Convection-diffusion problems.

    Field 'a' carries the manufactured solution sin(pi x) sin(pi y) with f
    derived from the full operator; field 'b' uses f = 1 and has no exact
    solution.
    """
    if which == "b":
        return ProblemSpec.convection_diffusion(eps, field_b, lambda x, y: np.ones_like(x), name="conv-b")
    base = smooth_problem()

    def f(x, y):
        gx, gy = base.grad_u(x, y)
        wx, wy = field_a(x, y)
        return eps * base.f(x, y) + wx * gx + wy * gy

    return ProblemSpec.convection_diffusion(eps, field_a, f, u=base.u, grad_u=base.grad_u, name="conv-a")


# -------------------------------------------------------------------- tables
def eoc(errors, hs) -> list[float]:
    """Experimental orders log(e_{i-1}/e_i) / log(h_{i-1}/h_i); first entry NaN."""
    out = [math.nan]
    for i in range(1, len(errors)):
        out.append(math.log(errors[i - 1] / errors[i]) / math.log(hs[i - 1] / hs[i]))
    return out


COLUMNS = ("level", "h", "ndof", "l2_error", "h1_error", "dg_error", "l2_eoc", "h1_eoc", "kappa")


@dataclass
class ConvergenceTable:
    title: str = ""
    levels: list = field(default_factory=list)
    h: list = field(default_factory=list)
    ndof: list = field(default_factory=list)
    l2: list = field(default_factory=list)
    h1: list = field(default_factory=list)
    dg: list = field(default_factory=list)
    kappa: list = field(default_factory=list)

    def add(self, level, h, ndof, l2, h1, dg=math.nan, kappa=math.nan):
        if self.h and not h < self.h[-1]:
            raise ValueError("mesh sizes must decrease strictly")
        self.levels.append(level)
        self.h.append(float(h))
        self.ndof.append(int(ndof))
        self.l2.append(float(l2))
        self.h1.append(float(h1))
        self.dg.append(float(dg))
        self.kappa.append(float(kappa))

    def __len__(self):
        return len(self.h)

    @property
    def l2_eoc(self):
        return eoc(self.l2, self.h) if self.h else []

    @property
    def h1_eoc(self):
        return eoc(self.h1, self.h) if self.h else []

    def rows(self):
        return list(zip(self.levels, self.h, self.ndof, self.l2, self.h1, self.dg, self.l2_eoc, self.h1_eoc, self.kappa))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(COLUMNS) + "\n")
        for row in self.rows():
            buf.write(f"{row[0]},{row[1]:.17g},{row[2]}," + ",".join(f"{v:.17g}" for v in row[3:]) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, title: str = "") -> "ConvergenceTable":
        t = cls(title)
        for rec in csv.DictReader(io.StringIO(text)):
            t.add(int(rec["level"]), float(rec["h"]), int(rec["ndof"]), float(rec["l2_error"]),
                  float(rec["h1_error"]), float(rec["dg_error"]), float(rec["kappa"]))
        return t


def _svg(series: dict[str, tuple]) -> str:
    """Log-log chart of (ndof, error) series with a slope triangle per series."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for name, (nd, err) in series.items():
        if len(nd) == 0:
            continue
        ax.loglog(nd, err, marker="o", label=name)
        if len(nd) >= 2:
            n0, n1 = nd[-2], nd[-1]
            k = math.log(err[-1] / err[-2]) / math.log(n1 / n0)
            e0 = 0.5 * err[-1]
            e1 = e0 * (n1 / n0) ** k
            ax.loglog([n0, n1, n1, n0], [e0, e0, e1, e0], color="gray", lw=0.8)
            ax.annotate(f"{k:.2f}", (n1, math.sqrt(e0 * e1)), fontsize=7, color="gray")
    ax.set_xlabel("degrees of freedom")
    ax.set_ylabel("error")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    buf = io.StringIO()
    fig.savefig(buf, format="svg")
    plt.close(fig)
    return buf.getvalue()


def table_series(tables: dict[str, ConvergenceTable]) -> dict[str, tuple]:
    out = {}
    for name, t in tables.items():
        out[f"{name} H1".strip()] = (t.ndof, t.h1)
        out[f"{name} L2".strip()] = (t.ndof, t.l2)
    return out


def history_csv(history: list[AdaptRecord]) -> str:
    return AdaptRecord.CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in history)


def emit(table, fmt: str = "csv", path=None, header: str | None = None) -> str:
    """Render a table (or dict of tables) as CSV or SVG; write it if ``path`` is given."""
    tables = table if isinstance(table, dict) else {table.title: table}
    if fmt == "csv":
        parts = []
        for name, t in tables.items():
            if len(tables) > 1:
                parts.append(f"# {name}\n")
            parts.append(t.to_csv())
        text = "".join(parts)
        if header:
            text = f"# {header}\n" + text
    elif fmt == "svg":
        text = _svg(table_series(tables))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


# --------------------------------------------------------------------- runs
@dataclass
class TestCase:
    name: str
    mesh_builder: Callable[[int], Mesh]
    problem: ProblemSpec
    r: int = 0
    s: int = 1
    alpha: float = 1.0
    c_sigma: float = 1.0
    method: str = "RFEM"
    levels: tuple = TEST1_LEVELS

    __test__ = False  # not a pytest class

    @property
    def stab(self) -> StabSpec:
        return StabSpec("jump", alpha=self.alpha, c_sigma=self.c_sigma, power=sigma_power(self.alpha))

    def provenance(self, mesh_family: str = "criss-cross") -> str:
        return (
            f"r={self.r} s={self.s} alpha={self.alpha:g} c_sigma={self.c_sigma:g} "
            f"sigma={sigma_law(self.alpha)} mesh={mesh_family} problem={self.problem.name}"
        )


def _solve_rfem(mesh, r, s, problem, stab):
    dg = build_space(mesh, "DG", r)
    cg = build_space(mesh, "CG", s)
    op = build_recovery(dg, cg)
    system = build_rfem_system(dg, cg, op, problem, stab)
    u = FeFunction(dg, solve(system))
    return u, op(u), system


def run_case(case: TestCase, with_kappa: bool = False) -> ConvergenceTable:
    table = ConvergenceTable(case.name)
    for n in case.levels:
        mesh = case.mesh_builder(n)
        _, eu, system = _solve_rfem(mesh, case.r, case.s, case.problem, case.stab)
        l2, h1 = error_norms(eu, case.problem.u, case.problem.grad_u)
        kappa = condition_estimate(system.matrix) if with_kappa else math.nan
        table.add(n, mesh.elem_diameter.max(), system.matrix.shape[0], l2, h1, kappa=kappa)
        log.info("%s n=%d: L2 %.3e H1 %.3e", case.name, n, l2, h1)
    return table


def run_test1(r=0, s=1, alpha=1.0, levels=TEST1_LEVELS, c_sigma=1.0, with_kappa=False) -> ConvergenceTable:
    case = TestCase("test1", make_crisscross, smooth_problem(), r, s, alpha, c_sigma, levels=tuple(levels))
    return run_case(case, with_kappa)


def run_test1_dg_compare(c_sigmas=DG_COMPARE_CSIGMA, levels=TEST1_LEVELS) -> dict[str, ConvergenceTable]:
    """Lowest-order R-FEM for several c_sigma (sigma = c h) against P1 IP dG with sigma = 10/h."""
    out = {f"rfem c_sigma={c:g}": run_test1(0, 1, 1.0, levels, c) for c in c_sigmas}
    problem = smooth_problem()
    ip = ConvergenceTable("ipdg")
    for n in levels:
        mesh = make_crisscross(n)
        dg = build_space(mesh, "DG", 1)
        sigma = IPDG_PENALTY / mesh.facet_h
        u = FeFunction(dg, solve(build_ipdg_system(dg, problem, sigma)))
        l2, h1 = error_norms(u, problem.u, problem.grad_u)
        dgerr = math.sqrt(h1**2 + jump_norm_sq(u, sigma))
        ip.add(n, mesh.elem_diameter.max(), dg.ndof, l2, h1, dgerr)
    out["ipdg"] = ip
    return out


def run_test2(levels=(2, 4, 8, 16, 32)) -> ConvergenceTable:
    case = TestCase("test2", make_lshape, lshape_problem(), 0, 1, 1.0, 1.0, levels=tuple(levels))
    return run_case(case)


def run_test3(n0: int = 2, theta: float = 0.25, max_iter: int = 12, tol: float = 1e-3,
              keep_meshes: bool = False) -> list[AdaptRecord]:
    return adapt_loop(lshape_problem(), make_lshape(n0), 0, 1, StabSpec("jump", alpha=1.0),
                      theta=theta, max_iter=max_iter, tol=tol, keep_meshes=keep_meshes)


def adaptive_slope(history: list[AdaptRecord], skip: int = 3) -> float:
    """Least-squares slope of log(error) against log(ndof), skipping early iterations."""
    nd = np.log([h.ndof for h in history[skip:]])
    er = np.log([h.error for h in history[skip:]])
    return float(np.polyfit(nd, er, 1)[0])


def overshoot(values) -> float:
    """Amount by which values leave the range [0, 1] of the reduced solution."""
    v = np.asarray(values)
    return float(max(0.0, v.max() - 1.0, -v.min()))


@dataclass
class StabilityReport:
    eps: float
    n: int
    rfem_overshoot: float
    dg_overshoot: float
    rfem_finite: bool
    dg_finite: bool


def run_test4_stability(eps: float, n: int = TEST4_N) -> StabilityReport:
    """Field (b), f = 1: R-FEM (recovered nodal values) against P1 upwind IP dG."""
    mesh = make_crisscross(n)
    problem = convection_problem(eps, "b")
    _, eu, _ = _solve_rfem(mesh, 0, 1, problem, StabSpec("jump", alpha=1.0))
    dg = build_space(mesh, "DG", 1)
    sigma = IPDG_PENALTY * eps / mesh.facet_h
    udg = solve(build_ipdg_system(dg, problem, sigma))
    return StabilityReport(eps, n, overshoot(eu.coeffs), overshoot(udg),
                           bool(np.all(np.isfinite(eu.coeffs))), bool(np.all(np.isfinite(udg))))


def run_test4(which: str = "a", eps_list=None, n: int = TEST4_N, levels=(4, 8, 16, 32), full: bool = False):
    """Field 'a': convergence tables keyed by eps. Field 'b': stability reports."""
    if which == "a":
        eps_list = eps_list or TEST4_EPS_A
        out = {}
        for eps in eps_list:
            case = TestCase(f"test4a eps={eps:g}", make_crisscross, convection_problem(eps, "a"), levels=tuple(levels))
            out[case.name] = run_case(case)
        return out
    if which == "b":
        eps_list = eps_list or TEST4_EPS_B
        n = TEST4_N_FULL if full else n
        return [run_test4_stability(eps, n) for eps in eps_list]
    raise ValueError("field must be 'a' or 'b'")


def condition_table(alpha: float, levels=(4, 8, 16, 32), r=0, s=1, c_sigma=1.0) -> ConvergenceTable:
    """Spectral condition numbers of the full R-FEM matrix on criss-cross meshes."""
    return run_test1(r, s, alpha, levels, c_sigma, with_kappa=True)


def kappa_exponent(table: ConvergenceTable) -> float:
    """Fitted exponent of kappa against the number of unknowns."""
    return float(np.polyfit(np.log(table.ndof), np.log(table.kappa), 1)[0])
