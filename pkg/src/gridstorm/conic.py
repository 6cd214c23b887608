"""Small LP/SOCP modelling layer on top of Clarabel.

Variables are addressed by name, constraints by name, and duals come back
keyed by constraint name. Sign conventions for reported duals:

* inequality rows report the nonnegative KKT multiplier;
* equality rows report d(objective)/d(rhs) in the program's own sense;
* cone rows report the dual cone vector.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import clarabel
import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERIC_FAILURE = "numeric-failure"


class ProgramError(ValueError):
    pass


class Expr:
    """Affine expression: sum of coef*var plus a constant."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Mapping[str, float] | None = None, const: float = 0.0):
        self.terms: dict[str, float] = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def lift(value: "Expr | float | int") -> "Expr":
        if isinstance(value, Expr):
            return value
        return Expr(const=float(value))

    def copy(self) -> "Expr":
        return Expr(self.terms, self.const)

    def __add__(self, other):
        other = Expr.lift(other)
        out = self.copy()
        for k, v in other.terms.items():
            out.terms[k] = out.terms.get(k, 0.0) + v
        out.const += other.const
        return out

    __radd__ = __add__

    def __neg__(self):
        return Expr({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-Expr.lift(other))

    def __rsub__(self, other):
        return Expr.lift(other) - self

    def __mul__(self, scalar: float):
        if isinstance(scalar, Expr):
            raise TypeError("Expr * Expr is not affine")
        s = float(scalar)
        return Expr({k: s * v for k, v in self.terms.items()}, s * self.const)

    __rmul__ = __mul__

    def __truediv__(self, scalar: float):
        return self * (1.0 / float(scalar))

    def value(self, values: Mapping[str, float]) -> float:
        return self.const + sum(c * values[k] for k, c in self.terms.items())

    def __repr__(self) -> str:
        parts = [f"{v:+g}*{k}" for k, v in self.terms.items()]
        if self.const or not parts:
            parts.append(f"{self.const:+g}")
        return " ".join(parts)


def quicksum(items: Iterable[Expr | float]) -> Expr:
    out = Expr()
    for it in items:
        it = Expr.lift(it)
        for k, v in it.terms.items():
            out.terms[k] = out.terms.get(k, 0.0) + v
        out.const += it.const
    return out


@dataclass
class Variable:
    name: str
    lb: float = -math.inf
    ub: float = math.inf


@dataclass
class LinearConstraint:
    name: str
    expr: Expr  # lhs, constant folded in
    sense: str  # "<=", ">=", "=="
    rhs: float


@dataclass
class ConeConstraint:
    """||vector|| <= scalar, or the rotated form x*y >= ||z||^2."""

    name: str
    kind: str  # "soc" | "rsoc"
    scalar: Expr | None = None
    vector: list[Expr] = field(default_factory=list)
    x: Expr | None = None
    y: Expr | None = None

    def sides(self, values: Mapping[str, float]) -> tuple[float, float]:
        """(lhs, rhs) in the constraint's natural form."""
        if self.kind == "soc":
            return float(np.linalg.norm([e.value(values) for e in self.vector])), self.scalar.value(values)
        z = sum(e.value(values) ** 2 for e in self.vector)
        return z, self.x.value(values) * self.y.value(values)

    def soc_rows(self) -> tuple[Expr, list[Expr]]:
        if self.kind == "soc":
            return self.scalar, self.vector
        return self.x + self.y, [self.x - self.y] + [2.0 * e for e in self.vector]


@dataclass
class Tolerances:
    feas_tol: float = 1e-6
    gap_tol: float = 1e-6
    solver_tol: float = 1e-8
    max_iter: int = 200


class ConicProgram:
    """Named-variable LP/SOCP with a linear objective."""

    def __init__(self, name: str = "program"):
        self.name = name
        self.variables: dict[str, Variable] = {}
        self.linear: dict[str, LinearConstraint] = {}
        self.cones: dict[str, ConeConstraint] = {}
        self.objective = Expr()
        self.sense = "min"
        self.quadratic: list[tuple[float, Expr]] = []

    # -- construction ------------------------------------------------------

    def add_var(self, name: str, lb: float | None = None, ub: float | None = None) -> Expr:
        if name in self.variables:
            raise ProgramError(f"duplicate variable {name}")
        lb = -math.inf if lb is None else float(lb)
        ub = math.inf if ub is None else float(ub)
        if lb > ub:
            raise ProgramError(f"variable {name}: lb {lb} > ub {ub}")
        self.variables[name] = Variable(name, lb, ub)
        return Expr({name: 1.0})

    def var(self, name: str) -> Expr:
        if name not in self.variables:
            raise ProgramError(f"unknown variable {name}")
        return Expr({name: 1.0})

    def set_bounds(self, name: str, lb: float | None = None, ub: float | None = None) -> None:
        v = self.variables[name]
        if lb is not None:
            v.lb = float(lb)
        if ub is not None:
            v.ub = float(ub)

    def _check_name(self, name: str) -> None:
        if name in self.linear or name in self.cones:
            raise ProgramError(f"duplicate constraint name {name}")

    def _check_expr(self, expr: Expr, where: str) -> None:
        for k in expr.terms:
            if k not in self.variables:
                raise ProgramError(f"{where}: unknown variable {k}")

    def add_linear(self, name: str, lhs: Expr | float, sense: str, rhs: Expr | float = 0.0) -> None:
        if sense not in ("<=", ">=", "=="):
            raise ProgramError(f"bad sense {sense}")
        self._check_name(name)
        expr = Expr.lift(lhs) - Expr.lift(rhs)
        self._check_expr(expr, name)
        self.linear[name] = LinearConstraint(name, Expr(expr.terms), sense, -expr.const)

    def add_soc(self, name: str, vector: Sequence[Expr | float], scalar: Expr | float) -> None:
        self._check_name(name)
        vec = [Expr.lift(e) for e in vector]
        t = Expr.lift(scalar)
        for e in vec + [t]:
            self._check_expr(e, name)
        self.cones[name] = ConeConstraint(name, "soc", scalar=t, vector=vec)

    def add_rotated(self, name: str, x: Expr | float, y: Expr | float, z: Sequence[Expr | float]) -> None:
        self._check_name(name)
        vec = [Expr.lift(e) for e in z]
        x, y = Expr.lift(x), Expr.lift(y)
        for e in vec + [x, y]:
            self._check_expr(e, name)
        self.cones[name] = ConeConstraint(name, "rsoc", vector=vec, x=x, y=y)

    def set_objective(self, expr: Expr | float, sense: str = "min") -> None:
        if sense not in ("min", "max"):
            raise ProgramError(f"bad objective sense {sense}")
        expr = Expr.lift(expr)
        self._check_expr(expr, "objective")
        self.objective = expr
        self.sense = sense

    def add_quadratic_term(self, weight: float, expr: Expr) -> None:
        """Adds weight*expr^2 to the objective; evaluation only."""
        self._check_expr(expr, "quadratic objective")
        self.quadratic.append((float(weight), expr))

    def evaluate_objective(self, values: Mapping[str, float]) -> float:
        return self.objective.value(values) + sum(w * e.value(values) ** 2 for w, e in self.quadratic)

    def remove_constraint(self, name: str) -> None:
        self.linear.pop(name, None)
        self.cones.pop(name, None)

    # -- assembly ----------------------------------------------------------

    def _assemble(self):
        index = {n: i for i, n in enumerate(self.variables)}
        n = len(index)
        rows_eq: list[tuple[dict, float, str]] = []
        rows_in: list[tuple[dict, float, str]] = []
        for c in self.linear.values():
            coefs = {index[k]: v for k, v in c.expr.terms.items() if v != 0.0}
            if c.sense == "==":
                rows_eq.append((coefs, c.rhs, c.name))
            elif c.sense == "<=":
                rows_in.append((coefs, c.rhs, c.name))
            else:
                rows_in.append(({k: -v for k, v in coefs.items()}, -c.rhs, c.name))
        for v in self.variables.values():
            j = index[v.name]
            if v.ub < math.inf:
                rows_in.append(({j: 1.0}, v.ub, f"__ub:{v.name}"))
            if v.lb > -math.inf:
                rows_in.append(({j: -1.0}, -v.lb, f"__lb:{v.name}"))

        data, ri, ci, b = [], [], [], []
        layout: list[tuple[str, str, int, int]] = []  # (name, kind, start, stop)
        cones = []
        r = 0

        def push(coefs, rhs):
            nonlocal r
            for j, v in coefs.items():
                ri.append(r)
                ci.append(j)
                data.append(v)
            b.append(rhs)
            r += 1

        if rows_eq:
            start = r
            for coefs, rhs, name in rows_eq:
                layout.append((name, "eq", r, r + 1))
                push(coefs, rhs)
            cones.append(clarabel.ZeroConeT(r - start))
        if rows_in:
            start = r
            for coefs, rhs, name in rows_in:
                layout.append((name, "ineq", r, r + 1))
                push(coefs, rhs)
            cones.append(clarabel.NonnegativeConeT(r - start))
        for c in self.cones.values():
            t, vec = c.soc_rows()
            start = r
            # s = b - A x = [t; vec]
            for e in [t] + vec:
                push({index[k]: -v for k, v in e.terms.items() if v != 0.0}, e.const)
            layout.append((c.name, "cone", start, r))
            cones.append(clarabel.SecondOrderConeT(r - start))

        a = sp.csc_matrix((data, (ri, ci)), shape=(r, n))
        q = np.zeros(n)
        sign = 1.0 if self.sense == "min" else -1.0
        for k, v in self.objective.terms.items():
            q[index[k]] += sign * v
        return index, a, np.asarray(b, dtype=float), q, cones, layout

    # -- debug dump ----------------------------------------------------------

    def to_lp_text(self) -> str:
        """CPLEX-LP style text; cones are written as quadratic constraints."""

        def fmt(expr: Expr) -> str:
            parts = [f"{v:+.12g} {_lp_name(k)}" for k, v in expr.terms.items() if v != 0.0]
            return " ".join(parts) if parts else "0 " + _lp_name(next(iter(self.variables), "x"))

        lines = [f"\\ {self.name}", "Maximize" if self.sense == "max" else "Minimize"]
        obj = fmt(self.objective)
        if self.objective.const:
            obj += f" {self.objective.const:+.12g} constant__"
        lines.append(f" obj: {obj}")
        lines.append("Subject To")
        for c in self.linear.values():
            op = {"<=": "<=", ">=": ">=", "==": "="}[c.sense]
            lines.append(f" {_lp_name(c.name)}: {fmt(c.expr)} {op} {c.rhs:.12g}")
        for c in self.cones.values():
            t, vec = c.soc_rows()
            aux = []
            for i, e in enumerate([t] + vec):
                nm = _lp_name(f"{c.name}__{i}")
                aux.append(nm)
                lines.append(f" {nm}_def: {fmt(e)} - {nm} = {-e.const:.12g}")
            sq = " + ".join(f"{x} ^ 2" for x in aux[1:])
            lines.append(f" {_lp_name(c.name)}: [ {sq} - {aux[0]} ^ 2 ] <= 0")
        lines.append("Bounds")
        for v in self.variables.values():
            nm = _lp_name(v.name)
            lo = "-inf" if v.lb == -math.inf else f"{v.lb:.12g}"
            hi = "+inf" if v.ub == math.inf else f"{v.ub:.12g}"
            lines.append(f" {lo} <= {nm} <= {hi}")
        for c in self.cones.values():
            lines.append(f" {_lp_name(c.name)}__0 >= 0")
            for i in range(1, len(c.soc_rows()[1]) + 1):
                lines.append(f" {_lp_name(f'{c.name}__{i}')} free")
        if self.objective.const:
            lines.append(" constant__ = 1")
        lines.append("End")
        return "\n".join(lines) + "\n"

    def dump(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_lp_text())
        return path


def _lp_name(name: str) -> str:
    out = []
    for ch in name:
        out.append(ch if ch.isalnum() or ch in "_.[]" else "_")
    s = "".join(out)
    return s if not s[0].isdigit() else "v" + s


@dataclass
class ProgramSolution:
    status: str
    primal: dict[str, float]
    duals: dict[str, float | np.ndarray]
    objective: float
    dual_objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    relative_gap: float
    solver_status: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def __getitem__(self, name: str) -> float:
        return self.primal[name]

    def value(self, expr: Expr) -> float:
        return expr.value(self.primal)


_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
}


def solve(program: ConicProgram, tolerances: Tolerances | None = None, dump_to: str | Path | None = None) -> ProgramSolution:
    """Solve ``program``; never mutates it."""
    tol = tolerances or Tolerances()
    if program.quadratic:
        raise ProgramError("quadratic objective terms are evaluation-only")
    if dump_to is not None:
        program.dump(dump_to)
    index, a, b, q, cones, layout = program._assemble()
    n = len(index)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = tol.solver_tol
    settings.tol_gap_abs = tol.solver_tol
    settings.tol_gap_rel = tol.solver_tol
    settings.max_iter = tol.max_iter
    settings.presolve_enable = False
    p = sp.csc_matrix((n, n))
    if a.shape[0] == 0:
        # Clarabel rejects empty constraint sets; a free LP is unbounded unless q == 0.
        status = OPTIMAL if not np.any(q) else UNBOUNDED
        primal = {k: 0.0 for k in index}
        obj = program.objective.const
        return ProgramSolution(status, primal, {}, obj, obj, 0, 0.0, 0.0, 0.0, "trivial")
    result = clarabel.DefaultSolver(p, q, a, b, cones, settings).solve()
    raw = str(result.status)
    status = _STATUS.get(raw, NUMERIC_FAILURE)
    x = np.asarray(result.x, dtype=float)
    z = np.asarray(result.z, dtype=float)
    names = list(index)
    primal = {nm: float(x[i]) for i, nm in enumerate(names)}

    # Residuals computed on the original (unscaled) data.
    s = b - a @ x
    viol = 0.0
    for name, kind, start, stop in layout:
        if kind == "eq":
            viol = max(viol, abs(s[start]))
        elif kind == "ineq":
            viol = max(viol, -s[start])
        else:
            viol = max(viol, float(np.linalg.norm(s[start + 1 : stop]) - s[start]))
    scale = 1.0 + max(float(np.max(np.abs(b))) if b.size else 0.0, 0.0)
    primal_res = viol / scale
    dual_res = float(np.linalg.norm(q + a.T @ z, np.inf)) / (1.0 + float(np.linalg.norm(q, np.inf)))
    sign = 1.0 if program.sense == "min" else -1.0
    obj = sign * float(result.obj_val) + program.objective.const
    dobj = sign * float(result.obj_val_dual) + program.objective.const
    gap = abs(obj - dobj) / max(1.0, abs(obj))
    if status == OPTIMAL and (primal_res > tol.feas_tol or gap > tol.gap_tol):
        log.warning(
            "%s: solver reported %s but residuals exceed tolerance (primal %.2e, gap %.2e)",
            program.name,
            raw,
            primal_res,
            gap,
        )
        status = NUMERIC_FAILURE

    duals: dict[str, float | np.ndarray] = {}
    for name, kind, start, stop in layout:
        if kind == "eq":
            duals[name] = float(-z[start] if program.sense == "min" else z[start])
        elif kind == "ineq":
            duals[name] = float(z[start])
        else:
            duals[name] = z[start:stop].copy()
    if status != OPTIMAL:
        log.debug("%s: status %s (%s)", program.name, status, raw)
    return ProgramSolution(
        status=status,
        primal=primal,
        duals=duals,
        objective=obj if status == OPTIMAL else math.nan,
        dual_objective=dobj if status == OPTIMAL else math.nan,
        iterations=int(result.iterations),
        primal_residual=primal_res,
        dual_residual=dual_res,
        relative_gap=gap,
        solver_status=raw,
    )


@dataclass(frozen=True)
class ConeResidual:
    name: str
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return self.rhs - self.lhs

    @property
    def relative(self) -> float:
        return (self.rhs - self.lhs) / max(abs(self.rhs), abs(self.lhs), 1e-6)


def check_cone_tightness(program: ConicProgram, solution: ProgramSolution, which: Iterable[str]) -> dict[str, ConeResidual]:
    if solution.status != OPTIMAL:
        raise ProgramError(f"cannot certify cones of a {solution.status} solution")
    out = {}
    for name in which:
        if name not in program.cones:
            raise KeyError(f"unknown cone constraint {name}")
        lhs, rhs = program.cones[name].sides(solution.primal)
        out[name] = ConeResidual(name, lhs, rhs)
    return out
