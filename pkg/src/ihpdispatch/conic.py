"""Small modelling layer for LP/SOCP instances and pluggable backends.

Programs compile to the standard form

    minimise  c'x + c0   subject to   s = b - A x,  s in K

with K = {0}^m_eq x R+^m_ineq x SOC(d_1) x ... (rows in that order; variable
bounds become inequality rows after the user inequalities). Quadratic
objective terms a*e^2 are lowered to rotated cones, so every backend only
needs linear and second-order cones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"

DEFAULT_TOL = 1e-8  # interior-point tolerances
ACCEPT_TOL = 1e-6  # residuals checked after the solve


class Expr:
    """Affine expression sum(coef * x[idx]) + const."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def lift(v) -> "Expr":
        return v if isinstance(v, Expr) else Expr(None, v)

    def copy(self):
        return Expr(self.terms, self.const)

    def __iadd__(self, other):
        if isinstance(other, Expr):
            t = self.terms
            for k, v in other.terms.items():
                t[k] = t.get(k, 0.0) + v
            self.const += other.const
        else:
            self.const += float(other)
        return self

    def __add__(self, other):
        out = self.copy()
        out += other
        return out

    __radd__ = __add__

    def __mul__(self, s):
        s = float(s)
        return Expr({k: v * s for k, v in self.terms.items()}, self.const * s)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-Expr.lift(other))

    def __rsub__(self, other):
        return Expr.lift(other) - self

    def __truediv__(self, s):
        return self * (1.0 / float(s))

    def value(self, x) -> float:
        return self.const + sum(v * x[k] for k, v in self.terms.items())

    def __repr__(self):
        return f"Expr({len(self.terms)} terms, const={self.const:g})"


def lsum(items) -> Expr:
    out = Expr()
    for it in items:
        out += it
    return out


@dataclass
class StandardForm:
    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    c0: float
    n_eq: int
    n_ineq: int
    soc_dims: list
    lb: np.ndarray
    ub: np.ndarray
    n_user_ineq: int  # ineq rows before the bound rows

    @property
    def n_linear(self) -> int:
        return self.n_eq + self.n_ineq


class ConicProgram:
    def __init__(self, name: str = "program"):
        self.name = name
        self.var_names: list = []
        self.lb: list = []
        self.ub: list = []
        self._index: dict = {}
        self.objective = Expr()
        self.eqs: list = []  # (Expr, name) meaning expr == 0
        self.les: list = []  # expr <= 0
        self.socs: list = []  # (list[Expr] vector part, Expr bound, name)
        self.linear_names: list = []

    # variables ---------------------------------------------------------
    def var(self, name: str, lb: float = -math.inf, ub: float = math.inf) -> Expr:
        if name in self._index:
            raise ValueError(f"duplicate variable name {name!r}")
        k = len(self.var_names)
        self._index[name] = k
        self.var_names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        return Expr({k: 1.0})

    def index(self, name: str) -> int:
        return self._index[name]

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    # constraints -------------------------------------------------------
    def _check(self, e: Expr):
        if e.terms and max(e.terms) >= self.n_vars:
            raise ValueError("expression references an undeclared variable")

    def eq(self, lhs, rhs=0.0, name: str | None = None) -> str:
        e = Expr.lift(lhs) - rhs
        self._check(e)
        name = name or f"eq{len(self.eqs)}"
        self.eqs.append((e, name))
        return name

    def le(self, lhs, rhs=0.0, name: str | None = None) -> str:
        e = Expr.lift(lhs) - rhs
        self._check(e)
        name = name or f"le{len(self.les)}"
        self.les.append((e, name))
        return name

    def ge(self, lhs, rhs=0.0, name: str | None = None) -> str:
        return self.le(Expr.lift(rhs) - lhs, 0.0, name)

    def soc(self, vector, bound, name: str | None = None) -> str:
        """||vector|| <= bound with affine entries."""
        vector = [Expr.lift(v) for v in vector]
        bound = Expr.lift(bound)
        for e in vector + [bound]:
            self._check(e)
        name = name or f"soc{len(self.socs)}"
        self.socs.append((vector, bound, name))
        return name

    # objective ---------------------------------------------------------
    def minimize(self, expr) -> None:
        e = Expr.lift(expr)
        self._check(e)
        self.objective += e

    def add_square(self, expr, weight: float, name: str) -> Expr:
        """Add weight*expr^2 to the objective via t >= weight*expr^2; returns t."""
        if weight < 0:
            raise ValueError("quadratic weight must be nonnegative")
        t = self.var(name, 0.0)
        if weight == 0:
            self.eq(t, 0.0, f"{name}:zero")
            return t
        # ||(2 sqrt(w) e, t - 1)|| <= t + 1  <=>  t >= w e^2
        self.soc([2.0 * math.sqrt(weight) * Expr.lift(expr), t - 1.0], t + 1.0, f"{name}:cone")
        self.objective += t
        return t

    # compilation -------------------------------------------------------
    def compile(self) -> StandardForm:
        n = self.n_vars
        rows, cols, vals, b = [], [], [], []
        r = 0

        def emit(e: Expr, sign: float):
            # row encodes b - A x = sign * e  ->  A = -sign * coef, b = sign * const
            nonlocal r
            for k, v in e.terms.items():
                if v != 0.0:
                    rows.append(r)
                    cols.append(k)
                    vals.append(-sign * v)
            b.append(sign * e.const)
            r += 1

        for e, _ in self.eqs:
            emit(e, 1.0)
        for e, _ in self.les:
            emit(e, -1.0)  # s = -e >= 0
        n_user = len(self.les)
        lb, ub = np.array(self.lb, dtype=float), np.array(self.ub, dtype=float)
        n_bounds = 0
        for k in range(n):
            if np.isfinite(ub[k]):
                emit(Expr({k: 1.0}, -ub[k]), -1.0)
                n_bounds += 1
            if np.isfinite(lb[k]):
                emit(Expr({k: -1.0}, lb[k]), -1.0)
                n_bounds += 1
        dims = []
        for vec, bound, _ in self.socs:
            emit(bound, 1.0)
            for e in vec:
                emit(e, 1.0)
            dims.append(1 + len(vec))
        A = sp.csc_matrix((vals, (rows, cols)), shape=(r, n))
        A.sum_duplicates()
        c = np.zeros(n)
        for k, v in self.objective.terms.items():
            c[k] += v
        return StandardForm(A, np.array(b, dtype=float), c, self.objective.const, len(self.eqs),
                            n_user + n_bounds, dims, lb, ub, n_user)


@dataclass
class KktReport:
    primal: float
    stationarity: float
    dual_cone: float
    gap: float
    complementarity: float

    @property
    def dual(self) -> float:
        return max(self.stationarity, self.dual_cone)

    def ok(self, tol: float = ACCEPT_TOL) -> bool:
        return max(self.primal, self.dual, self.gap) <= tol

    def as_dict(self) -> dict:
        return {"primal": self.primal, "stationarity": self.stationarity, "dual_cone": self.dual_cone,
                "gap": self.gap, "complementarity": self.complementarity}


@dataclass
class SolveResult:
    status: str
    objective: float
    x: np.ndarray | None
    z: np.ndarray | None  # standard-form multipliers, one per row
    backend: str
    message: str = ""
    kkt: KktReport | None = None
    program: ConicProgram | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def value(self, item) -> float:
        if isinstance(item, Expr):
            return item.value(self.x)
        return float(self.x[self.program.index(item)])

    def values(self, items) -> np.ndarray:
        return np.array([self.value(i) for i in items])

    def dual(self, name: str) -> float:
        """Multiplier of a linear constraint (>= 0 for inequalities)."""
        prog = self.program
        for k, (_, nm) in enumerate(prog.eqs):
            if nm == name:
                return float(self.z[k])
        for k, (_, nm) in enumerate(prog.les):
            if nm == name:
                return float(self.z[len(prog.eqs) + k])
        raise KeyError(name)

    def with_x(self, x) -> "SolveResult":
        return SolveResult(self.status, self.objective, np.asarray(x, dtype=float), self.z, self.backend,
                           self.message, None, self.program)


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

def _cone_violation(s, sf: StandardForm) -> float:
    viol = 0.0
    m0 = sf.n_eq
    if m0:
        viol = max(viol, float(np.max(np.abs(s[:m0]))))
    m1 = m0 + sf.n_ineq
    if sf.n_ineq:
        viol = max(viol, float(np.max(np.maximum(0.0, -s[m0:m1]))))
    pos = m1
    for d in sf.soc_dims:
        blk = s[pos:pos + d]
        viol = max(viol, float(np.linalg.norm(blk[1:]) - blk[0]))
        pos += d
    return max(viol, 0.0)


def _dual_cone_violation(z, sf: StandardForm) -> float:
    viol = 0.0
    m0, m1 = sf.n_eq, sf.n_eq + sf.n_ineq
    if sf.n_ineq:
        viol = max(viol, float(np.max(np.maximum(0.0, -z[m0:m1]))))
    pos = m1
    for d in sf.soc_dims:
        blk = z[pos:pos + d]
        viol = max(viol, float(np.linalg.norm(blk[1:]) - blk[0]))
        pos += d
    return max(viol, 0.0)


def check_kkt(program: ConicProgram, result: SolveResult, sf: StandardForm | None = None) -> KktReport:
    """Residuals recomputed from the program data and the returned (x, z) only."""
    sf = sf or program.compile()
    x = np.asarray(result.x, dtype=float)
    s = sf.b - sf.A @ x
    scale_b = 1.0 + float(np.max(np.abs(sf.b), initial=0.0))
    scale_c = 1.0 + float(np.max(np.abs(sf.c), initial=0.0))
    primal = _cone_violation(s, sf) / scale_b
    if result.z is None:
        nan = float("nan")
        return KktReport(primal, nan, nan, nan, nan)
    z = np.asarray(result.z, dtype=float)
    stat = float(np.max(np.abs(sf.c + sf.A.T @ z), initial=0.0)) / scale_c
    pobj = float(sf.c @ x)
    dobj = -float(sf.b @ z)
    denom = 1.0 + abs(pobj)
    gap = abs(pobj - dobj) / denom
    comp = abs(float(s @ z)) / denom
    return KktReport(primal, stat, _dual_cone_violation(z, sf) / scale_c, gap, comp)


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------

def _solve_clarabel(sf: StandardForm, tol: float):
    import clarabel

    n = sf.A.shape[1]
    P = sp.csc_matrix((n, n))
    cones = []
    if sf.n_eq:
        cones.append(clarabel.ZeroConeT(sf.n_eq))
    if sf.n_ineq:
        cones.append(clarabel.NonnegativeConeT(sf.n_ineq))
    cones += [clarabel.SecondOrderConeT(d) for d in sf.soc_dims]
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_iter = 400
    solver = clarabel.DefaultSolver(P, sf.c, sf.A, sf.b, cones, settings)
    sol = solver.solve()
    st = str(sol.status)
    if st in ("Solved", "AlmostSolved"):
        status = OPTIMAL
    elif "PrimalInfeasible" in st:
        status = INFEASIBLE
    elif "DualInfeasible" in st:
        status = UNBOUNDED
    else:
        status = NUMERICAL_FAILURE
    return status, np.array(sol.x), np.array(sol.z), st


def _solve_scs(sf: StandardForm, tol: float):
    import scs

    data = {"A": sf.A, "b": sf.b, "c": sf.c}
    cone = {"z": sf.n_eq, "l": sf.n_ineq, "q": list(sf.soc_dims)}
    solver = scs.SCS(data, cone, verbose=False, eps_abs=tol, eps_rel=tol, max_iters=200000,
                     acceleration_lookback=10)
    sol = solver.solve()
    st = sol["info"]["status"]
    if st in ("solved", "solved_inaccurate"):
        status = OPTIMAL
    elif st.startswith("infeasible"):
        status = INFEASIBLE
    elif st.startswith("unbounded"):
        status = UNBOUNDED
    else:
        status = NUMERICAL_FAILURE
    return status, np.array(sol["x"]), np.array(sol["y"]), st


def _solve_highs(sf: StandardForm, tol: float):
    from scipy.optimize import linprog

    if sf.soc_dims:
        raise ValueError("the HiGHS backend handles linear programs only")
    A = sf.A.tocsr()
    m0, m1 = sf.n_eq, sf.n_eq + sf.n_user_ineq
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
              for lo, hi in zip(sf.lb, sf.ub)]
    # linear rows: A x (+s) = b with s in {0} or R+  ->  A x == b / A x <= b
    res = linprog(sf.c, A_ub=A[m0:m1] if m1 > m0 else None, b_ub=sf.b[m0:m1] if m1 > m0 else None,
                  A_eq=A[:m0] if m0 else None, b_eq=sf.b[:m0] if m0 else None, bounds=bounds,
                  method="highs", options={"primal_feasibility_tolerance": 1e-9,
                                           "dual_feasibility_tolerance": 1e-9})
    if res.status == 0:
        status = OPTIMAL
    elif res.status == 2:
        status = INFEASIBLE
    elif res.status == 3:
        status = UNBOUNDED
    else:
        status = NUMERICAL_FAILURE
    if status != OPTIMAL:
        return status, None, None, res.message
    # marginals are d(obj)/d(rhs); standard-form multipliers are their negation
    z = np.zeros(sf.A.shape[0])
    z[:m0] = -res.eqlin.marginals if m0 else []
    z[m0:m1] = -res.ineqlin.marginals if m1 > m0 else []
    r = m1
    for k in range(len(sf.lb)):
        if np.isfinite(sf.ub[k]):
            z[r] = -res.upper.marginals[k]
            r += 1
        if np.isfinite(sf.lb[k]):
            z[r] = res.lower.marginals[k]
            r += 1
    return status, np.array(res.x), z, res.message


BACKENDS = {"clarabel": _solve_clarabel, "scs": _solve_scs, "highs": _solve_highs}


def solve(program: ConicProgram, backend: str = "clarabel", tol: float = DEFAULT_TOL,
          accept_tol: float = ACCEPT_TOL) -> SolveResult:
    """Solve and certify. Solver exceptions become a numerical-failure status."""
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}")
    sf = program.compile()
    if np.any(sf.lb > sf.ub):
        k = int(np.argmax(sf.lb > sf.ub))
        return SolveResult(INFEASIBLE, math.nan, None, None, backend,
                           f"empty bounds on {program.var_names[k]}", program=program)
    try:
        status, x, z, msg = BACKENDS[backend](sf, tol)
    except ValueError:
        raise
    except Exception as exc:  # backend crash on a well-formed program
        return SolveResult(NUMERICAL_FAILURE, math.nan, None, None, backend, repr(exc), program=program)
    if status != OPTIMAL:
        return SolveResult(status, math.nan, None, None, backend, str(msg), program=program)
    res = SolveResult(status, float(sf.c @ x + sf.c0), x, z, backend, str(msg), program=program)
    res.kkt = check_kkt(program, res, sf)
    if not res.kkt.ok(accept_tol):
        res.status = NUMERICAL_FAILURE
        res.message = f"{msg}; residuals above {accept_tol:g}: {res.kkt.as_dict()}"
    return res


def write_cbf(program: ConicProgram, path) -> None:
    """Dump in Conic Benchmark Format (constraints written as -A x + b in K)."""
    sf = program.compile()
    A = sf.A.tocoo()
    n, m = sf.A.shape[1], sf.A.shape[0]
    cones = []
    if sf.n_eq:
        cones.append(f"L= {sf.n_eq}")
    if sf.n_ineq:
        cones.append(f"L+ {sf.n_ineq}")
    cones += [f"Q {d}" for d in sf.soc_dims]
    obj = [(j, v) for j, v in enumerate(sf.c) if v != 0.0]
    bco = [(i, v) for i, v in enumerate(sf.b) if v != 0.0]
    out = ["# " + program.name, "VER", "3", "", "OBJSENSE", "MIN", "", "VAR", f"{n} 1", f"F {n}", "",
           "CON", f"{m} {len(cones)}", *cones, "", "OBJACOORD", str(len(obj))]
    out += [f"{j} {v!r}" for j, v in obj]
    out += ["", "OBJBCOORD", repr(sf.c0), "", "ACOORD", str(A.nnz)]
    out += [f"{i} {j} {-v!r}" for i, j, v in zip(A.row, A.col, A.data)]
    out += ["", "BCOORD", str(len(bco))]
    out += [f"{i} {v!r}" for i, v in bco]
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
