"""Problem data model: the arithmetic expression language for user-declared
dynamics and costs, control boxes, problem validation, the structured config
document loader and the built-in problem registry.

Expressions are small immutable ASTs over the variables t, x1..xn, u1..um.
Evaluation is plain real arithmetic, vectorized over numpy arrays, with
explicit domain errors (atanh at |z| >= 1, log at z <= 0, division by zero)
that carry the offending subexpression.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    ExpressionDomainError,
    ExpressionSyntaxError,
    FracoptError,
)
from .fde_solvers import VectorField
from .grids import MultiOrder

UNARY_FUNCTIONS = ("exp", "log", "sin", "cos", "tanh", "atanh", "sqrt", "abs")


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------


class ExprNode:
    """Base class of expression tree nodes."""

    def source(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Const(ExprNode):
    value: float

    def source(self) -> str:
        if self.value < 0:
            return f"(-{abs(self.value)!r})"
        return repr(self.value)


@dataclass(frozen=True)
class Var(ExprNode):
    kind: str  # 't', 'x' or 'u'
    index: int = 0  # 1-based for x/u, unused for t

    def source(self) -> str:
        return "t" if self.kind == "t" else f"{self.kind}{self.index}"


@dataclass(frozen=True)
class Unary(ExprNode):
    op: str  # 'neg' or a function name
    child: ExprNode

    def source(self) -> str:
        if self.op == "neg":
            return f"(-{self.child.source()})"
        return f"{self.op}({self.child.source()})"


@dataclass(frozen=True)
class Binary(ExprNode):
    op: str
    left: ExprNode
    right: ExprNode

    def source(self) -> str:
        return f"({self.left.source()}{self.op}{self.right.source()})"


def to_source(e: ExprNode) -> str:
    """Deterministic, fully parenthesized rendering that re-parses to ``e``."""
    return e.source()


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

_NUMBER_RE = re.compile(r"(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


class _Parser:
    def __init__(self, src: str, n: int, m: int):
        self.src = src
        self.n = n
        self.m = m
        self.pos = 0

    def _byte_offset(self, pos: int | None = None) -> int:
        p = self.pos if pos is None else pos
        return len(self.src[:p].encode("utf-8"))

    def error(self, message: str, pos: int | None = None):
        raise ExpressionSyntaxError(message, self._byte_offset(pos))

    def skip_ws(self):
        while self.pos < len(self.src) and self.src[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.src[self.pos] if self.pos < len(self.src) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            self.error(f"expected '{ch}'")
        self.pos += 1

    def parse(self) -> ExprNode:
        node = self.expr()
        self.skip_ws()
        if self.pos != len(self.src):
            self.error("unexpected trailing input")
        return node

    def expr(self) -> ExprNode:
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.src[self.pos]
            self.pos += 1
            node = Binary(op, node, self.term())
        return node

    def term(self) -> ExprNode:
        node = self.factor()
        while self.peek() in ("*", "/"):
            op = self.src[self.pos]
            self.pos += 1
            node = Binary(op, node, self.factor())
        return node

    def factor(self) -> ExprNode:
        node = self.base()
        if self.peek() == "^":
            self.pos += 1
            node = Binary("^", node, self.factor())  # right-associative
        return node

    def base(self) -> ExprNode:
        ch = self.peek()
        if ch == "":
            self.error("unexpected end of input")
        if ch == "-":
            self.pos += 1
            return Unary("neg", self.base())
        if ch == "(":
            self.pos += 1
            node = self.expr()
            self.expect(")")
            return node
        if ch.isdigit() or ch == ".":
            mo = _NUMBER_RE.match(self.src, self.pos)
            if mo is None:
                self.error("malformed number")
            self.pos = mo.end()
            return Const(float(mo.group(0)))
        mo = _IDENT_RE.match(self.src, self.pos)
        if mo is None:
            self.error(f"unexpected character '{ch}'")
        name = mo.group(0)
        start = self.pos
        self.pos = mo.end()
        if name == "t":
            return Var("t")
        if name[0] in ("x", "u") and name[1:].isdigit():
            idx = int(name[1:])
            bound = self.n if name[0] == "x" else self.m
            if not (1 <= idx <= bound):
                self.error(
                    f"variable {name} out of range (declared {name[0]}-dimension {bound})",
                    start,
                )
            return Var(name[0], idx)
        if name in UNARY_FUNCTIONS:
            self.expect("(")
            node = self.expr()
            self.expect(")")
            return Unary(name, node)
        self.error(f"unknown identifier '{name}'", start)


def parse_expression(src: str, n: int, m: int) -> ExprNode:
    """Parse an expression over t, x1..xn, u1..um.

    Grammar: expr := term (('+'|'-') term)*; term := factor (('*'|'/')
    factor)*; factor := base ('^' factor)?; '^' is right-associative.
    Raises :class:`ExpressionSyntaxError` with a byte offset on failure.
    """
    if not src or not src.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    return _Parser(src, n, m).parse()


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def _domain_check(bad: np.ndarray, message: str, e: ExprNode):
    if np.any(bad):
        raise ExpressionDomainError(message, to_source(e))


def _ev(e: ExprNode, t, x, u):
    if isinstance(e, Const):
        return np.asarray(e.value, dtype=float)
    if isinstance(e, Var):
        if e.kind == "t":
            return np.asarray(t, dtype=float)
        pool = x if e.kind == "x" else u
        if e.index > len(pool):
            raise DimensionError(f"variable {e.kind}{e.index} exceeds declared dimension")
        return np.asarray(pool[e.index - 1], dtype=float)
    if isinstance(e, Unary):
        v = _ev(e.child, t, x, u)
        if e.op == "neg":
            return -v
        if e.op == "exp":
            return np.exp(v)
        if e.op == "log":
            _domain_check(v <= 0.0, "log of non-positive value", e)
            return np.log(v)
        if e.op == "sin":
            return np.sin(v)
        if e.op == "cos":
            return np.cos(v)
        if e.op == "tanh":
            return np.tanh(v)
        if e.op == "atanh":
            _domain_check(np.abs(v) >= 1.0, "atanh outside (-1, 1)", e)
            return np.arctanh(v)
        if e.op == "sqrt":
            _domain_check(v < 0.0, "sqrt of negative value", e)
            return np.sqrt(v)
        if e.op == "abs":
            return np.abs(v)
        raise FracoptError(f"unknown unary op {e.op}")
    if isinstance(e, Binary):
        a = _ev(e.left, t, x, u)
        b = _ev(e.right, t, x, u)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            _domain_check(b == 0.0, "division by zero", e)
            return a / b
        if e.op == "^":
            _domain_check((a < 0.0) & (np.floor(b) != b), "negative base with non-integer exponent", e)
            _domain_check((a == 0.0) & (b < 0.0), "zero base with negative exponent", e)
            return np.power(a, b)
        raise FracoptError(f"unknown binary op {e.op}")
    raise FracoptError(f"unknown node type {type(e).__name__}")


def eval_expression(e: ExprNode, t, x, u):
    """Evaluate an expression; t may be scalar or an array, x/u have one row
    per component (each row scalar or array).  Domain violations raise
    :class:`ExpressionDomainError` carrying the offending subexpression."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = _ev(e, t, x, u)
    if out.ndim == 0:
        return float(out)
    return out


# --------------------------------------------------------------------------
# Control set and problem data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlSet:
    """Closed box of admissible control values."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise DimensionError("lower/upper must be 1-d and congruent")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise DomainError("control bounds must be finite")
        if np.any(self.lower > self.upper):
            raise DomainError("lower bounds must not exceed upper bounds")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def clip(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.lower, self.upper)


def _max_indices(e: ExprNode) -> tuple[int, int]:
    if isinstance(e, Var):
        if e.kind == "x":
            return e.index, 0
        if e.kind == "u":
            return 0, e.index
        return 0, 0
    if isinstance(e, Unary):
        return _max_indices(e.child)
    if isinstance(e, Binary):
        lx, lu = _max_indices(e.left)
        rx, ru = _max_indices(e.right)
        return max(lx, rx), max(lu, ru)
    return 0, 0


@dataclass
class ProblemSpec:
    """Full data of one control problem.

    Dynamics ``f`` (one expression per state component), running cost
    ``lagrangian`` and terminal reward ``phi`` are expressions; ``phi`` may
    reference the terminal state x1..xn and t (bound to b).  Analytic
    gradients are optional; central finite differences with step
    1e-6*(1+|x|) are used where they are not declared.  The objective
    phi(b, x(b)) + integral of the lagrangian is maximized.
    """

    name: str
    orders: MultiOrder
    a: float
    b: float
    x_a: np.ndarray
    omega: ControlSet
    f: tuple[ExprNode, ...]
    lagrangian: ExprNode
    phi: ExprNode
    f_jac: tuple[tuple[ExprNode, ...], ...] | None = None
    lagrangian_grad: tuple[ExprNode, ...] | None = None
    phi_grad: tuple[ExprNode, ...] | None = None

    def __post_init__(self):
        self.x_a = np.asarray(self.x_a, dtype=float)
        n = len(self.orders)
        if self.x_a.shape != (n,):
            raise DimensionError(f"x_a must have dim {n}")
        if not np.all(np.isfinite(self.x_a)):
            raise DomainError("x_a must be finite")
        if not (np.isfinite(self.a) and np.isfinite(self.b) and self.b > self.a):
            raise DomainError("need finite b > a")
        if len(self.f) != n:
            raise DimensionError(f"need {n} dynamics expressions, got {len(self.f)}")
        m = self.omega.dim
        for label, exprs in (("f", self.f), ("cost", (self.lagrangian, self.phi))):
            for e in exprs:
                xi, ui = _max_indices(e)
                if xi > n or ui > m:
                    raise DimensionError(f"{label} expression references undeclared variables")
        if self.f_jac is not None and (
            len(self.f_jac) != n or any(len(row) != n for row in self.f_jac)
        ):
            raise DimensionError("f_jac must be an n-by-n expression matrix")

    @property
    def n(self) -> int:
        return len(self.orders)

    @property
    def m(self) -> int:
        return self.omega.dim

    # -- evaluation helpers (all vectorized over a trailing sample axis) --

    @staticmethod
    def _sample_count(t, x, u) -> int | None:
        for arr in (t, x, u):
            a = np.asarray(arr)
            if a.ndim >= 1 and (arr is t or a.ndim == 2):
                return a.shape[-1]
        return None

    @staticmethod
    def _stack(rows, K: int | None) -> np.ndarray:
        if K is None:
            return np.array(rows, dtype=float)
        return np.stack([np.broadcast_to(np.asarray(r, dtype=float), (K,)) for r in rows])

    def f_eval(self, t, x, u) -> np.ndarray:
        rows = [eval_expression(e, t, x, u) for e in self.f]
        return self._stack(rows, self._sample_count(t, x, u))

    def lagrangian_eval(self, t, x, u):
        out = eval_expression(self.lagrangian, t, x, u)
        K = self._sample_count(t, x, u)
        if K is not None:
            return np.broadcast_to(np.asarray(out, dtype=float), (K,)).copy()
        return out

    def phi_eval(self, x_b):
        u0 = np.zeros(self.m)
        return eval_expression(self.phi, self.b, x_b, u0)

    def f_jacobian(self, t, x, u) -> np.ndarray:
        """d f_i / d x_j, shape (n, n) or (n, n, K) for array inputs."""
        K = self._sample_count(t, x, u)
        if self.f_jac is not None:
            rows = [
                self._stack(
                    [eval_expression(self.f_jac[i][j], t, x, u) for j in range(self.n)], K
                )
                for i in range(self.n)
            ]
            return np.stack(rows)
        scalar = np.ndim(x) == 1
        x_arr = np.asarray(x, dtype=float)
        if scalar:
            jac = np.empty((self.n, self.n))
            for j in range(self.n):
                step = 1e-6 * (1.0 + abs(x_arr[j]))
                xp = x_arr.copy()
                xm = x_arr.copy()
                xp[j] += step
                xm[j] -= step
                jac[:, j] = (self.f_eval(t, xp, u) - self.f_eval(t, xm, u)) / (2 * step)
            return jac
        K = x_arr.shape[1]
        jac = np.empty((self.n, self.n, K))
        for j in range(self.n):
            step = 1e-6 * (1.0 + np.abs(x_arr[j]))
            xp = x_arr.copy()
            xm = x_arr.copy()
            xp[j] = x_arr[j] + step
            xm[j] = x_arr[j] - step
            jac[:, j, :] = (self.f_eval(t, xp, u) - self.f_eval(t, xm, u)) / (2 * step)
        return jac

    def lagrangian_grad_x(self, t, x, u) -> np.ndarray:
        """d L / d x, shape (n,) or (n, K)."""
        K = self._sample_count(t, x, u)
        if self.lagrangian_grad is not None:
            rows = [eval_expression(e, t, x, u) for e in self.lagrangian_grad]
            return self._stack(rows, K)
        x_arr = np.asarray(x, dtype=float)
        rows = []
        for j in range(self.n):
            step = 1e-6 * (1.0 + np.abs(x_arr[j]))
            xp = x_arr.copy()
            xm = x_arr.copy()
            xp[j] = x_arr[j] + step
            xm[j] = x_arr[j] - step
            rows.append(
                (self.lagrangian_eval(t, xp, u) - self.lagrangian_eval(t, xm, u))
                / (2 * step)
            )
        return self._stack(rows, K)

    def phi_grad_x(self, x_b) -> np.ndarray:
        u0 = np.zeros(self.m)
        if self.phi_grad is not None:
            return np.array(
                [eval_expression(e, self.b, x_b, u0) for e in self.phi_grad], dtype=float
            )
        x_arr = np.asarray(x_b, dtype=float)
        out = np.empty(self.n)
        for j in range(self.n):
            step = 1e-6 * (1.0 + abs(x_arr[j]))
            xp = x_arr.copy()
            xm = x_arr.copy()
            xp[j] += step
            xm[j] -= step
            out[j] = (self.phi_eval(xp) - self.phi_eval(xm)) / (2 * step)
        return out

    def vector_field(self) -> VectorField:
        spec = self

        class _Field(VectorField):
            def __init__(self):
                super().__init__(spec.f_eval, spec.f_jacobian, dim=spec.n)

            def jacobian_along(self, t, x, u):
                return spec.f_jacobian(t, x, u)

        return _Field()


# --------------------------------------------------------------------------
# Built-in problems
# --------------------------------------------------------------------------


def _p(src: str, n: int, m: int) -> ExprNode:
    return parse_expression(src, n, m)


def builtin_problems() -> list[ProblemSpec]:
    """The registry of shipped problems."""
    paper = ProblemSpec(
        name="paper_example",
        orders=MultiOrder((1.0 / 3.0, 1.0 / 2.0)),
        a=1.0,
        b=5.0,
        x_a=np.array([1.0, 1.0]),
        omega=ControlSet(np.array([-2.0]), np.array([7.0])),
        f=(_p("1-exp(2*u1)", 2, 1), _p("x1", 2, 1)),
        lagrangian=_p("1+exp(2*u1)", 2, 1),
        phi=_p("x2", 2, 1),
        f_jac=(
            (_p("0", 2, 1), _p("0", 2, 1)),
            (_p("1", 2, 1), _p("0", 2, 1)),
        ),
        lagrangian_grad=(_p("0", 2, 1), _p("0", 2, 1)),
        phi_grad=(_p("0", 2, 1), _p("1", 2, 1)),
    )
    lq = ProblemSpec(
        name="lq_smoke",
        orders=MultiOrder((0.7,)),
        a=0.0,
        b=1.0,
        x_a=np.array([0.0]),
        omega=ControlSet(np.array([-10.0]), np.array([10.0])),
        f=(_p("u1", 1, 1),),
        lagrangian=_p("-(u1^2)", 1, 1),
        phi=_p("x1", 1, 1),
        f_jac=((_p("0", 1, 1),),),
        lagrangian_grad=(_p("0", 1, 1),),
        phi_grad=(_p("1", 1, 1),),
    )
    zero = ProblemSpec(
        name="zero_control",
        orders=MultiOrder((0.5,)),
        a=0.0,
        b=1.0,
        x_a=np.array([1.0]),
        omega=ControlSet(np.array([-1.0]), np.array([1.0])),
        f=(_p("-x1", 1, 1),),
        lagrangian=_p("x1^2", 1, 1),
        phi=_p("x1", 1, 1),
    )
    return [paper, lq, zero]


def builtin_problem(name: str) -> ProblemSpec:
    for p in builtin_problems():
        if p.name == name:
            return p
    raise FracoptError(
        f"no built-in problem named '{name}' "
        f"(available: {', '.join(p.name for p in builtin_problems())})"
    )


# --------------------------------------------------------------------------
# Config document
# --------------------------------------------------------------------------


@dataclass
class SolverSettings:
    """Sweep controls read from the [solver] section (all optional)."""

    n_steps: int = 512
    relaxation: float = 0.5
    control_tol: float = 1e-6
    max_iters: int = 500


_TOML_POS_RE = re.compile(r"at line (\d+), column (\d+)")


def _toml_byte_offset(text: str, message: str) -> int:
    mo = _TOML_POS_RE.search(message)
    if mo is None:
        return 0
    line, col = int(mo.group(1)), int(mo.group(2))
    lines = text.split("\n")
    offset = sum(len(ln.encode("utf-8")) + 1 for ln in lines[: line - 1])
    return offset + len(lines[line - 1][: col - 1].encode("utf-8"))


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing '{key}' in [{where}]")
    return section[key]


def load_problem_config(path: str | Path) -> tuple[ProblemSpec, SolverSettings]:
    """Read a problem definition document.

    Sections: [problem] (name, a, b, orders = [..], x_a = [..]),
    [control] (lower = [..], upper = [..]), [dynamics] (f1 = "..", ..),
    [cost] (lagrangian = "..", terminal = ".."), optional [solver]
    (n_steps, relaxation, control_tol, max_iters).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(
            f"malformed config: {exc} (byte offset {_toml_byte_offset(text, str(exc))})"
        ) from exc

    try:
        prob = doc["problem"]
        ctrl = doc["control"]
        dyn = doc["dynamics"]
        cost = doc["cost"]
    except KeyError as exc:
        raise ConfigError(f"missing section [{exc.args[0]}]") from exc

    orders_raw = _require(prob, "orders", "problem")
    x_a = _require(prob, "x_a", "problem")
    name = str(_require(prob, "name", "problem"))
    a = float(_require(prob, "a", "problem"))
    b = float(_require(prob, "b", "problem"))
    lower = _require(ctrl, "lower", "control")
    upper = _require(ctrl, "upper", "control")
    n = len(orders_raw)
    m = len(lower)

    f_exprs = []
    for i in range(1, n + 1):
        src = _require(dyn, f"f{i}", "dynamics")
        f_exprs.append(parse_expression(str(src), n, m))
    lag = parse_expression(str(_require(cost, "lagrangian", "cost")), n, m)
    phi = parse_expression(str(_require(cost, "terminal", "cost")), n, m)

    try:
        spec = ProblemSpec(
            name=name,
            orders=MultiOrder(tuple(float(o) for o in orders_raw)),
            a=a,
            b=b,
            x_a=np.asarray(x_a, dtype=float),
            omega=ControlSet(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)),
            f=tuple(f_exprs),
            lagrangian=lag,
            phi=phi,
        )
    except FracoptError as exc:
        raise ConfigError(f"invalid problem data: {exc}") from exc

    solver = doc.get("solver", {})
    settings = SolverSettings(
        n_steps=int(solver.get("n_steps", SolverSettings.n_steps)),
        relaxation=float(solver.get("relaxation", SolverSettings.relaxation)),
        control_tol=float(solver.get("control_tol", SolverSettings.control_tol)),
        max_iters=int(solver.get("max_iters", SolverSettings.max_iters)),
    )
    return spec, settings
