"""Scalar and matrix differential operators with one formal inverse power.

A :class:`DiffOp` is a finite sum ``sum_i c_i * D**p_i`` with canonical
expression coefficients and integer powers ``p_i >= -1``; the inverse power
is realized on application through the formal antiderivative and is never
composed on the left of anything but a rational constant.  Operators are
immutable; composition, adjoint and application are pure functions taking a
:class:`~laxcheck.calculus.DerivationContext` that fixes what the symbol
``D`` means (abstract frame derivative, or its pullback reading).
"""

from __future__ import annotations

from math import comb

from .calculus import DerivationContext, apply_dinv, total_derivative
from .errors import FrameMismatchError, OperatorError
from .exprcore import Expr, ZERO, canonical_str, is_zero, make


def _coerce_expr(v) -> Expr:
    return v if isinstance(v, Expr) else make(v)


def _is_rational_const(e: Expr) -> bool:
    return e.coef == 0 or (not e.den and len(e.num) == 1 and 0 in e.num)


class DiffOp:
    """Polynomial in the frame derivative with expression coefficients."""

    __slots__ = ("terms",)

    def __init__(self, terms=()):
        merged: dict[int, Expr] = {}
        for power, coeff in terms:
            coeff = _coerce_expr(coeff)
            if not isinstance(power, int) or power < -1:
                raise OperatorError(f"unsupported derivative power {power}")
            if is_zero(coeff):
                continue
            prev = merged.get(power)
            merged[power] = coeff if prev is None else prev + coeff
        object.__setattr__(
            self,
            "terms",
            tuple(
                (p, merged[p]) for p in sorted(merged, reverse=True) if not is_zero(merged[p])
            ),
        )

    def __setattr__(self, *_):  # pragma: no cover
        raise AttributeError("DiffOp values are immutable")

    # -- constructors --------------------------------------------------------

    @staticmethod
    def derivative(power: int = 1) -> "DiffOp":
        return DiffOp([(power, make(1))])

    @staticmethod
    def multiplier(expr) -> "DiffOp":
        return DiffOp([(0, _coerce_expr(expr))])

    # -- structure -----------------------------------------------------------

    @property
    def is_zero_op(self) -> bool:
        return not self.terms

    def coefficient(self, power: int) -> Expr:
        for p, c in self.terms:
            if p == power:
                return c
        return ZERO

    def powers(self):
        return tuple(p for p, _ in self.terms)

    def __eq__(self, other):
        if not isinstance(other, DiffOp):
            return NotImplemented
        return self.terms == other.terms

    def __hash__(self):
        return hash(self.terms)

    def __str__(self):
        if not self.terms:
            return "0"
        pieces = []
        for p, c in self.terms:
            sym = "" if p == 0 else ("Dinv" if p == -1 else ("D" if p == 1 else f"D^{p}"))
            cs = canonical_str(c)
            if sym:
                piece = sym if cs == "1" else (f"-{sym}" if cs == "-1" else f"({cs})*{sym}")
            else:
                piece = cs if (" " not in cs and not cs.startswith("-")) else f"({cs})"
            pieces.append(piece)
        return " + ".join(pieces)

    __repr__ = __str__

    # -- linear algebra --------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, DiffOp):
            return NotImplemented
        return DiffOp(self.terms + other.terms)

    def __sub__(self, other):
        if not isinstance(other, DiffOp):
            return NotImplemented
        return self + (-other)

    def __neg__(self):
        return DiffOp(tuple((p, -c) for p, c in self.terms))

    def scale(self, factor) -> "DiffOp":
        """Left multiplication by a function: ``(c*A)(f) = c * A(f)``."""
        factor = _coerce_expr(factor)
        return DiffOp(tuple((p, factor * c) for p, c in self.terms))

    def __rmul__(self, factor):
        if isinstance(factor, DiffOp):
            return NotImplemented
        return self.scale(factor)


def _derivative_chain(e: Expr, upto: int, ctx: DerivationContext) -> list[Expr]:
    chain = [e]
    for _ in range(upto):
        chain.append(total_derivative(chain[-1], ctx.space_var, ctx))
    return chain


def op_compose(A: DiffOp, B: DiffOp, ctx: DerivationContext) -> DiffOp:
    """Leibniz-expanded composition ``A o B``.

    Inverse powers may appear on the right; on the left they only pass
    rational constants (anything else raises, naming both terms).
    """
    out: list[tuple[int, Expr]] = []
    for q, c2 in B.terms:
        chains: list[Expr] | None = None
        for p, c1 in A.terms:
            if p >= 0:
                if chains is None or len(chains) <= p:
                    chains = _derivative_chain(c2, max(p, 0), ctx)
                for k in range(p + 1):
                    out.append((p - k + q, comb(p, k) * c1 * chains[k]))
            else:
                if q == -1:
                    raise OperatorError(
                        "composition of a formal antiderivative with a formal "
                        f"antiderivative: ({canonical_str(c1)})*Dinv o ({canonical_str(c2)})*Dinv"
                    )
                if not _is_rational_const(c2):
                    raise OperatorError(
                        "a formal antiderivative composes only with rational constants: "
                        f"({canonical_str(c1)})*Dinv o ({canonical_str(c2)})*D^{q}"
                    )
                out.append((q - 1, c1 * c2))
    return DiffOp(out)


def op_adjoint(A: DiffOp, ctx: DerivationContext) -> DiffOp:
    """Formal adjoint ``(c * D**n)* = (-D)**n o c`` for powers >= 0."""
    out: list[tuple[int, Expr]] = []
    for p, c in A.terms:
        if p < 0:
            raise OperatorError("adjoint of a formal antiderivative term is unsupported")
        sign = -1 if p % 2 else 1
        chain = _derivative_chain(c, p, ctx)
        for k in range(p + 1):
            out.append((p - k, sign * comb(p, k) * chain[k]))
    return DiffOp(out)


def op_apply(A: DiffOp, e, ctx: DerivationContext) -> Expr:
    """Apply the operator to an expression; ``D**-1`` creates atoms."""
    e = _coerce_expr(e)
    total = ZERO
    max_pos = max((p for p, _ in A.terms if p >= 0), default=-1)
    chain = _derivative_chain(e, max_pos, ctx) if max_pos >= 0 else [e]
    for p, c in A.terms:
        if p >= 0:
            total = total + c * chain[p]
        else:
            total = total + c * apply_dinv(e, ctx.frame)
    return total


class OpMatrix:
    """Rectangular matrix of differential operators.

    Zero-order matrices double as Lax matrices of plain expressions.
    """

    __slots__ = ("rows",)

    def __init__(self, rows):
        mat = []
        width = None
        for row in rows:
            ops = tuple(
                entry if isinstance(entry, DiffOp) else DiffOp.multiplier(entry)
                for entry in row
            )
            if width is None:
                width = len(ops)
            elif len(ops) != width:
                raise OperatorError("operator matrix rows have unequal lengths")
            mat.append(ops)
        object.__setattr__(self, "rows", tuple(mat))

    def __setattr__(self, *_):  # pragma: no cover
        raise AttributeError("OpMatrix values are immutable")

    @property
    def shape(self):
        return (len(self.rows), len(self.rows[0]) if self.rows else 0)

    def __getitem__(self, idx):
        i, j = idx
        return self.rows[i][j]

    def __eq__(self, other):
        if not isinstance(other, OpMatrix):
            return NotImplemented
        return self.rows == other.rows

    def __str__(self):
        return "[" + ",\n ".join("[" + ", ".join(map(str, r)) + "]" for r in self.rows) + "]"

    def entries_exprs(self):
        """Expression entries of a zero-order matrix."""
        out = []
        for row in self.rows:
            line = []
            for op in row:
                if any(p != 0 for p, _ in op.terms):
                    raise OperatorError("matrix has non-multiplication entries")
                line.append(op.coefficient(0))
            out.append(line)
        return out

    def map_coeffs(self, fn) -> "OpMatrix":
        return OpMatrix(
            [
                [DiffOp(tuple((p, fn(c)) for p, c in op.terms)) for op in row]
                for row in self.rows
            ]
        )

    def adjoint(self, ctx: DerivationContext) -> "OpMatrix":
        n, m = self.shape
        return OpMatrix(
            [[op_adjoint(self.rows[i][j], ctx) for i in range(n)] for j in range(m)]
        )


def mat_apply(M: OpMatrix, vec, ctx: DerivationContext) -> list[Expr]:
    """Row sums of entrywise applications."""
    n, m = M.shape
    vec = [_coerce_expr(v) for v in vec]
    if len(vec) != m:
        raise OperatorError(f"matrix of width {m} applied to a vector of length {len(vec)}")
    return [
        sum((op_apply(M.rows[i][j], vec[j], ctx) for j in range(m)), ZERO) for i in range(n)
    ]


def mat_apply_parts(M: OpMatrix, vec, ctx: DerivationContext) -> list[list[Expr]]:
    """Per-row lists of the individual entry applications (for the oracle)."""
    n, m = M.shape
    vec = [_coerce_expr(v) for v in vec]
    if len(vec) != m:
        raise OperatorError(f"matrix of width {m} applied to a vector of length {len(vec)}")
    return [[op_apply(M.rows[i][j], vec[j], ctx) for j in range(m)] for i in range(n)]


def _expr_matrix(M) -> list[list[Expr]]:
    if isinstance(M, OpMatrix):
        return M.entries_exprs()
    return [[_coerce_expr(e) for e in row] for row in M]


def zero_curvature_parts(U, V, ctx: DerivationContext) -> list[list[list[Expr]]]:
    """Entrywise parts ``[Dt U, -Dx V, (U V), -(V U)]`` of the residual
    ``Dt U - Dx V + U V - V U`` (frame-appropriate derivative names)."""
    Um = _expr_matrix(U)
    Vm = _expr_matrix(V)
    n = len(Um)
    if any(len(r) != n for r in Um) or len(Vm) != n or any(len(r) != n for r in Vm):
        raise OperatorError("zero-curvature check requires square matrices of equal size")
    t, x = ctx.time_var, ctx.space_var
    out = []
    for i in range(n):
        row = []
        for j in range(n):
            dtu = total_derivative(Um[i][j], t, ctx)
            dxv = total_derivative(Vm[i][j], x, ctx)
            uv = sum((Um[i][k] * Vm[k][j] for k in range(n)), ZERO)
            vu = sum((Vm[i][k] * Um[k][j] for k in range(n)), ZERO)
            row.append([dtu, -dxv, uv, -vu])
        out.append(row)
    return out


def zero_curvature(U, V, ctx: DerivationContext) -> list[list[Expr]]:
    """Canonicalized residual matrix of the compatibility condition."""
    return [
        [sum(parts, ZERO) for parts in row] for row in zero_curvature_parts(U, V, ctx)
    ]
