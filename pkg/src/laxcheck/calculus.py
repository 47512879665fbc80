"""Total derivatives, evolution prolongation and the formal antiderivative.

A :class:`DerivationContext` fixes a frame of independent variables, the
evolution rules eliminating time derivatives on-shell, and optionally the
pullback interpretation of the transformed frame's derivatives over
original-frame expressions (``D_y = a**-1 * D_x`` and
``D_tau = D_t + u2*g*D_x``).  Everything here is a pure function over
immutable inputs; contexts are safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType

from .errors import EngineError, EvolutionRuleError, FrameMismatchError
from .exprcore import (
    FRAME_X,
    FRAME_Y,
    Expr,
    IndepVar,
    ZERO,
    _FACTORS,
    _GEN_LIST,
    _gen_slot,
    _normalize,
    _ujet_num,
    atom_record,
    dinv_atom,
    is_zero,
    make,
)
from .polynomials import key_iter, padd, pconst, pmul, ppartial, pshift, slot_key


@dataclass(frozen=True)
class DerivationContext:
    """An independent-variable frame with on-shell evolution rules.

    ``evolution`` maps jet base names to the canonical expression for their
    first time derivative (higher jets prolong by the space derivative).
    With ``pullback=True`` (y-frame only) the context differentiates
    x-frame expressions through the reciprocal change of variables.
    """

    frame: str
    evolution: dict = field(default_factory=dict)
    pullback: bool = False

    def __post_init__(self):
        if self.frame not in (FRAME_X, FRAME_Y):
            raise EngineError(f"unknown frame {self.frame!r}")
        if self.pullback and self.frame != FRAME_Y:
            raise EngineError("pullback interpretation applies to the y-frame only")
        object.__setattr__(self, "evolution", MappingProxyType(dict(self.evolution)))
        object.__setattr__(self, "_cache", {})

    @property
    def space_var(self) -> str:
        return "x" if self.frame == FRAME_X else "y"

    @property
    def time_var(self) -> str:
        return "t" if self.frame == FRAME_X else "tau"


def _flow_derivative(ctx: DerivationContext, kind: str, i: int, s: int) -> Expr:
    """``s``-fold space-prolonged evolution rule for jet ``kind i``."""
    cache = ctx._cache
    key = (kind, i, s)
    hit = cache.get(key)
    if hit is not None:
        return hit
    base_name = f"{kind}{i}"
    rule = ctx.evolution.get(base_name)
    if rule is None:
        raise EvolutionRuleError(
            f"time derivative requested but the context has no evolution rule for {base_name}"
        )
    if s == 0:
        expr = rule
    else:
        lower = _flow_derivative(ctx, kind, i, s - 1)
        space = "x" if kind == "m" else "y"
        expr = _derive(lower, space, ctx)
    cache[key] = expr
    return expr


def _a_derivative(ctx: DerivationContext, var: str) -> Expr:
    cache = ctx._cache
    key = ("a", var)
    hit = cache.get(key)
    if hit is not None:
        return hit
    m2m3 = make("m2") * make("m3")
    dm = _derive(m2m3, var, ctx)
    expr = dm * make("a") / (2 * m2m3)
    cache[key] = expr
    return expr


def _gen_rule(slot: int, var: str, ctx: DerivationContext):
    """Derivative of a single generator: ('z',), ('k', packed key),
    ('p', poly) or ('e', Expr)."""
    desc = _GEN_LIST[slot]
    kind = desc[0]
    if kind == "lam":
        return ("z",)
    if kind == "u":
        i, s = desc[1], desc[2]
        if var == "x":
            if s == 0:
                return ("k", slot_key(_gen_slot(("u", i, 1))))
            return ("p", _ujet_num(i, 2))
        raise EvolutionRuleError(
            f"time derivative requested but the context has no evolution rule for u{i}"
        )
    if kind == "m":
        i, s = desc[1], desc[2]
        if var == "x":
            return ("k", slot_key(_gen_slot(("m", i, s + 1))))
        return ("e", _flow_derivative(ctx, "m", i, s))
    if kind in ("Q", "q"):
        i, s = desc[1], desc[2]
        if var == "y":
            return ("k", slot_key(_gen_slot((kind, i, s + 1))))
        return ("e", _flow_derivative(ctx, kind, i, s))
    if kind == "a":
        return ("e", _a_derivative(ctx, var))
    # atom
    frame, arg = atom_record(desc[1])
    if var in ("t", "tau"):
        raise EngineError("time derivative of a formal antiderivative is undefined")
    if frame is not None and ((var == "x") != (frame == FRAME_X)):
        raise FrameMismatchError("formal antiderivative differentiated in the wrong frame")
    return ("e", arg)


def _derive_poly(p, var: str, frame, ctx: DerivationContext) -> Expr:
    fast = {}
    slow = ZERO
    seen = set()
    for k in p:
        for slot, _ in key_iter(k):
            if slot in seen:
                continue
            seen.add(slot)
            part = ppartial(p, slot)
            if not part:
                continue
            rule = _gen_rule(slot, var, ctx)
            tag = rule[0]
            if tag == "z":
                continue
            if tag == "k":
                fast = padd(fast, pshift(part, rule[1]))
            elif tag == "p":
                fast = padd(fast, pmul(part, rule[1]))
            else:
                slow = slow + Expr(frame, Fraction(1), part, {}) * rule[1]
    if fast:
        slow = slow + _normalize(frame, Fraction(1), fast, {})
    return slow


def _derive(e: Expr, var: str, ctx: DerivationContext) -> Expr:
    if e.coef == 0:
        return ZERO
    frame = e.frame
    d_num = _derive_poly(e.num, var, frame, ctx)
    inv_den = Expr(frame, Fraction(1), pconst(1), dict(e.den)) if e.den else None
    if inv_den is None:
        return e.coef * d_num
    result = e.coef * d_num * inv_den
    num_expr = Expr(frame, Fraction(1), e.num, {})
    for fid, exp in e.den.items():
        d_fac = _derive_poly(_FACTORS[fid].poly, var, frame, ctx)
        if d_fac.coef == 0:
            continue
        inv_f = Expr(frame, Fraction(1), pconst(1), {fid: 1})
        result = result - (e.coef * exp) * num_expr * d_fac * inv_f * inv_den
    return result


def total_derivative(e: Expr, v, ctx: DerivationContext) -> Expr:
    """Leibniz/chain-rule total derivative, eliminating time derivatives
    through the context's evolution rules (on-shell)."""
    if not isinstance(v, IndepVar):
        v = IndepVar(str(v))
    if ctx.pullback:
        actual = e._actual_frame()
        if actual not in (None, FRAME_X):
            raise FrameMismatchError(
                "pullback contexts differentiate x-frame expressions; pull back first"
            )
        if v.name == "y":
            return _derive(e, "x", ctx) / make("a")
        if v.name == "tau":
            advect = make("u2") * make("g")
            return _derive(e, "t", ctx) + advect * _derive(e, "x", ctx)
        if v.frame != FRAME_X:
            raise FrameMismatchError(f"variable {v.name} is not usable in this context")
        return _derive(e, v.name, ctx)
    if v.frame != ctx.frame:
        raise FrameMismatchError(
            f"variable {v.name} does not belong to the {ctx.frame}-frame context"
        )
    actual = e._actual_frame()
    if actual is not None and actual != ctx.frame:
        raise FrameMismatchError(
            f"{actual}-frame expression differentiated in a {ctx.frame}-frame context"
        )
    return _derive(e, v.name, ctx)


def apply_dinv(e: Expr, frame=None) -> Expr:
    """Formal antiderivative: linear over rational constant factors, maps
    zero to zero, and otherwise yields the atom of the canonical argument.
    The space derivative of the result recovers ``e``."""
    if e.coef == 0:
        return ZERO
    return dinv_atom(e, frame)


def conservation_check(density: Expr, flux: Expr, ctx: DerivationContext) -> bool:
    """True when ``D_time(density) + D_space(flux)`` vanishes on-shell."""
    dt = total_derivative(density, ctx.time_var, ctx)
    dx = total_derivative(flux, ctx.space_var, ctx)
    return is_zero(dt + dx)
