"""Canonical exact arithmetic for rational differential expressions.

An :class:`Expr` is a quotient ``coef * num / den`` where

* ``coef`` is an exact :class:`~fractions.Fraction`,
* ``num`` is a primitive integer polynomial (packed-key sparse dict, see
  :mod:`laxcheck.polynomials`) in the generators below,
* ``den`` maps registered primitive polynomial factors to positive
  exponents; denominators never contain the square-root generator ``a``.

Generators are jet variables, the spectral parameter ``lam``, the
square-root density ``a`` and formal antiderivative atoms ``Dinv(...)``.
Two frames of independent variables exist, ``x`` (paired with ``t``) and
``y`` (paired with ``tau``); an expression never mixes frames.

Internally the x-frame uses the coordinates ``u_i``, ``u_{i,x}`` and the
jets of ``m_i = u_i - u_{i,xx}`` as independent generators (higher
``u``-derivatives rewrite as ``u_{i,s} = u_{i,s-2} - m_{i,s-2}``); the
printed canonical form expands the ``m``-jets away, so observable
behaviour matches the contract that eliminable jets never appear.  The
square root of ``m2*m3`` is the degree-1 algebraic generator ``a`` with the
rewrite ``a**2 -> m2*m3``; inverses use the conjugate.  All expressions are
immutable values and every operation is a pure function, safe for
concurrent use; the generator/atom registries are append-only under a lock.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from fractions import Fraction
from math import gcd, lcm

from .errors import (
    DivisionByZeroError,
    EngineError,
    ExponentOverflowError,
    FrameMismatchError,
    UnknownSymbolError,
)
from .polynomials import (
    BITS,
    MASK,
    MAX_PACK_EXP,
    Poly,
    key_gcd,
    key_iter,
    padd,
    pcontent,
    pconst,
    pdegree,
    pexact_div,
    pgcd,
    pmax_field,
    pmul,
    pscale,
    pshift,
    slot_key,
)

FRAME_X = "x"
FRAME_Y = "y"

X_PRIMARY = ("u1", "u2", "u3")
X_ELIMINABLE = ("m1", "m2", "m3", "f", "g")
Y_PRIMARY = ("Q1", "Q2", "Q3", "q1", "q2", "q3")
Y_ELIMINABLE = ("u", "v", "w")

_SPACE_OF_FRAME = {FRAME_X: "x", FRAME_Y: "y"}
_TIME_OF_FRAME = {FRAME_X: "t", FRAME_Y: "tau"}


@dataclass(frozen=True)
class IndepVar:
    """An independent variable; ``x``/``t`` form one frame, ``y``/``tau`` the other."""

    name: str

    def __post_init__(self):
        if self.name not in ("x", "t", "y", "tau"):
            raise UnknownSymbolError(f"unknown independent variable {self.name!r}")

    @property
    def frame(self) -> str:
        return FRAME_X if self.name in ("x", "t") else FRAME_Y

    @property
    def is_time(self) -> bool:
        return self.name in ("t", "tau")


@dataclass(frozen=True)
class JetVar:
    """A dependent variable together with derivative orders."""

    base: str
    space_order: int = 0
    time_order: int = 0

    def __post_init__(self):
        if self.base not in X_PRIMARY + X_ELIMINABLE + Y_PRIMARY + Y_ELIMINABLE:
            raise UnknownSymbolError(f"unknown dependent variable {self.base!r}")
        if self.space_order < 0 or self.time_order < 0:
            raise EngineError("derivative orders must be non-negative")

    @property
    def frame(self) -> str:
        return FRAME_X if self.base in X_PRIMARY + X_ELIMINABLE else FRAME_Y


# --------------------------------------------------------------------------
# generator registry
#
# Descriptors: ('u', i, s) with s in {0, 1}; ('m', i, s); ('Q', i, s);
# ('q', i, s); ('lam',); ('a',); ('atom', index).

_LOCK = threading.RLock()
_GEN_SLOTS: dict[tuple, int] = {}
_GEN_LIST: list[tuple] = []


def _gen_slot(desc: tuple) -> int:
    s = _GEN_SLOTS.get(desc)
    if s is not None:
        return s
    with _LOCK:
        s = _GEN_SLOTS.get(desc)
        if s is None:
            s = len(_GEN_LIST)
            _GEN_LIST.append(desc)
            _GEN_SLOTS[desc] = s
        return s


class _AtomRecord:
    __slots__ = ("frame", "arg", "index")


_ATOMS: list[_AtomRecord] = []
_ATOM_IDS: dict[tuple, int] = {}


class _Factor:
    __slots__ = ("poly", "single_slot", "irreducible")


_FACTORS: list[_Factor] = []
_FACTOR_IDS: dict[tuple, int] = {}


def _register_factor(poly: Poly) -> int:
    """Register a primitive, sign-normalized, non-monomial-free polynomial
    as a denominator factor and return its id."""
    key = tuple(sorted(poly.items()))
    fid = _FACTOR_IDS.get(key)
    if fid is not None:
        return fid
    with _LOCK:
        fid = _FACTOR_IDS.get(key)
        if fid is None:
            fac = _Factor()
            fac.poly = dict(poly)
            if len(poly) == 1:
                ((k, c),) = poly.items()
                gens = list(key_iter(k))
                fac.single_slot = gens[0][0] if len(gens) == 1 and gens[0][1] == 1 and c == 1 else None
            else:
                fac.single_slot = None
            fac.irreducible = fac.single_slot is not None or pdegree(poly) <= 1
            fid = len(_FACTORS)
            _FACTORS.append(fac)
            _FACTOR_IDS[key] = fid
        return fid


def _gen_factor(slot: int) -> int:
    return _register_factor({slot_key(slot): 1})


def _desc_frame(desc: tuple):
    k = desc[0]
    if k in ("u", "m", "a"):
        return FRAME_X
    if k in ("Q", "q"):
        return FRAME_Y
    if k == "lam":
        return None
    return _ATOMS[desc[1]].frame


# --------------------------------------------------------------------------
# the Expr value type


class Expr:
    """Immutable canonical rational differential expression.

    Do not call the constructor directly; build values with :func:`make`
    and combine them with Python operators or :func:`arith`.
    """

    __slots__ = ("frame", "coef", "num", "den", "_af")

    def __init__(self, frame, coef: Fraction, num: Poly, den: dict):
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        object.__setattr__(self, "_af", False if (num or den) else None)

    def __setattr__(self, *_):  # pragma: no cover - guards accidental mutation
        raise AttributeError("Expr values are immutable")

    # -- frame bookkeeping -------------------------------------------------

    def _actual_frame(self):
        """Frame implied by the generators actually present (None if free)."""
        cached = self._af
        if cached is not False:
            return cached
        frame = None
        for slot_set in self._gen_slots():
            f = _desc_frame(_GEN_LIST[slot_set])
            if f is not None:
                frame = f
                break
        object.__setattr__(self, "_af", frame)
        return frame

    def _gen_slots(self):
        seen = set()
        for k in self.num:
            for slot, _ in key_iter(k):
                if slot not in seen:
                    seen.add(slot)
                    yield slot
        for fid in self.den:
            for k in _FACTORS[fid].poly:
                for slot, _ in key_iter(k):
                    if slot not in seen:
                        seen.add(slot)
                        yield slot

    # -- python protocol ---------------------------------------------------

    def __bool__(self):
        return self.coef != 0

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = _const(Fraction(other))
        if not isinstance(other, Expr):
            return NotImplemented
        return self.coef == other.coef and self.num == other.num and self.den == other.den

    def __hash__(self):
        return hash((self.coef, frozenset(self.num.items()), frozenset(self.den.items())))

    def __str__(self):
        return canonical_str(self)

    def __repr__(self):
        s = canonical_str(self)
        if len(s) > 120:
            s = s[:117] + "..."
        return f"Expr({s})"

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return _add(self, _neg(other))

    def __rsub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return _add(other, _neg(self))

    def __mul__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return _mul(self, _inv(other))

    def __rtruediv__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return _mul(other, _inv(self))

    def __neg__(self):
        return _neg(self)

    def __pow__(self, n):
        if not isinstance(n, int):
            return NotImplemented
        return _int_pow(self, n)


def _coerce(v):
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, Fraction)):
        return _const(Fraction(v))
    return NotImplemented


ZERO = Expr(None, Fraction(0), {}, {})
ONE = Expr(None, Fraction(1), pconst(1), {})


def _const(c: Fraction) -> Expr:
    if c == 0:
        return ZERO
    return Expr(None, c, pconst(1), {})


def _gen_expr(desc: tuple) -> Expr:
    return Expr(_desc_frame(desc), Fraction(1), {slot_key(_gen_slot(desc)): 1}, {})


def _merge_frames(e1: Expr, e2: Expr):
    f1, f2 = e1.frame, e2.frame
    if f1 == f2 or f2 is None:
        return f1
    if f1 is None:
        return f2
    a1, a2 = e1._actual_frame(), e2._actual_frame()
    if a1 is None or a2 is None or a1 == a2:
        return a1 if a1 is not None else a2
    raise FrameMismatchError(
        f"cannot combine an {a1}-frame expression with a {a2}-frame expression"
    )


# -- the square-root generator ---------------------------------------------

_A_SLOT = None
_A_REDUCE_KEY = None


def _a_slot() -> int:
    global _A_SLOT, _A_REDUCE_KEY
    if _A_SLOT is None:
        _A_SLOT = _gen_slot(("a",))
        _A_REDUCE_KEY = slot_key(_gen_slot(("m", 2, 0))) + slot_key(_gen_slot(("m", 3, 0)))
    return _A_SLOT


def _a_reduce(num: Poly) -> Poly:
    """Rewrite every power ``a**(2j+r)`` as ``(m2*m3)**j * a**r``."""
    aslot = _a_slot()
    off = aslot * BITS
    hit = False
    for k in num:
        if (k >> off) & MASK >= 2:
            hit = True
            break
    if not hit:
        return num
    out: Poly = {}
    red = _A_REDUCE_KEY
    for k, c in num.items():
        e = (k >> off) & MASK
        if e >= 2:
            q, r = divmod(e, 2)
            k = k - ((e - r) << off) + q * red
        s = out.get(k, 0) + c
        if s:
            out[k] = s
        else:
            del out[k]
    return out


# -- normalization core ------------------------------------------------------


def _cancel(coef: Fraction, num: Poly, den: dict):
    """Cancel denominator factors out of ``num``; returns updated triple.

    Factors flagged irreducible are cancelled by exact trial division
    (complete for them); reducible candidates fall back to a gcd split.
    """
    if not den:
        return coef, num, den
    den = dict(den)
    again = True
    while again:
        again = False
        for fid in list(den):
            exp = den[fid]
            fac = _FACTORS[fid]
            slot = fac.single_slot
            if slot is not None:
                off = slot * BITS
                low = min((k >> off) & MASK for k in num)
                t = min(low, exp)
                if t:
                    shift = t << off
                    num = {k - shift: c for k, c in num.items()}
                    exp -= t
            else:
                while exp:
                    q = pexact_div(num, fac.poly)
                    if q is None:
                        break
                    num = q
                    exp -= 1
                if exp and not fac.irreducible:
                    g = pgcd(num, fac.poly)
                    if g and pdegree(g) > 0:
                        h = pexact_div(fac.poly, g)
                        cg, deng = _den_from_poly(g)
                        ch, denh = _den_from_poly(h)
                        coef /= (cg * ch) ** exp
                        del den[fid]
                        for nfid, ne in deng.items():
                            den[nfid] = den.get(nfid, 0) + ne * exp
                        for nfid, ne in denh.items():
                            den[nfid] = den.get(nfid, 0) + ne * exp
                        again = True
                        break
            if exp:
                den[fid] = exp
            else:
                del den[fid]
    return coef, num, den


def _den_from_poly(poly: Poly):
    """Split a polynomial into content, monomial part and registered factors.

    Returns ``(content, den_dict)`` with ``poly = content * prod(factors)``.
    """
    c, p = pcontent(poly)
    den: dict[int, int] = {}
    mg = 0
    first = True
    for k in p:
        mg = k if first else key_gcd(mg, k)
        first = False
        if mg == 0:
            break
    if mg:
        p = {k - mg: v for k, v in p.items()}
        for slot, e in key_iter(mg):
            fid = _gen_factor(slot)
            den[fid] = den.get(fid, 0) + e
    if not (len(p) == 1 and 0 in p and p[0] == 1):
        fid = _register_factor(p)
        den[fid] = den.get(fid, 0) + 1
    return Fraction(c), den


def _den_to_poly(den: dict) -> Poly:
    out = pconst(1)
    for fid, exp in den.items():
        fac = _FACTORS[fid]
        if fac.single_slot is not None:
            out = pshift(out, slot_key(fac.single_slot, exp))
        else:
            for _ in range(exp):
                out = pmul(out, fac.poly)
    return out


def _normalize(frame, coef: Fraction, num: Poly, den: dict) -> Expr:
    if coef == 0 or not num:
        return ZERO
    c, num = pcontent(num)
    coef = coef * c
    if den:
        coef, num, den = _cancel(coef, num, den)
        c, num = pcontent(num)
        coef = coef * c
    if frame is not None and not den and len(num) == 1 and 0 in num:
        frame = None
    return Expr(frame, coef, num, den)


def _mul_factors_into(num: Poly, factors: dict) -> Poly:
    for fid, exp in factors.items():
        if not exp:
            continue
        fac = _FACTORS[fid]
        if fac.single_slot is not None:
            num = pshift(num, slot_key(fac.single_slot, exp))
        else:
            for _ in range(exp):
                num = pmul(num, fac.poly)
    return num


def _add(e1: Expr, e2: Expr) -> Expr:
    if e1.coef == 0:
        _merge_frames(e1, e2)
        return e2
    if e2.coef == 0:
        _merge_frames(e1, e2)
        return e1
    frame = _merge_frames(e1, e2)
    den: dict[int, int] = dict(e1.den)
    for fid, e in e2.den.items():
        if den.get(fid, 0) < e:
            den[fid] = e
    n1 = _mul_factors_into(e1.num, {fid: e - e1.den.get(fid, 0) for fid, e in den.items()})
    n2 = _mul_factors_into(e2.num, {fid: e - e2.den.get(fid, 0) for fid, e in den.items()})
    c1, c2 = e1.coef, e2.coef
    g = Fraction(gcd(c1.numerator, c2.numerator), lcm(c1.denominator, c2.denominator))
    num = padd(pscale(n1, int(c1 / g)), pscale(n2, int(c2 / g)))
    return _normalize(frame, g, num, den)


def _neg(e: Expr) -> Expr:
    if e.coef == 0:
        return e
    return Expr(e.frame, -e.coef, e.num, e.den)


def _mul(e1: Expr, e2: Expr) -> Expr:
    frame = _merge_frames(e1, e2)
    coef = e1.coef * e2.coef
    if coef == 0:
        return ZERO
    c1, n1, d2 = _cancel(Fraction(1), e1.num, e2.den)
    c2, n2, d1 = _cancel(Fraction(1), e2.num, e1.den)
    coef *= c1 * c2
    num = pmul(n1, n2)
    if frame == FRAME_X:
        num = _a_reduce(num)
    den = dict(d1)
    for fid, e in d2.items():
        den[fid] = den.get(fid, 0) + e
    return _normalize(frame, coef, num, den)


def _inv(e: Expr) -> Expr:
    if e.coef == 0:
        raise DivisionByZeroError("division by an expression whose canonical form is zero")
    num = e.num
    if e.frame == FRAME_X or e._actual_frame() == FRAME_X:
        aslot = _a_slot()
        off = aslot * BITS
        if any((k >> off) & MASK for k in num):
            conj = {k: (-c if (k >> off) & MASK else c) for k, c in num.items()}
            normsq = _a_reduce(pmul(num, conj))
            if not normsq:  # pragma: no cover - impossible in the quadratic field
                raise DivisionByZeroError("degenerate algebraic denominator")
            new_num = pmul(conj, _den_to_poly(e.den))
            c2, new_den = _den_from_poly(normsq)
            return _normalize(e.frame, 1 / (e.coef * c2), new_num, new_den)
    c2, new_den = _den_from_poly(num)
    return _normalize(e.frame, 1 / (e.coef * c2), _den_to_poly(e.den), new_den)


def _int_pow(e: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n < 0:
        return _int_pow(_inv(e), -n)
    if e.coef == 0:
        return ZERO
    if pmax_field(e.num) * n > MAX_PACK_EXP:
        raise ExponentOverflowError(f"power {n} exceeds the supported exponent range")
    result = e
    base = e
    n -= 1
    while n:
        if n & 1:
            result = _mul(result, base)
        n >>= 1
        if n:
            base = _mul(base, base)
    return result


# --------------------------------------------------------------------------
# jet construction


def _ujet_num(i: int, s: int) -> Poly:
    """Packed polynomial for ``u_i`` with ``s`` space derivatives in the
    internal basis (orders >= 2 rewrite through the m-jets)."""
    out: Poly = {}
    while s >= 2:
        # u_{i,s} = u_{i,s-2} - m_{i,s-2}; keep expanding the u part
        s -= 2
        k = slot_key(_gen_slot(("m", i, s)))
        out[k] = out.get(k, 0) - 1
    out_k = slot_key(_gen_slot(("u", i, s)))
    out[out_k] = out.get(out_k, 0) + 1
    return {k: c for k, c in out.items() if c}


def _ujet_expr(i: int, s: int) -> Expr:
    return Expr(FRAME_X, Fraction(1), _ujet_num(i, s), {})


def _y_prolong_poly(num: Poly) -> Poly:
    """Space derivative of a polynomial in abstract y-frame jets."""
    out: Poly = {}
    for k, c in num.items():
        for slot, e in key_iter(k):
            desc = _GEN_LIST[slot]
            if desc[0] == "lam":
                continue
            if desc[0] not in ("Q", "q"):
                raise EngineError("prolongation is defined for pure y-frame jet polynomials")
            nk = k - slot_key(slot) + slot_key(_gen_slot((desc[0], desc[1], desc[2] + 1)))
            s = out.get(nk, 0) + c * e
            if s:
                out[nk] = s
            else:
                del out[nk]
    return out


_MIURA_CACHE: dict[str, list[Expr]] = {}


def _miura_expr(name: str, s: int) -> Expr:
    """The y-frame eliminables expand through the standard quotient map to
    the Q-variables; derivatives prolong term by term."""
    chain = _MIURA_CACHE.get(name)
    if chain is None:
        Q1, Q2, Q3 = (_gen_expr(("Q", i, 0)) for i in (1, 2, 3))
        Q3y = _gen_expr(("Q", 3, 1))
        if name == "u":
            base = -(Q2 + Q3)
        elif name == "v":
            base = Q2 * Q3 - Q1 + Q3y
        else:  # w
            Q2y = _gen_expr(("Q", 2, 1))
            Q3yy = _gen_expr(("Q", 3, 2))
            base = Q1 * Q3 - (Q2y * Q3 + Q2 * Q3y) - Q3yy
        chain = _MIURA_CACHE.setdefault(name, [base])
    while len(chain) <= s:
        prev = chain[-1]
        chain.append(Expr(FRAME_Y, prev.coef, _y_prolong_poly(prev.num), {}))
    return chain[s]


_X_INDEX = {"u1": 1, "u2": 2, "u3": 3, "m1": 1, "m2": 2, "m3": 3}
_Y_INDEX = {"Q1": 1, "Q2": 2, "Q3": 3, "q1": 1, "q2": 2, "q3": 3}


def make(value, space_order: int = 0, time_order: int = 0) -> Expr:
    """Build a canonical expression from a constant or a generator name.

    Accepts ints, Fractions, :class:`JetVar`, or names: the x-frame jets
    ``u1 u2 u3`` (``m1 m2 m3 f g`` expand by definition), the y-frame jets
    ``Q1 Q2 Q3 q1 q2 q3`` (``u v w`` expand through the quotient map),
    ``lam`` and ``a``.
    """
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, Fraction)):
        if space_order or time_order:
            raise EngineError("constants take no derivative orders")
        return _const(Fraction(value))
    if isinstance(value, JetVar):
        return make(value.base, value.space_order, value.time_order)
    name = str(value)
    if not isinstance(space_order, int) or space_order < 0:
        raise EngineError(f"negative or non-integer derivative order for {name!r}")
    if time_order:
        raise EngineError(
            "time jets never appear in canonical form; apply total_derivative "
            "with a context instead"
        )
    if name in ("u1", "u2", "u3"):
        return _ujet_expr(_X_INDEX[name], space_order)
    if name in ("m1", "m2", "m3"):
        return _gen_expr(("m", _X_INDEX[name], space_order))
    if name == "f":
        return _ujet_expr(3, space_order) - _ujet_expr(1, space_order + 1)
    if name == "g":
        return _ujet_expr(1, space_order) - _ujet_expr(3, space_order + 1)
    if name in ("Q1", "Q2", "Q3"):
        return _gen_expr(("Q", _Y_INDEX[name], space_order))
    if name in ("q1", "q2", "q3"):
        return _gen_expr(("q", _Y_INDEX[name], space_order))
    if name in ("u", "v", "w"):
        return _miura_expr(name, space_order)
    if name == "lam":
        if space_order:
            raise EngineError("the spectral parameter is a constant")
        return _gen_expr(("lam",))
    if name == "a":
        if space_order:
            raise EngineError(
                "derivatives of the square-root density are computed by total_derivative"
            )
        return _gen_expr(("a",))
    raise UnknownSymbolError(f"unknown generator name {name!r}")


def arith(op: str, lhs, rhs) -> Expr:
    """Named arithmetic entry point: ``add sub mul div int_pow``."""
    lhs = make(lhs) if not isinstance(lhs, Expr) else lhs
    if op == "int_pow":
        if not isinstance(rhs, int):
            raise EngineError("int_pow requires an integer exponent")
        return _int_pow(lhs, rhs)
    rhs = make(rhs) if not isinstance(rhs, Expr) else rhs
    if op == "add":
        return lhs + rhs
    if op == "sub":
        return lhs - rhs
    if op == "mul":
        return lhs * rhs
    if op == "div":
        return lhs / rhs
    raise EngineError(f"unknown arithmetic operation {op!r}")


def is_zero(e: Expr) -> bool:
    """Exact zero test; the trust anchor of every verification."""
    return e.coef == 0


def equals(e1: Expr, e2: Expr) -> bool:
    return is_zero(e1 - e2)


# --------------------------------------------------------------------------
# formal antiderivative atoms


def dinv_atom(arg: Expr, frame=None) -> Expr:
    """The atom for a nonzero canonical argument, with the rational factor
    pulled out; ``frame`` fixes which space derivative recovers the argument
    (defaults to the argument's own frame)."""
    if arg.coef == 0:
        raise EngineError("formal antiderivative atoms require a nonzero argument")
    if frame is None:
        frame = arg._actual_frame()
    elif arg._actual_frame() not in (None, frame):
        raise FrameMismatchError("atom frame differs from its argument's frame")
    key = (frame, tuple(sorted(arg.num.items())), tuple(sorted(arg.den.items())))
    with _LOCK:
        idx = _ATOM_IDS.get(key)
        if idx is None:
            rec = _AtomRecord()
            rec.frame = frame
            rec.arg = Expr(arg.frame, Fraction(1), arg.num, arg.den)
            rec.index = len(_ATOMS)
            _ATOMS.append(rec)
            _ATOM_IDS[key] = rec.index
            idx = rec.index
    desc = ("atom", idx)
    return Expr(
        frame if frame is not None else None,
        arg.coef,
        {slot_key(_gen_slot(desc)): 1},
        {},
    )


def atom_record(index: int):
    rec = _ATOMS[index]
    return rec.frame, rec.arg


def contains_atom(e: Expr) -> bool:
    for slot in e._gen_slots():
        if _GEN_LIST[slot][0] == "atom":
            return True
    return False


def atom_indices(e: Expr) -> set[int]:
    return {(_GEN_LIST[s])[1] for s in e._gen_slots() if _GEN_LIST[s][0] == "atom"}


def replace_atoms(e: Expr, mapper) -> Expr:
    """Substitute atoms by ``mapper(index, normalized_arg) -> Expr | None``
    (None keeps the atom).  Used by diagnostics that need the linearity of
    the formal antiderivative made explicit."""

    def img(slot):
        desc = _GEN_LIST[slot]
        if desc[0] == "atom":
            rec = _ATOMS[desc[1]]
            rep = mapper(desc[1], rec.arg)
            if rep is not None:
                return rep
        return Expr(_desc_frame(desc), Fraction(1), {slot_key(slot): 1}, {})

    return _apply_gen_images(e, img)


# --------------------------------------------------------------------------
# substitution


def _apply_gen_images(e: Expr, img) -> Expr:
    """Rebuild ``e`` by mapping every generator slot through ``img``."""
    if e.coef == 0:
        return ZERO
    cache: dict[int, Expr] = {}

    def image(slot):
        r = cache.get(slot)
        if r is None:
            r = img(slot)
            cache[slot] = r
        return r

    def eval_poly(p: Poly) -> Expr:
        total = ZERO
        for k, c in p.items():
            term = _const(Fraction(c))
            for slot, exp in key_iter(k):
                term = term * _int_pow(image(slot), exp)
            total = total + term
        return total

    out = eval_poly(e.num) * e.coef
    for fid, exp in e.den.items():
        fden = eval_poly(_FACTORS[fid].poly)
        if fden.coef == 0:
            raise DivisionByZeroError("substitution annihilates a denominator factor")
        out = out / _int_pow(fden, exp)
    return out


def _normalize_rules(rules) -> dict[tuple, Expr]:
    out: dict[tuple, Expr] = {}
    for key, image in rules.items():
        if isinstance(key, JetVar):
            base, order, torder = key.base, key.space_order, key.time_order
        elif isinstance(key, tuple):
            base, order = key
            torder = 0
        else:
            base, order, torder = str(key), 0, 0
        if torder:
            raise EngineError("substitution rules map zero-time-order jets only")
        JetVar(base, order)  # validates the name
        out[(base, order)] = make(image) if not isinstance(image, Expr) else image
    return out


def substitute(e: Expr, rules) -> Expr:
    """Simultaneously replace primary jets by expressions.

    Rules are keyed by jet (name or ``(name, space_order)`` or
    :class:`JetVar`); only the exact jets named are replaced (derivatives
    are not prolonged automatically, pre-prolong the rules if needed).
    Eliminable names are accepted but never match a canonical form.
    """
    rules = _normalize_rules(rules)
    if not rules or e.coef == 0:
        return e
    eframe = e._actual_frame()
    for (base, order) in rules:
        kframe = JetVar(base, order).frame
        if eframe is not None and kframe != eframe:
            raise FrameMismatchError(
                f"substitution rule for {base!r} targets the {kframe}-frame "
                f"but the expression lives in the {eframe}-frame"
            )
    touches_sqrt_fields = any(base in ("u2", "u3") for base, _ in rules)
    if touches_sqrt_fields and any(_GEN_LIST[s][0] == "a" for s in e._gen_slots()):
        raise EngineError(
            "substituting into u2/u3 under the square-root generator is unsupported"
        )

    def img_ujet(i, s):
        rule = rules.get((f"u{i}", s))
        return rule if rule is not None else _ujet_expr(i, s)

    def img(slot):
        desc = _GEN_LIST[slot]
        kind = desc[0]
        if kind == "u":
            return img_ujet(desc[1], desc[2])
        if kind == "m":
            return img_ujet(desc[1], desc[2]) - img_ujet(desc[1], desc[2] + 2)
        if kind in ("Q", "q"):
            rule = rules.get((f"{kind}{desc[1]}", desc[2]))
            return rule if rule is not None else _gen_expr(desc)
        if kind == "atom":
            rec = _ATOMS[desc[1]]
            newarg = substitute(rec.arg, dict(rules))
            if newarg.coef == 0:
                return ZERO
            return dinv_atom(newarg, rec.frame)
        return _gen_expr(desc)

    return _apply_gen_images(e, img)


def substitute_raw(e: Expr, rules) -> Expr:  # pragma: no cover - thin alias
    return substitute(e, rules)


# --------------------------------------------------------------------------
# spectral-parameter collection


def lambda_coeffs(e: Expr) -> dict[int, Expr]:
    """Finite map from lambda-power to lambda-free canonical coefficient."""
    if e.coef == 0:
        return {}
    lam = _gen_slot(("lam",))
    off = lam * BITS
    den_shift = 0
    den = {}
    for fid, exp in e.den.items():
        fac = _FACTORS[fid]
        if fac.single_slot == lam:
            den_shift = exp
        elif any((k >> off) & MASK for k in fac.poly):
            raise EngineError("denominator is not a monomial in the spectral parameter")
        else:
            den[fid] = exp
    groups: dict[int, Poly] = {}
    for k, c in e.num.items():
        p = (k >> off) & MASK
        groups.setdefault(p, {})[k - (p << off)] = c
    return {
        p - den_shift: _normalize(e.frame, e.coef, g, dict(den)) for p, g in groups.items()
    }


def lambda_monomial(power: int) -> Expr:
    lam = make("lam")
    return _int_pow(lam, power)


# --------------------------------------------------------------------------
# canonical printing
#
# Print generators: ('jet', frame, base, order) | ('lam',) | ('a',) | ('atom', i)


_X_PRINT_RANK = {"u1": 0, "u2": 1, "u3": 2}
_Y_PRINT_RANK = {"Q1": 0, "Q2": 1, "Q3": 2, "q1": 3, "q2": 4, "q3": 5}


def _print_gen_rank(pg: tuple):
    if pg[0] == "jet":
        _, frame, base, order = pg
        rank = _X_PRINT_RANK[base] if frame == FRAME_X else _Y_PRINT_RANK[base]
        return (0, rank, order)
    if pg[0] == "lam":
        return (1, 0, 0)
    if pg[0] == "a":
        return (2, 0, 0)
    return (3, pg[1], 0)


def _pm_mul(m1: dict, m2: dict) -> dict:
    out = dict(m1)
    for g, e in m2.items():
        out[g] = out.get(g, 0) + e
    return out


def _print_poly(num: Poly) -> dict[tuple, int]:
    """Expand the internal basis into printable generators (m-jets expand to
    u-jet differences) and return ``{print-monomial: int coefficient}``."""
    out: dict[tuple, int] = {}
    for k, c in num.items():
        partial = [({}, c)]
        for slot, e in key_iter(k):
            desc = _GEN_LIST[slot]
            kind = desc[0]
            if kind == "m":
                i, s = desc[1], desc[2]
                lo = ("jet", FRAME_X, f"u{i}", s)
                hi = ("jet", FRAME_X, f"u{i}", s + 2)
                factor = [({lo: 1}, 1), ({hi: 1}, -1)]
                for _ in range(e):
                    partial = [
                        (_pm_mul(m, fm), cc * fc)
                        for (m, cc) in partial
                        for (fm, fc) in factor
                    ]
            else:
                if kind == "u":
                    pg = ("jet", FRAME_X, f"u{desc[1]}", desc[2])
                elif kind in ("Q", "q"):
                    pg = ("jet", FRAME_Y, f"{kind}{desc[1]}", desc[2])
                elif kind == "lam":
                    pg = ("lam",)
                elif kind == "a":
                    pg = ("a",)
                else:
                    pg = ("atom", desc[1])
                partial = [(_pm_mul(m, {pg: e}), cc) for (m, cc) in partial]
        for mono, cc in partial:
            key = tuple(sorted(mono.items(), key=lambda it: _print_gen_rank(it[0])))
            s = out.get(key, 0) + cc
            if s:
                out[key] = s
            else:
                del out[key]
    return out


def _print_gen_name(pg: tuple) -> str:
    if pg[0] == "jet":
        _, frame, base, order = pg
        if order == 0:
            return base
        letter = "x" if frame == FRAME_X else "y"
        return base + "_" + letter * order
    if pg[0] == "lam":
        return "lam"
    if pg[0] == "a":
        return "a"
    rec = _ATOMS[pg[1]]
    return f"Dinv({canonical_str(rec.arg)})"


def _sort_key_mono(mono: tuple):
    deg = sum(e for _, e in mono)
    return (-deg, tuple((_print_gen_rank(g), -e) for g, e in mono))


def _terms_str(terms: dict[tuple, Fraction]) -> str:
    parts = []
    for mono in sorted(terms, key=_sort_key_mono):
        c = terms[mono]
        body = "*".join(
            _print_gen_name(g) + (f"^{e}" if e != 1 else "") for g, e in mono
        )
        mag = abs(c)
        if body and mag == 1:
            piece = body
        elif body:
            piece = f"{mag}*{body}"
        else:
            piece = str(mag)
        if not parts:
            parts.append(piece if c > 0 else "-" + piece)
        else:
            parts.append((" + " if c > 0 else " - ") + piece)
    return "".join(parts)


def _factor_str(fid: int) -> str:
    fac = _FACTORS[fid]
    terms = {m: Fraction(c) for m, c in _print_poly(fac.poly).items()}
    body = _terms_str(terms)
    if len(terms) == 1 and "*" not in body and "^" not in body and not body.startswith("-"):
        return body
    return f"({body})"


def canonical_str(e: Expr) -> str:
    """Deterministic, order-stable canonical text form (parseable back)."""
    if e.coef == 0:
        return "0"
    terms = {m: e.coef * c for m, c in _print_poly(e.num).items()}
    num_str = _terms_str(terms)
    if not e.den:
        return num_str
    pieces = []
    for fid in sorted(e.den, key=_factor_str):
        exp = e.den[fid]
        s = _factor_str(fid)
        pieces.append(s + (f"^{exp}" if exp != 1 else ""))
    return f"({num_str})/({'*'.join(pieces)})"


# Preallocate the frequent generator slots in a fixed, compact order so the
# hot x-frame computations use short packed keys.
for _i in (1, 2, 3):
    for _s in (0, 1):
        _gen_slot(("u", _i, _s))
for _i in (1, 2, 3):
    for _s in range(5):
        _gen_slot(("m", _i, _s))
_gen_slot(("lam",))
_a_slot()
