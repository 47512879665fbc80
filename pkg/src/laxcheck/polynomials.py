"""Sparse multivariate integer polynomials with packed-integer monomials.

A monomial is a single Python integer: generator ``slot`` *i* owns the bit
field ``[i*BITS, (i+1)*BITS)`` holding its exponent.  Multiplying monomials
is integer addition, and the induced integer order on keys is an admissible
monomial order (compatible with multiplication and well founded), which is
all the division and PRS routines below need.  A polynomial is a plain
``dict`` mapping keys to nonzero ``int`` coefficients; the empty dict is the
zero polynomial.  Rational scaling lives one layer up (see ``exprcore``),
keeping every loop here in exact integer arithmetic.
"""

from __future__ import annotations

from math import gcd

from .errors import ExponentOverflowError

BITS = 16
MASK = (1 << BITS) - 1
#: largest exponent a single field may hold after one product of two
#: in-range monomials
MAX_EXP = MASK
#: largest exponent accepted when packing a fresh monomial
MAX_PACK_EXP = MASK >> 1

Poly = dict


def slot_key(slot: int, exp: int = 1) -> int:
    """Packed key of the monomial ``gen(slot)**exp``."""
    if not 0 <= exp <= MAX_PACK_EXP:
        raise ExponentOverflowError(f"exponent {exp} outside packed range")
    return exp << (slot * BITS)


def key_exp(key: int, slot: int) -> int:
    return (key >> (slot * BITS)) & MASK


def key_iter(key: int):
    """Yield ``(slot, exponent)`` for every generator present in ``key``."""
    slot = 0
    while key:
        e = key & MASK
        if e:
            yield slot, e
        key >>= BITS
        slot += 1


def key_divides(d: int, key: int) -> bool:
    """True when monomial ``d`` divides monomial ``key`` field-wise."""
    while d:
        if (d & MASK) > (key & MASK):
            return False
        d >>= BITS
        key >>= BITS
    return True


def key_gcd(a: int, b: int) -> int:
    out = 0
    shift = 0
    while a and b:
        ea = a & MASK
        eb = b & MASK
        if ea and eb:
            out |= min(ea, eb) << shift
        a >>= BITS
        b >>= BITS
        shift += BITS
    return out


def key_degree(key: int) -> int:
    deg = 0
    while key:
        deg += key & MASK
        key >>= BITS
    return deg


def pzero() -> Poly:
    return {}


def pconst(c: int) -> Poly:
    return {0: c} if c else {}


def pdegree(p: Poly) -> int:
    return max((key_degree(k) for k in p), default=0)


def pmax_field(p: Poly) -> int:
    best = 0
    for k in p:
        for _, e in key_iter(k):
            if e > best:
                best = e
    return best


def padd(a: Poly, b: Poly) -> Poly:
    if not a:
        return dict(b)
    if not b:
        return dict(a)
    out = dict(a)
    for k, c in b.items():
        s = out.get(k, 0) + c
        if s:
            out[k] = s
        else:
            out.pop(k, None)
    return out


def pneg(a: Poly) -> Poly:
    return {k: -c for k, c in a.items()}


def pscale(a: Poly, c: int) -> Poly:
    if c == 0:
        return {}
    if c == 1:
        return dict(a)
    return {k: c * v for k, v in a.items()}


def pshift(a: Poly, key: int) -> Poly:
    """Multiply by a single monomial."""
    if key == 0:
        return dict(a)
    return {k + key: c for k, c in a.items()}


def pmul(a: Poly, b: Poly) -> Poly:
    if not a or not b:
        return {}
    if len(a) > len(b):
        a, b = b, a
    if len(a) == 1:
        ((k, c),) = a.items()
        if c == 1:
            return pshift(b, k)
        return {k + kb: c * cb for kb, cb in b.items()}
    out: Poly = {}
    get = out.get
    for ka, ca in a.items():
        for kb, cb in b.items():
            k = ka + kb
            s = get(k, 0) + ca * cb
            if s:
                out[k] = s
            else:
                del out[k]
    return out


def pcontent(a: Poly):
    """Split off the integer content; the remainder has its max-key
    coefficient positive and coefficient gcd 1.  Returns ``(content, primitive)``.
    """
    if not a:
        return 0, {}
    g = 0
    for c in a.values():
        g = gcd(g, c)
        if g == 1:
            break
    if a[max(a)] < 0:
        g = -g
    if g == 1:
        return 1, dict(a)
    return g, {k: c // g for k, c in a.items()}


def ppartial(a: Poly, slot: int) -> Poly:
    off = slot * BITS
    unit = 1 << off
    out: Poly = {}
    for k, c in a.items():
        e = (k >> off) & MASK
        if e:
            nk = k - unit
            s = out.get(nk, 0) + c * e
            if s:
                out[nk] = s
            else:
                out.pop(nk, None)
    return out


def pexact_div(a: Poly, b: Poly):
    """Quotient of ``a`` by ``b`` when the division is exact, else ``None``.

    ``b`` must be nonzero.  Long division against the leading term of ``b``
    under the packed-key order; correct for primitive integer divisors.
    """
    if not b:
        raise ZeroDivisionError("polynomial division by zero")
    if not a:
        return {}
    lbk = max(b)
    lbc = b[lbk]
    rem = dict(a)
    quot: Poly = {}
    while rem:
        lak = max(rem)
        if not key_divides(lbk, lak):
            return None
        lac = rem[lak]
        qc, r = divmod(lac, lbc)
        if r:
            return None
        qk = lak - lbk
        quot[qk] = qc
        for k, c in b.items():
            nk = k + qk
            s = rem.get(nk, 0) - qc * c
            if s:
                rem[nk] = s
            else:
                del rem[nk]
    return quot


def _top_slot(p: Poly) -> int:
    top = -1
    for k in p:
        slot = 0
        while k:
            if (k & MASK) and slot > top:
                top = slot
            k >>= BITS
            slot += 1
    return top


def _to_univar(p: Poly, slot: int):
    off = slot * BITS
    out: dict[int, Poly] = {}
    for k, c in p.items():
        e = (k >> off) & MASK
        out.setdefault(e, {})[k - (e << off)] = c
    return out


def _from_univar(u, slot: int) -> Poly:
    off = slot * BITS
    out: Poly = {}
    for e, coeff in u.items():
        for k, c in coeff.items():
            out[k + (e << off)] = c
    return out


def _umul(u, v):
    out: dict[int, Poly] = {}
    for da, ca in u.items():
        for db, cb in v.items():
            d = da + db
            out[d] = padd(out.get(d, {}), pmul(ca, cb))
    return {d: c for d, c in out.items() if c}


def _uprem(a, b):
    """Pseudo-remainder of univariate-view polynomials (coefficients are polys)."""
    da = max(a)
    db = max(b)
    lb = b[db]
    rem = dict(a)
    while rem:
        da = max(rem)
        if da < db:
            break
        la = rem[da]
        rem = {d: pmul(c, lb) for d, c in rem.items()}
        shift = da - db
        for d, c in b.items():
            nd = d + shift
            r = padd(rem.get(nd, {}), pneg(pmul(c, la)))
            if r:
                rem[nd] = r
            else:
                rem.pop(nd, None)
        rem.pop(da, None)
    return rem


def _poly_list_gcd(polys):
    g: Poly = {}
    for p in polys:
        g = pgcd(g, p)
        if len(g) == 1 and 0 in g and abs(g[0]) == 1:
            break
    return g


def pgcd(a: Poly, b: Poly) -> Poly:
    """Gcd of integer polynomials, primitive PRS with monomial fast paths.

    The result is primitive with a positive leading (packed-order)
    coefficient, times the gcd of the integer contents.
    """
    if not a and not b:
        return {}
    if not a:
        cb, pb = pcontent(b)
        return pscale(pb, abs(cb))
    if not b:
        ca, pa = pcontent(a)
        return pscale(pa, abs(ca))
    ca, pa = pcontent(a)
    cb, pb = pcontent(b)
    c = gcd(ca, cb)
    # monomial factor common to every term of both polynomials
    mg = 0
    first = True
    for p in (pa, pb):
        for k in p:
            mg = k if first else key_gcd(mg, k)
            first = False
            if mg == 0:
                break
    if len(pa) == 1 or len(pb) == 1:
        return pscale({mg: 1}, c)
    if mg:
        pa = {k - mg: v for k, v in pa.items()}
        pb = {k - mg: v for k, v in pb.items()}
    slot = max(_top_slot(pa), _top_slot(pb))
    if slot < 0:
        return pscale({mg: 1}, c)
    ua = _to_univar(pa, slot)
    ub = _to_univar(pb, slot)
    if max(ua) < max(ub):
        ua, ub = ub, ua
    cont_a = _poly_list_gcd(list(ua.values()))
    cont_b = _poly_list_gcd(list(ub.values()))
    cont = pgcd(cont_a, cont_b)
    ua = {d: pexact_div(p, cont_a) for d, p in ua.items()}
    ub = {d: pexact_div(p, cont_b) for d, p in ub.items()}
    while True:
        rem = _uprem(ua, ub)
        if not rem:
            break
        if max(rem) == 0:
            ub = {0: pconst(1)}
            break
        rcont = _poly_list_gcd(list(rem.values()))
        rem = {d: pexact_div(p, rcont) for d, p in rem.items()}
        ua, ub = ub, rem
    g = _from_univar(_umul({0: cont}, ub), slot)
    _, g = pcontent(g)
    g = pshift(g, mg)
    return pscale(g, c)
