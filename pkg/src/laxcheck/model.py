"""Concrete model objects: both frames, both Lax pairs, all transformations.

The x-frame carries the three-component peakon-family system for
``u1, u2, u3`` written through ``m_i = u_i - u_{i,xx}``, ``f = u3 - u1_x``,
``g = u1 - u3_x``, its 3x3 spectral matrix ``U`` (linear in ``lam``) and
auxiliary matrix ``V``, and the conserved density ``a = (m2*m3)**(1/2)``.
The y-frame carries the transformed spectral pair, the quotient map to the
scalar third-order operator, the Hamiltonian pair ``J1, J2``, the
factorization matrix ``F``, the cancellation matrix ``K`` and the
generating functions ``A, B, C`` of the first negative flow.

Models are built once per mutation set and cached; every object is
immutable and shared read-only.  ``MUTATIONS`` registers the single
coefficient perturbations used by the non-vacuity harness.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .calculus import DerivationContext, apply_dinv, total_derivative
from .errors import EngineError, NonlocalObstructionError, UnknownSymbolError
from .exprcore import (
    FRAME_X,
    FRAME_Y,
    Expr,
    ZERO,
    _GEN_LIST,
    _apply_gen_images,
    _gen_expr,
    atom_record,
    is_zero,
    make,
)
from .operators import DiffOp, OpMatrix, op_adjoint, op_apply, op_compose

HALF = Fraction(1, 2)

#: registered single-coefficient perturbations for the non-vacuity harness
MUTATIONS = {
    "m1-flow-3to2": "coefficient 3 -> 2 in the m1 evolution term 3*u2*f",
    "V-lam2-sign": "sign flip of the lam**-2 entry of the auxiliary matrix V",
    "miura-u-sign": "sign flip of the quotient-map image u = -(Q2+Q3)",
    "liouville-Q2-half-sign": "sign flip of the (m2*m3)_x term in the transformed Q2",
    "K-chi1-3w-to-2w": "coefficient 3 -> 2 in the 3*w/2 term of K's (3,1) entry",
    "q2-sign": "sign flip of the transformed coefficient q2 = a*g/m3",
    "J1-23-usign": "sign flip of the u*D term in J1's (2,3) entry",
    "S1-Q2-sign": "sign flip of Q2 inside the first source term S1",
}


def _check_mutations(mutations) -> frozenset:
    muts = frozenset(mutations or ())
    unknown = muts - set(MUTATIONS)
    if unknown:
        raise UnknownSymbolError(f"unknown mutations: {sorted(unknown)}")
    return muts


@dataclass(frozen=True)
class ModelX:
    """x-frame objects: evolution rules, Lax matrices, conserved density."""

    flows: dict
    U: list
    V: list
    density: Expr
    flux: Expr
    ctx: DerivationContext


@dataclass(frozen=True)
class ModelY:
    """y-frame objects: transformed Lax pair, sources, operators, flow data."""

    U: list
    V: list
    S: dict
    tau_flow: dict
    miura: dict
    J1: OpMatrix
    J2: OpMatrix
    F: OpMatrix
    K: OpMatrix
    A: Expr
    B: Expr
    C: Expr
    ctx: DerivationContext


_X_CACHE: dict[frozenset, ModelX] = {}
_Y_CACHE: dict[frozenset, ModelY] = {}
_PB_CACHE: dict[frozenset, "PullbackMap"] = {}
_GAUGE_CACHE: dict[frozenset, dict] = {}


def x_model(mutations=()) -> ModelX:
    muts = _check_mutations(mutations)
    cached = _X_CACHE.get(muts)
    if cached is not None:
        return cached
    u2, u3 = make("u2"), make("u3")
    u2x = make("u2", 1)
    f, g = make("f"), make("g")
    m1, m2, m3 = make("m1"), make("m2"), make("m3")
    m1x, m2x, m3x = make("m1", 1), make("m2", 1), make("m3", 1)
    lam = make("lam")
    a = make("a")

    c_m1 = 2 if "m1-flow-3to2" in muts else 3
    flows = {
        "m1": -u2 * g * m1x + m3 * (u2x * f - u2 * g) + m1 * (c_m1 * u2 * f - m3 * u2),
        "m2": -u2 * g * m2x - m2 * (3 * u2x * g + m3 * u2),
        "m3": -u2 * g * m3x + m3 * (2 * u2 * f + u2x * g - m3 * u2),
    }

    U = [
        [ZERO, ZERO, make(1)],
        [lam * m1, ZERO, lam * m3],
        [make(1), lam * m2, ZERO],
    ]
    lam2_sign = 1 if "V-lam2-sign" in muts else -1
    V = [
        [-u2 * f, u2 / lam, -u2 * g],
        [
            f / lam - lam * m1 * u2 * g,
            u2 * f + u2x * g + lam2_sign * lam ** -2,
            g / lam - lam * m3 * u2 * g,
        ],
        [-u2x * f, u2x / lam - lam * m2 * u2 * g, -u2x * g],
    ]

    model = ModelX(
        flows=flows,
        U=U,
        V=V,
        density=a,
        flux=a * u2 * g,
        ctx=DerivationContext(FRAME_X, flows),
    )
    return _X_CACHE.setdefault(muts, model)


def y_model(mutations=()) -> ModelY:
    muts = _check_mutations(mutations)
    cached = _Y_CACHE.get(muts)
    if cached is not None:
        return cached
    Q1, Q2, Q3 = make("Q1"), make("Q2"), make("Q3")
    Q3y = make("Q3", 1)
    q1, q2, q3 = make("q1"), make("q2"), make("q3")
    q3y = make("q3", 1)
    lam = make("lam")
    ctx = DerivationContext(FRAME_Y)
    d = DiffOp.derivative
    mul = DiffOp.multiplier

    U = [
        [ZERO, make(1), ZERO],
        [Q1, Q2, lam],
        [ZERO, lam, Q3],
    ]
    V = [
        [ZERO, ZERO, q3 / lam],
        [ZERO, q3, (q3y + Q3 * q3) / lam],
        [q1 / lam, q2 / lam, -(lam ** -2) + q3],
    ]

    # source terms of the transformed system
    s1_mid = Q3 + Q2 if "S1-Q2-sign" in muts else Q3 - Q2
    inner = d() + mul(Q3)
    outer = d() + mul(s1_mid)
    S1 = op_apply(op_compose(outer, inner, ctx), q3, ctx) - Q1 * q3
    S2 = op_apply(-d() + mul(Q3), q1, ctx) - Q1 * q2
    S3 = op_apply(-d() + mul(Q3 - Q2), q2, ctx) - q1

    tau_flow = {
        "Q1": Q1 * q3 - q1,
        "Q2": 2 * q3y + Q3 * q3 - q2,
        "Q3": -Q3 * q3 + q2,
    }

    # quotient map from the Q-variables to the scalar-operator coefficients
    u_sign = 1 if "miura-u-sign" in muts else -1
    uE = u_sign * (Q2 + Q3)
    vE = Q2 * Q3 - Q1 + Q3y
    wE = Q1 * Q3 - total_derivative(Q2 * Q3, "y", ctx) - make("Q3", 2)
    miura = {"u": uE, "v": vE, "w": wE}
    uy = total_derivative(uE, "y", ctx)
    vy = total_derivative(vE, "y", ctx)
    wy = total_derivative(wE, "y", ctx)

    j1_u = -uE if "J1-23-usign" in muts else uE
    J1 = OpMatrix(
        [
            [DiffOp(), DiffOp(), DiffOp([(1, 2)])],
            [DiffOp(), DiffOp([(1, 2)]), DiffOp([(2, 1), (1, j1_u)])],
            [DiffOp([(1, 2)]), -d(2) + op_compose(d(), mul(uE), ctx), DiffOp()],
        ]
    )

    d_u = op_compose(d(), mul(uE), ctx)  # D o u
    d_v = op_compose(d(), mul(vE), ctx)
    d_w = op_compose(d(), mul(wE), ctx)
    u_d_u = op_compose(mul(uE), op_compose(d(), mul(uE), ctx), ctx)  # u o D o u
    d_u_d = op_compose(d(), DiffOp([(1, uE)]), ctx)  # D o u o D
    theta1 = (
        -d(4)
        + op_compose(d(3), mul(uE), ctx)
        + op_compose(d(), DiffOp([(2, uE)]), ctx)
        - op_compose(d(), op_compose(mul(uE), op_compose(d(), mul(uE), ctx), ctx), ctx)
        - DiffOp([(2, vE)])
        + d_u.scale(vE)
        + DiffOp([(1, 2 * wE)])
        + d_w
    )
    theta2 = (
        op_compose(d(), mul(uE * wE), ctx)
        + DiffOp([(1, uE * wE)])
        + DiffOp([(2, wE)])
        - op_compose(d(2), mul(wE), ctx)
    )
    j2_lower = {
        (0, 0): DiffOp([(1, 6)]),
        (1, 0): DiffOp([(1, 4 * uE)]),
        (1, 1): DiffOp([(3, 2)]) + 2 * u_d_u + d_v + DiffOp([(1, vE)]),
        (2, 0): DiffOp([(3, 2)]) - 2 * d_u_d + DiffOp([(1, 2 * vE)]),
        (2, 1): theta1,
        (2, 2): theta2,
    }
    rows = [[None] * 3 for _ in range(3)]
    for (i, j), op in j2_lower.items():
        rows[i][j] = op
    for i in range(3):
        for j in range(3):
            if rows[i][j] is None:
                rows[i][j] = -op_adjoint(j2_lower[(j, i)], ctx)
    J2 = OpMatrix(rows)

    F = OpMatrix(
        [
            [DiffOp(), mul(-1), mul(-1)],
            [mul(-1), mul(Q3), DiffOp([(1, 1), (0, Q2)])],
            [
                mul(Q3),
                -op_compose(d(), mul(Q3), ctx),
                mul(Q1) - op_compose(d(), mul(Q2), ctx) - d(2),
            ],
        ]
    )

    w_c = 2 if "K-chi1-3w-to-2w" in muts else 3
    d_u_dinv = op_compose(d(), DiffOp([(-1, uE)]), ctx)  # D o u o Dinv
    chi1 = DiffOp(
        [
            (2, -Q3),
            (1, -(2 * Q3y + Q2 * Q3)),
            (0, Fraction(w_c, 2) * wE),
            (-1, HALF * wy),
        ]
    )
    chi2 = (
        DiffOp([(3, 1), (1, vE)])
        - d_u_d
        - DiffOp([(0, Fraction(3, 2) * wE), (-1, HALF * wy)])
    )
    K = OpMatrix(
        [
            [
                HALF * d_u_dinv - DiffOp([(1, HALF)]),
                mul(-3),
                DiffOp([(1, Fraction(3, 2))]) - HALF * d_u_dinv,
            ],
            [
                DiffOp([(1, Q3), (0, vE), (-1, HALF * vy)]),
                mul(-2 * uE),
                DiffOp([(2, -1), (1, uE), (0, -vE), (-1, -HALF * vy)]),
            ],
            [chi1, op_compose(d(), mul(uE), ctx) - d(2) - mul(vE), chi2],
        ]
    )

    dinv13 = apply_dinv(S1 - S3, FRAME_Y)
    dinv2 = apply_dinv(S2, FRAME_Y)
    A = (
        Fraction(1, 4) * (Q2 + Q3) * dinv13
        - HALF * dinv2
        + Fraction(1, 4) * (S1 + S3)
        - Q3 * q3y
        - Q3 * Q3 * q3
    )
    B = HALF * dinv13 - Q3 * q3
    C = -q3

    model = ModelY(
        U=U,
        V=V,
        S={"S1": S1, "S2": S2, "S3": S3},
        tau_flow=tau_flow,
        miura=miura,
        J1=J1,
        J2=J2,
        F=F,
        K=K,
        A=A,
        B=B,
        C=C,
        ctx=ctx,
    )
    return _Y_CACHE.setdefault(muts, model)


def pullback_context(mutations=()) -> DerivationContext:
    """y-frame context reading D_y, D_tau as operations on x-frame values."""
    return DerivationContext(FRAME_Y, x_model(mutations).flows, pullback=True)


class PullbackMap:
    """Substitution of the transformed jets by their x-frame expressions.

    Zero-order images come from the explicit transformed-coefficient
    displays; higher jets apply ``a**-1 * D_x`` repeatedly.  Atoms pull back
    only when their pulled-back argument canonicalizes to zero (all
    integration constants vanish); otherwise a nonlocal obstruction is
    reported.
    """

    def __init__(self, mutations=()):
        muts = _check_mutations(mutations)
        self.mutations = muts
        self.ctx = pullback_context(muts)
        self._xctx = x_model(muts).ctx
        m1, m2, m3 = make("m1"), make("m2"), make("m3")
        m3x = make("m3", 1)
        a = make("a")
        f, g = make("f"), make("g")
        u2 = make("u2")
        c = m1 / m3
        cx = total_derivative(c, "x", self._xctx)
        q2_sign = -1 if "q2-sign" in muts else 1
        l_half = HALF if "liouville-Q2-half-sign" in muts else -HALF
        m2m3x = total_derivative(m2 * m3, "x", self._xctx)
        self._base = {
            ("Q", 1): (cx + 1 - c * c) / (m2 * m3),
            ("Q", 2): (2 * m1 * m2 + l_half * m2m3x) / (a * m2 * m3),
            ("Q", 3): (m1 - m3x) / (a * m3),
            ("q", 1): f / m3 - m1 * g / (m3 * m3),
            ("q", 2): q2_sign * a * g / m3,
            ("q", 3): m3 * u2,
        }
        self._jets: dict[tuple, Expr] = {}
        self._inv_a = 1 / a

    def jet(self, kind: str, i: int, order: int) -> Expr:
        key = (kind, i, order)
        hit = self._jets.get(key)
        if hit is not None:
            return hit
        if order == 0:
            img = self._base[(kind, i)]
        else:
            img = self._inv_a * total_derivative(
                self.jet(kind, i, order - 1), "x", self._xctx
            )
        self._jets[key] = img
        return img

    def pull(self, e: Expr) -> Expr:
        """Canonical x-frame image of a y-frame (or neutral) expression."""

        def img(slot):
            desc = _GEN_LIST[slot]
            kind = desc[0]
            if kind in ("Q", "q"):
                return self.jet(kind, desc[1], desc[2])
            if kind == "atom":
                frame, arg = atom_record(desc[1])
                pulled = self.pull(arg)
                if is_zero(pulled):
                    return ZERO
                raise NonlocalObstructionError(
                    "nonlocal obstruction: Dinv argument pulls back to a nonzero "
                    f"expression: {arg}"
                )
            if kind in ("u", "m", "a"):
                raise EngineError("pullback applies to y-frame expressions")
            return _gen_expr(desc)

        return _apply_gen_images(e, img)


def pullback_map(mutations=()) -> PullbackMap:
    muts = _check_mutations(mutations)
    cached = _PB_CACHE.get(muts)
    if cached is None:
        cached = _PB_CACHE.setdefault(muts, PullbackMap(muts))
    return cached


def pullback(e: Expr, mutations=()) -> Expr:
    return pullback_map(mutations).pull(e)


def gauge_q_definitions(mutations=()) -> dict:
    """The rescaling-derived transformed coefficients, written in the
    x-frame through the logarithmic derivative of the gauge factor."""
    muts = _check_mutations(mutations)
    cached = _GAUGE_CACHE.get(muts)
    if cached is not None:
        return cached
    ctx = pullback_context(muts)
    m1, m3 = make("m1"), make("m3")
    a = make("a")
    beta = -m1 / (a * m3)
    beta_y = total_derivative(beta, "y", ctx)
    ay_over_a = total_derivative(a, "y", ctx) / a
    m3y = total_derivative(m3, "y", ctx)
    defs = {
        "Q1": -beta_y - beta * beta - ay_over_a * beta + 1 / (a * a),
        "Q2": -2 * beta - ay_over_a,
        "Q3": -beta - m3y / m3,
    }
    return _GAUGE_CACHE.setdefault(muts, defs)


# --------------------------------------------------------------------------
# named-object lookup for the CLI


def object_keys() -> list[str]:
    keys = [
        "x.U",
        "x.V",
        "x.flow.m1",
        "x.flow.m2",
        "x.flow.m3",
        "x.density",
        "x.flux",
        "y.U",
        "y.V",
        "y.S1",
        "y.S2",
        "y.S3",
        "y.flow.Q1",
        "y.flow.Q2",
        "y.flow.Q3",
        "y.miura.u",
        "y.miura.v",
        "y.miura.w",
        "y.J1",
        "y.J2",
        "y.F",
        "y.K",
        "y.A",
        "y.B",
        "y.C",
        "y.Q1.liouville",
        "y.Q2.liouville",
        "y.Q3.liouville",
        "y.Q1.gauge",
        "y.Q2.gauge",
        "y.Q3.gauge",
        "y.q1",
        "y.q2",
        "y.q3",
    ]
    return keys


def get_object(key: str, mutations=()):
    """Resolve an export key to an Expr, a matrix of Exprs, or an OpMatrix."""
    muts = _check_mutations(mutations)
    parts = key.split(".")
    try:
        if parts[0] == "x":
            mx = x_model(muts)
            if parts[1] == "U":
                return mx.U
            if parts[1] == "V":
                return mx.V
            if parts[1] == "flow":
                return mx.flows[parts[2]]
            if parts[1] == "density":
                return mx.density
            if parts[1] == "flux":
                return mx.flux
        elif parts[0] == "y":
            my = y_model(muts)
            if parts[1] == "U":
                return my.U
            if parts[1] == "V":
                return my.V
            if parts[1] in ("S1", "S2", "S3"):
                return my.S[parts[1]]
            if parts[1] == "flow":
                return my.tau_flow[parts[2]]
            if parts[1] == "miura":
                return my.miura[parts[2]]
            if parts[1] in ("J1", "J2", "F", "K"):
                return getattr(my, parts[1])
            if parts[1] in ("A", "B", "C"):
                return getattr(my, parts[1])
            if parts[1] in ("Q1", "Q2", "Q3") and len(parts) == 3:
                i = int(parts[1][1])
                if parts[2] == "liouville":
                    return pullback_map(muts).jet("Q", i, 0)
                if parts[2] == "gauge":
                    return gauge_q_definitions(muts)[parts[1]]
            if parts[1] in ("q1", "q2", "q3"):
                return pullback_map(muts).jet("q", int(parts[1][1]), 0)
    except (IndexError, KeyError):
        pass
    raise UnknownSymbolError(f"unknown object key {key!r}; known keys: {object_keys()}")
