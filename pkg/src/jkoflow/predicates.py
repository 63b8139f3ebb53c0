"""Adaptive-precision sign predicates.

Each predicate first evaluates its expression in floating point together
with a forward error bound.  Only when the computed value does not clear the
bound is the expression re-evaluated exactly with rational arithmetic, so the
returned sign is always the sign of the exact expression on the given floats.
"""

from __future__ import annotations

from fractions import Fraction

_EPS = 2.0**-53
# Generous constants; the exact fallback is cheap and rarely taken.
_ORIENT_BOUND = 8.0 * _EPS
_SIDE_BOUND = 12.0 * _EPS


def _sign(x) -> int:
    return int(x > 0) - int(x < 0)


def orient2d(a, b, c) -> int:
    """Sign of det[b - a, c - a]: +1 for a left turn, -1 right, 0 collinear."""
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    cx, cy = float(c[0]), float(c[1])
    left = (bx - ax) * (cy - ay)
    right = (by - ay) * (cx - ax)
    det = left - right
    bound = _ORIENT_BOUND * (
        (abs(bx) + abs(ax)) * (abs(cy) + abs(ay)) + (abs(by) + abs(ay)) * (abs(cx) + abs(ax))
    )
    if abs(det) > bound:
        return _sign(det)
    fa = (Fraction(ax), Fraction(ay))
    fb = (Fraction(bx), Fraction(by))
    fc = (Fraction(cx), Fraction(cy))
    return _sign((fb[0] - fa[0]) * (fc[1] - fa[1]) - (fb[1] - fa[1]) * (fc[0] - fa[0]))


def bisector_side(p, q, phi_p: float, phi_q: float, v) -> int:
    """Sign of <q - p, v> - (phi_q - phi_p).

    Non-positive means ``v`` satisfies the Laguerre constraint of ``p``
    against ``q``.
    """
    px, py, qx, qy = float(p[0]), float(p[1]), float(q[0]), float(q[1])
    vx, vy = float(v[0]), float(v[1])
    d = (qx - px) * vx + (qy - py) * vy - (phi_q - phi_p)
    bound = _SIDE_BOUND * (
        (abs(qx) + abs(px)) * abs(vx) + (abs(qy) + abs(py)) * abs(vy) + abs(phi_q) + abs(phi_p)
    )
    if abs(d) > bound:
        return _sign(d)
    F = Fraction
    exact = (F(qx) - F(px)) * F(vx) + (F(qy) - F(py)) * F(vy) - (F(float(phi_q)) - F(float(phi_p)))
    return _sign(exact)


def line_side(normal, offset: float, v) -> int:
    """Sign of <normal, v> - offset, evaluated robustly."""
    nx, ny = float(normal[0]), float(normal[1])
    vx, vy = float(v[0]), float(v[1])
    d = nx * vx + ny * vy - offset
    bound = _SIDE_BOUND * (abs(nx * vx) + abs(ny * vy) + abs(offset))
    if abs(d) > bound:
        return _sign(d)
    F = Fraction
    return _sign(F(nx) * F(vx) + F(ny) * F(vy) - F(float(offset)))
