"""Two-dimensional multi-index algebra.

A multi-index is a pair ``(m1, m2)`` of nonnegative integers encoding the
monomial ``p1**m1 * p2**m2``. The canonical representative of the pair
``{m, m_swapped}`` is the one with ``m1 >= m2``; coefficients at the swapped
index are complex conjugates of those at the canonical one, so only the
canonical half needs to be computed.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

MultiIndex = tuple[int, int]

E1: MultiIndex = (1, 0)
E2: MultiIndex = (0, 1)


def order(m: MultiIndex) -> int:
    return m[0] + m[1]


def symmetric(m: MultiIndex) -> MultiIndex:
    return (m[1], m[0])


def is_canonical(m: MultiIndex) -> bool:
    return m[0] >= m[1]


def is_self_symmetric(m: MultiIndex) -> bool:
    return m[0] == m[1]


@dataclass(frozen=True)
class OrderSet:
    """Canonical representatives of all multi-indices at one order."""

    order: int
    indices: tuple[MultiIndex, ...]


def all_indices(order_: int) -> list[MultiIndex]:
    """All order_+1 multi-indices at the given order, m1 descending."""
    if order_ < 1:
        raise ValueError(f"order must be >= 1, got {order_}")
    return [(order_ - i, i) for i in range(order_ + 1)]


def canonical_indices(order_: int) -> list[MultiIndex]:
    """Canonical (m1 >= m2) multi-indices at the given order, m1 descending."""
    return [m for m in all_indices(order_) if m[0] >= m[1]]


def enumerate_order(order_: int) -> OrderSet:
    return OrderSet(order_, tuple(canonical_indices(order_)))


def monomial(p, m: MultiIndex) -> complex:
    """p1**m1 * p2**m2 for a 2-vector p."""
    return p[0] ** m[0] * p[1] ** m[1]


def resonant_slot(m: MultiIndex) -> int | None:
    """Near-resonance classification for order >= 2.

    Returns 0 when the first reduced-dynamics coefficient is active
    (m1 - m2 = +1), 1 when the second is (m1 - m2 = -1), None otherwise.
    Even orders are never resonant.
    """
    if order(m) < 2:
        raise ValueError("leading-order indices are classified separately")
    d = m[0] - m[1]
    if d == 1:
        return 0
    if d == -1:
        return 1
    return None


def r1_active_index(order_: int) -> MultiIndex:
    """The unique canonical index with an active first reduced coefficient."""
    if order_ < 3 or order_ % 2 == 0:
        raise ValueError(f"no active reduced coefficient at order {order_}")
    return ((order_ + 1) // 2, (order_ - 1) // 2)


@lru_cache(maxsize=None)
def pair_decomps(m: MultiIndex) -> tuple[tuple[MultiIndex, MultiIndex], ...]:
    """Ordered decompositions m = u + v with both parts of order >= 1.

    The returned set is closed under swapping u and v.
    """
    out = []
    for u1 in range(m[0] + 1):
        for u2 in range(m[1] + 1):
            u = (u1, u2)
            v = (m[0] - u1, m[1] - u2)
            if order(u) >= 1 and order(v) >= 1:
                out.append((u, v))
    return tuple(out)


@lru_cache(maxsize=None)
def triple_decomps(
    m: MultiIndex,
) -> tuple[tuple[MultiIndex, MultiIndex, MultiIndex], ...]:
    """Ordered decompositions m = u + v + t with all parts of order >= 1.

    Closed under permutation of the three parts.
    """
    out = []
    for u1 in range(m[0] + 1):
        for u2 in range(m[1] + 1):
            u = (u1, u2)
            if order(u) < 1:
                continue
            rest = (m[0] - u1, m[1] - u2)
            for v1 in range(rest[0] + 1):
                for v2 in range(rest[1] + 1):
                    v = (v1, v2)
                    t = (rest[0] - v1, rest[1] - v2)
                    if order(v) >= 1 and order(t) >= 1:
                        out.append((u, v, t))
    return tuple(out)
