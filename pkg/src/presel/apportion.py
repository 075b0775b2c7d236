"""Exact integer apportionment helpers.

Budget integerization is done in rational arithmetic (`fractions.Fraction`)
rather than floats: floor/remainder decisions then depend only on the input
values, never on the order float rounding happens to take, e.g.
``0.5 * 60 / 100 * 30`` floors to 8 in float64 but is exactly 9.
"""

from fractions import Fraction
from math import floor
from typing import Sequence

__all__ = ["round_half_up", "exact_product", "hamilton", "fill_by_remainder"]


def round_half_up(x) -> int:
    """Round to nearest integer, halves away from zero toward +inf."""
    return int(floor(Fraction(x) + Fraction(1, 2)))


def exact_product(*factors) -> Fraction:
    """Left-to-right product as an exact rational."""
    out = Fraction(1)
    for f in factors:
        out *= Fraction(f)
    return out


def hamilton(shares: Sequence[Fraction], total: int) -> list[int]:
    """Largest-remainder integerization of `shares` summing to `total`.

    Leftover units go to the largest fractional remainders; remainder ties
    break toward the lower position (callers pass shares in their canonical
    tie-break order).
    """
    base = [int(floor(s)) for s in shares]
    fracs = [s - b for s, b in zip(shares, base)]
    leftover = total - sum(base)
    if leftover < 0:
        raise ValueError("shares exceed total; hamilton() expects sum(shares) <= total")
    order = sorted(range(len(shares)), key=lambda i: (-fracs[i], i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def fill_by_remainder(
    alloc: list[int],
    fracs: Sequence[Fraction],
    caps: Sequence[int],
    units: int,
    blocked: frozenset[int] = frozenset(),
) -> list[int]:
    """Distribute `units` extra units onto `alloc`, one at a time.

    Priority is (largest fractional remainder, lowest position); entries at
    capacity or in `blocked` are skipped. Cycles through the priority list
    until the units run out or everything eligible is full.
    """
    alloc = list(alloc)
    order = [i for i in sorted(range(len(alloc)), key=lambda i: (-fracs[i], i)) if i not in blocked]
    while units > 0:
        progressed = False
        for i in order:
            if units == 0:
                break
            if alloc[i] < caps[i]:
                alloc[i] += 1
                units -= 1
                progressed = True
        if not progressed:
            break
    return alloc
