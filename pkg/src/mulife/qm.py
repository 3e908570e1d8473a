"""Exact two-level Boolean minimization (Quine-McCluskey + Petrick).

Sized for selector synthesis: tables of up to 2^8 rows, where exact
minimization is cheap. Cubes are (value, care_mask) integer pairs; a term in
the returned cover is a tuple of (variable index, required value) literals,
empty tuple meaning the constant-True term.
"""

from __future__ import annotations

from itertools import combinations

__all__ = ["minimize", "eval_term", "eval_cover", "cover_to_str"]

Term = tuple[tuple[int, int], ...]

MAX_VARS = 16


def minimize(n_vars: int, on_set) -> tuple[Term, ...]:
    """Minimal sum-of-products cover of the given ON-set (no don't-cares).

    Deterministic: prime implicants and cover selection are fully ordered, and
    among equal-size covers the lexicographically smallest is returned.
    """
    if n_vars < 0 or n_vars > MAX_VARS:
        raise ValueError(f"n_vars must be in [0, {MAX_VARS}]")
    minterms = sorted(set(int(m) for m in on_set))
    if any(m < 0 or m >= (1 << n_vars) for m in minterms):
        raise ValueError("minterm out of range")
    if not minterms:
        return ()
    if len(minterms) == 1 << n_vars:
        return ((),)

    primes = _prime_implicants(n_vars, minterms)
    chosen = _select_cover(primes, minterms)
    return tuple(_cube_to_term(v, mask, n_vars) for v, mask in chosen)


def _prime_implicants(n_vars: int, minterms: list[int]) -> list[tuple[int, int]]:
    full_mask = (1 << n_vars) - 1
    level = {(m, full_mask) for m in minterms}
    primes: set[tuple[int, int]] = set()
    while level:
        merged: set[tuple[int, int]] = set()
        used: set[tuple[int, int]] = set()
        by_mask: dict[int, list[tuple[int, int]]] = {}
        for cube in level:
            by_mask.setdefault(cube[1], []).append(cube)
        for mask, cubes in by_mask.items():
            values = {v for v, _ in cubes}
            for v, _ in cubes:
                for bit in range(n_vars):
                    probe = 1 << bit
                    if not mask & probe:
                        continue
                    if v ^ probe in values:
                        a, b = (v, mask), (v ^ probe, mask)
                        used.add(a)
                        used.add(b)
                        merged.add((min(v, v ^ probe) & ~probe, mask & ~probe))
        primes.update(level - used)
        level = merged
    return sorted(primes)


def _covers(cube: tuple[int, int], minterm: int) -> bool:
    value, mask = cube
    return (minterm & mask) == value


def _select_cover(primes: list[tuple[int, int]], minterms: list[int]) -> list[tuple[int, int]]:
    cover_of = [frozenset(i for i, p in enumerate(primes) if _covers(p, m))
                for m in minterms]
    chosen: set[int] = set()
    remaining = list(range(len(minterms)))

    # Essential primes first.
    changed = True
    while changed:
        changed = False
        for j in remaining:
            if len(cover_of[j]) == 1:
                (only,) = cover_of[j]
                if only not in chosen:
                    chosen.add(only)
                    changed = True
        if changed:
            remaining = [j for j in remaining if not (cover_of[j] & chosen)]
    remaining = [j for j in remaining if not (cover_of[j] & chosen)]
    if not remaining:
        return [primes[i] for i in sorted(chosen)]

    # Petrick: smallest completing subset, lexicographically first among ties.
    candidates = sorted({i for j in remaining for i in cover_of[j]})
    for size in range(1, len(candidates) + 1):
        for combo in combinations(candidates, size):
            picked = set(combo)
            if all(cover_of[j] & picked for j in remaining):
                chosen |= picked
                return [primes[i] for i in sorted(chosen)]
    raise RuntimeError("prime implicants failed to cover the ON-set")  # unreachable


def _cube_to_term(value: int, mask: int, n_vars: int) -> Term:
    return tuple((bit, (value >> bit) & 1)
                 for bit in range(n_vars) if mask & (1 << bit))


def eval_term(term: Term, pattern: int) -> bool:
    return all(((pattern >> var) & 1) == val for var, val in term)


def eval_cover(cover, pattern: int) -> bool:
    return any(eval_term(t, pattern) for t in cover)


def cover_to_str(cover) -> str:
    """Human-readable sum of products, e.g. "x0·!x3 + x2"."""
    if not cover:
        return "0"
    parts = []
    for term in cover:
        if not term:
            parts.append("1")
        else:
            parts.append("·".join(f"x{v}" if val else f"!x{v}" for v, val in term))
    return " + ".join(parts)
