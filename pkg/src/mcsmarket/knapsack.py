"""Exact 0-1 knapsack selection for the task side of the matching rounds.

Prices live on a 0.1-currency grid throughout the mechanism (opening asks are
drawn on the grid, decrements are grid multiples, and the cost floor is
rounded up to the grid), so integerizing at that resolution is lossless and
the DP solution coincides with brute-force subset search at every size.

Ties are broken deterministically: maximum total gain, then fewer workers,
then lower total price, then the lexicographically smallest id set.
"""

from __future__ import annotations

from dataclasses import dataclass

PRICE_RESOLUTION = 0.1


@dataclass(frozen=True)
class Candidate:
    worker_id: int
    price: float
    gain: float


def _cells(amount: float) -> int:
    # round() guards against float noise like 7.499999999 for nominal 7.5
    return int(round(amount / PRICE_RESOLUTION))


def selection_key(candidates: list[Candidate], chosen: tuple[int, ...]):
    """Sort key implementing the tie-break order (higher is better)."""
    by_id = {c.worker_id: c for c in candidates}
    gain = sum(by_id[w].gain for w in chosen)
    price = sum(by_id[w].price for w in chosen)
    ids = tuple(sorted(chosen))
    return (gain, -len(chosen), -price, tuple(-i for i in ids))


def select_workers_brute_force(
    candidates: list[Candidate], budget: float
) -> tuple[int, ...]:
    """Reference oracle: enumerate all subsets (use only for small candidate sets)."""
    n = len(candidates)
    best: tuple[int, ...] = ()
    best_key = selection_key(candidates, best)
    for mask in range(1, 1 << n):
        subset = tuple(candidates[i].worker_id for i in range(n) if mask >> i & 1)
        price = sum(candidates[i].price for i in range(n) if mask >> i & 1)
        if price > budget + 1e-9:
            continue
        key = selection_key(candidates, subset)
        if key > best_key:
            best, best_key = subset, key
    return tuple(sorted(best))


def select_workers_knapsack(
    candidates: list[Candidate], budget: float
) -> tuple[int, ...]:
    """Gain-maximizing affordable subset via DP on integerized prices.

    Negative- or zero-gain candidates are never selected (the empty set
    dominates them under the tie-break order).  Reconstruction walks items in
    ascending id order and includes an item exactly when doing so still
    reaches the optimal (gain, count, price) tuple, which yields the
    lexicographically smallest optimal id set.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    for c in candidates:
        if c.price < 0:
            raise ValueError(f"negative price for worker {c.worker_id}")

    items = sorted((c for c in candidates if c.gain > 0), key=lambda c: c.worker_id)
    if not items:
        return ()
    cap = _cells(budget)
    weights = [_cells(c.price) for c in items]
    n = len(items)

    # suffix[i][w] = best (gain, -count, -price_cells) using items i.. with capacity w
    empty = (0.0, 0, 0)
    suffix = [[empty] * (cap + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        w_i = weights[i]
        g_i = items[i].gain
        row = suffix[i]
        nxt = suffix[i + 1]
        for w in range(cap + 1):
            best = nxt[w]
            if w_i <= w:
                cand_next = nxt[w - w_i]
                cand = (cand_next[0] + g_i, cand_next[1] - 1, cand_next[2] - w_i)
                if cand > best:
                    best = cand
            row[w] = best

    chosen: list[int] = []
    w = cap
    for i in range(n):
        if weights[i] <= w:
            nxt = suffix[i + 1][w - weights[i]]
            # identical float expression to the DP fill, so equality is exact
            cand = (nxt[0] + items[i].gain, nxt[1] - 1, nxt[2] - weights[i])
            if cand == suffix[i][w]:
                chosen.append(items[i].worker_id)
                w -= weights[i]
    return tuple(chosen)
