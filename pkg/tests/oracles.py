"""Independent brute-force reference implementations for retrieval tests.

Everything here works on unpacked per-bit lists with plain Python loops, on
purpose: these are the oracles the packed-popcount engine is checked against,
so they must not share any code with it.
"""

from __future__ import annotations


def oracle_hamming(bits_a, bits_b) -> int:
    assert len(bits_a) == len(bits_b)
    count = 0
    for x, y in zip(bits_a, bits_b):
        if int(x) != int(y):
            count += 1
    return count


def oracle_rank(items, query_bits, exclude_id=None):
    """items: iterable of (id, bits, label); returns [(id, dist, label)]
    sorted by distance then id."""
    rows = []
    for item_id, bits, label in items:
        if exclude_id is not None and item_id == exclude_id:
            continue
        rows.append((oracle_hamming(bits, query_bits), item_id, label))
    rows.sort()
    return [(item_id, dist, label) for dist, item_id, label in rows]


def oracle_average_precision(ranked_labels, query_label, cutoff=None) -> float:
    total_relevant = sum(1 for lbl in ranked_labels if lbl == query_label)
    considered = ranked_labels if cutoff is None else ranked_labels[:cutoff]
    denom = total_relevant if cutoff is None else min(total_relevant, cutoff)
    if denom == 0:
        return 0.0
    hits = 0
    precision_sum = 0.0
    for rank, lbl in enumerate(considered, start=1):
        if lbl == query_label:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / denom


def oracle_map(items, queries, exclude_self=True, cutoff=None) -> float:
    """queries: iterable of (id, bits, label)."""
    total = 0.0
    count = 0
    for query_id, bits, label in queries:
        exclude = query_id if exclude_self else None
        ranked = oracle_rank(items, bits, exclude_id=exclude)
        total += oracle_average_precision([lbl for _, _, lbl in ranked],
                                          label, cutoff)
        count += 1
    return total / count


def oracle_precision_at_k(items, queries, k, exclude_self=True) -> float:
    total = 0.0
    count = 0
    for query_id, bits, label in queries:
        exclude = query_id if exclude_self else None
        ranked = oracle_rank(items, bits, exclude_id=exclude)
        hits = sum(1 for _, _, lbl in ranked[:k] if lbl == label)
        total += hits / k
        count += 1
    return total / count
