"""Pure numpy implementation of the hot kernels (fallback backend).

Must stay output-identical to ``_ckernels.pyx``; tests diff the two.
"""
from __future__ import annotations

import numpy as np

RESIDENT = 1
VALID = 1
DPT_PINNED = 2

OK = 0
INSUFFICIENT = 1


def _rows(directory, capacity, eps):
    return directory[: -(-capacity // eps)]


def _load(pool, rows, capacity):
    return pool[rows].reshape(-1)[:capacity].copy()


def _store(pool, rows, capacity, values):
    if capacity == 0:
        return
    flat = pool[rows].reshape(-1)
    flat[:capacity] = values
    pool[rows] = flat.reshape(len(rows), -1)


def replace_step(dpt_dir, dpt_part, dpt_ts, dpt_flags, capacity,
                 meta_dir, meta_tok, meta_flags, eps, page_size,
                 requested, step, n_buckets, demote, exact):
    """One bucketed-LRU replacement for one head.

    Returns ``(status, hits, misses, demand, hit_slots, evicted_slots,
    victims, admit_slots, evictable)``. With ``status == INSUFFICIENT`` only
    timestamps have been touched.
    """
    req = np.asarray(requested, dtype=np.int64)
    mseg, moff = meta_dir[req // eps], req % eps
    mflags = meta_flags[mseg, moff]
    pages = -(-meta_tok[mseg, moff].astype(np.int64) // page_size)
    is_hit = (mflags & RESIDENT) != 0
    hits, misses = req[is_hit], req[~is_hit]
    miss_pages = pages[~is_hit]
    demand = int(miss_pages.sum())
    top = min(step, n_buckets - 1)

    rows = _rows(dpt_dir, capacity, eps)
    part = _load(dpt_part, rows, capacity).astype(np.int64)
    ts = _load(dpt_ts, rows, capacity).astype(np.int64)
    flags = _load(dpt_flags, rows, capacity)
    valid = (flags & VALID) != 0
    pinned = (flags & DPT_PINNED) != 0
    marked = valid & np.isin(part, req)
    ts[marked] = top
    others = valid & ~marked & ~pinned
    if demote:
        ts[others & (ts > 0)] -= 1
    hit_slots = np.nonzero(marked)[0]
    n_free = capacity - int(valid.sum())
    evictable = int(others.sum())
    need = demand - n_free
    empty = np.empty(0, dtype=np.int64)

    if need > evictable:
        _store(dpt_ts, rows, capacity, ts)
        return (INSUFFICIENT, hits, misses, demand, hit_slots, empty, empty, empty, evictable)

    victims = empty
    evicted = empty
    if need > 0:
        cum = np.cumsum(np.bincount(ts[others], minlength=n_buckets))
        x = int(np.searchsorted(cum, need))
        if exact:
            chosen = np.zeros(capacity, dtype=bool)
            chosen[others & (ts < x)] = True
            remaining = need - (int(cum[x - 1]) if x > 0 else 0)
            slots_x = np.nonzero(others & (ts == x))[0]
            uniq, first = np.unique(part[slots_x], return_index=True)
            order = uniq[np.argsort(first, kind="stable")]
            opages = -(-meta_tok[meta_dir[order // eps], order % eps].astype(np.int64) // page_size)
            k = int(np.searchsorted(np.cumsum(opages), remaining)) + 1
            cand = np.concatenate((part[chosen], order[:k]))
        else:
            cand = part[others & (ts <= x)]
        evict_mask = others & np.isin(part, cand)
        evicted = np.nonzero(evict_mask)[0]
        vic, first = np.unique(part[evicted], return_index=True)
        victims = vic[np.argsort(first, kind="stable")]
        part[evict_mask] = -1
        ts[evict_mask] = 0
        flags[evict_mask] = 0

    admit = np.nonzero((flags & VALID) == 0)[0][:demand]
    part[admit] = np.repeat(misses, miss_pages)
    ts[admit] = top
    flags[admit] = VALID

    _store(dpt_part, rows, capacity, part)
    _store(dpt_ts, rows, capacity, ts)
    _store(dpt_flags, rows, capacity, flags)
    if victims.size:
        vs, vo = meta_dir[victims // eps], victims % eps
        meta_flags[vs, vo] = meta_flags[vs, vo] & ~np.uint8(RESIDENT)
    if misses.size:
        ms, mo = meta_dir[misses // eps], misses % eps
        meta_flags[ms, mo] = meta_flags[ms, mo] | np.uint8(RESIDENT)
    return (OK, hits, misses, demand, hit_slots, evicted, victims, admit.astype(np.int64), evictable)
