# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Output-identical to ``_kernels_py``."""
import numpy as np

from libc.stdint cimport int32_t, int64_t, uint8_t, uint16_t, uint32_t

cdef uint8_t RESIDENT = 1
cdef uint8_t MARK = 4
cdef uint8_t VICTIM = 8
cdef uint8_t VALID = 1
cdef uint8_t DPT_PINNED = 2

OK = 0
INSUFFICIENT = 1


cdef inline int64_t _pages(uint32_t[:, ::1] tok, int32_t[::1] mdir, int64_t p,
                           Py_ssize_t eps, int64_t page_size) nogil:
    return (<int64_t>tok[mdir[p // eps], p % eps] + page_size - 1) // page_size


def replace_step(int32_t[::1] dpt_dir, int32_t[:, ::1] dpt_part, uint16_t[:, ::1] dpt_ts,
                 uint8_t[:, ::1] dpt_flags, Py_ssize_t capacity,
                 int32_t[::1] meta_dir, uint32_t[:, ::1] meta_tok, uint8_t[:, ::1] meta_flags,
                 Py_ssize_t eps, int64_t page_size, requested, long step,
                 Py_ssize_t n_buckets, bint demote, bint exact):
    cdef int64_t[::1] req = np.ascontiguousarray(requested, dtype=np.int64)
    cdef Py_ssize_t k = req.shape[0]
    hits_a = np.empty(k, dtype=np.int64)
    misses_a = np.empty(k, dtype=np.int64)
    mpages_a = np.empty(k, dtype=np.int64)
    hit_slots_a = np.empty(capacity, dtype=np.int64)
    evicted_a = np.empty(capacity, dtype=np.int64)
    victims_a = np.empty(capacity, dtype=np.int64)
    admit_a = np.empty(capacity, dtype=np.int64)
    hist_a = np.zeros(n_buckets, dtype=np.int64)
    cdef int64_t[::1] hits = hits_a, misses = misses_a, mpages = mpages_a
    cdef int64_t[::1] hit_slots = hit_slots_a, evicted = evicted_a
    cdef int64_t[::1] victims = victims_a, admit = admit_a, hist = hist_a
    cdef Py_ssize_t i, j, s, nh = 0, nm = 0, nhs = 0, ne = 0, nv = 0, na = 0
    cdef int64_t p, pg, demand = 0, n_free = 0, evictable = 0, need, freed, x
    cdef int32_t seg, mseg
    cdef Py_ssize_t off, moff
    cdef uint8_t f, mf
    cdef uint16_t top = <uint16_t>(step if step < n_buckets - 1 else n_buckets - 1)
    cdef uint16_t t

    with nogil:
        # 1. classify and mark requested partitions
        for i in range(k):
            p = req[i]
            mseg = meta_dir[p // eps]
            moff = p % eps
            mf = meta_flags[mseg, moff]
            if mf & RESIDENT:
                hits[nh] = p
                nh += 1
            else:
                pg = _pages(meta_tok, meta_dir, p, eps, page_size)
                misses[nm] = p
                mpages[nm] = pg
                nm += 1
                demand += pg
            meta_flags[mseg, moff] = mf | MARK

        # 2. one scan: promote hits, demote the rest, build the histogram
        for s in range(capacity):
            seg = dpt_dir[s // eps]
            off = s % eps
            f = dpt_flags[seg, off]
            if not (f & VALID):
                n_free += 1
                continue
            p = dpt_part[seg, off]
            if meta_flags[meta_dir[p // eps], p % eps] & MARK:
                dpt_ts[seg, off] = top
                hit_slots[nhs] = s
                nhs += 1
            elif not (f & DPT_PINNED):
                t = dpt_ts[seg, off]
                if demote and t > 0:
                    t -= 1
                    dpt_ts[seg, off] = t
                hist[t] += 1
                evictable += 1

        need = demand - n_free
        if need <= evictable and need > 0:
            # 3. threshold bucket
            freed = 0
            x = 0
            while freed + hist[x] < need:
                freed += hist[x]
                x += 1
            if not exact:
                freed = need  # whole mode takes every page with ts <= x
            # 4. evict, whole partitions at a time
            for s in range(capacity):
                seg = dpt_dir[s // eps]
                off = s % eps
                f = dpt_flags[seg, off]
                if not (f & VALID) or (f & DPT_PINNED):
                    continue
                p = dpt_part[seg, off]
                mseg = meta_dir[p // eps]
                moff = p % eps
                mf = meta_flags[mseg, moff]
                if mf & MARK:
                    continue
                t = dpt_ts[seg, off]
                if not (mf & VICTIM):
                    if t < x or (not exact and t == x):
                        pass
                    elif t == x and freed < need:
                        freed += _pages(meta_tok, meta_dir, p, eps, page_size)
                    else:
                        continue
                    meta_flags[mseg, moff] = mf | VICTIM
                    victims[nv] = p
                    nv += 1
                dpt_part[seg, off] = -1
                dpt_ts[seg, off] = 0
                dpt_flags[seg, off] = 0
                evicted[ne] = s
                ne += 1
            for i in range(nv):
                p = victims[i]
                mseg = meta_dir[p // eps]
                moff = p % eps
                meta_flags[mseg, moff] = meta_flags[mseg, moff] & ~(RESIDENT | VICTIM)

        if need <= evictable:
            # 5. admit misses into the lowest free slots
            s = 0
            for i in range(nm):
                p = misses[i]
                for j in range(mpages[i]):
                    while dpt_flags[dpt_dir[s // eps], s % eps] & VALID:
                        s += 1
                    seg = dpt_dir[s // eps]
                    off = s % eps
                    dpt_part[seg, off] = <int32_t>p
                    dpt_ts[seg, off] = top
                    dpt_flags[seg, off] = VALID
                    admit[na] = s
                    na += 1
                mseg = meta_dir[p // eps]
                moff = p % eps
                meta_flags[mseg, moff] = meta_flags[mseg, moff] | RESIDENT

        for i in range(k):
            p = req[i]
            mseg = meta_dir[p // eps]
            moff = p % eps
            meta_flags[mseg, moff] = meta_flags[mseg, moff] & ~MARK

    status = OK if need <= evictable else INSUFFICIENT
    return (status, hits_a[:nh], misses_a[:nm], int(demand), hit_slots_a[:nhs],
            evicted_a[:ne], victims_a[:nv], admit_a[:na], int(evictable))
