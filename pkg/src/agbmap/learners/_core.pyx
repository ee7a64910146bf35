# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled twins of the pure-numpy tree kernels.

Every loop mirrors _kernels_py.py operation for operation: identical
accumulation order, identical tie rules, identical threshold arithmetic.
Builds require -ffp-contract=off so the compiler cannot fuse a*b+c into FMA
and change rounding; with that pinned, the two backends produce bit-equal
node arrays and the test suite asserts it.
"""
import numpy as np

cimport numpy as cnp
from libc.stdlib cimport free, malloc, qsort
from libc.string cimport memcpy

ctypedef unsigned long long u64
ctypedef cnp.int32_t i32
ctypedef cnp.int64_t i64
ctypedef cnp.uint16_t u16
ctypedef cnp.uint8_t u8

cdef double NEG_INF = -np.inf

# Constants from rng.py; part of the serialized-model contract.
cdef u64 GOLDEN = <u64>0x9E3779B97F4A7C15
cdef u64 TAG_FEATURES = <u64>0x6665617400000003


cdef inline u64 _mix64(u64 z) nogil:
    z = (z ^ (z >> 30)) * <u64>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <u64>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline u64 _stream(u64 seed, u64 k) nogil:
    return _mix64(seed + (k + 1) * GOLDEN)


cdef void _feature_subset(u64 tree_seed, i64 slot, int p, int mtry,
                          int* arr, int* subset, int* n_out) nogil:
    cdef int j, i, rpos, tmp
    cdef u64 node_seed
    if mtry >= p:
        for j in range(p):
            subset[j] = j
        n_out[0] = p
        return
    node_seed = _stream(tree_seed ^ TAG_FEATURES, <u64>slot)
    for j in range(p):
        arr[j] = j
    for j in range(mtry):
        rpos = j + <int>(_stream(node_seed, <u64>j) % <u64>(p - j))
        tmp = arr[j]
        arr[j] = arr[rpos]
        arr[rpos] = tmp
    for j in range(1, mtry):
        tmp = arr[j]
        i = j - 1
        while i >= 0 and arr[i] > tmp:
            arr[i + 1] = arr[i]
            i -= 1
        arr[i + 1] = tmp
    for j in range(mtry):
        subset[j] = arr[j]
    n_out[0] = mtry


cdef struct VS:
    double v
    i32 s


cdef int _cmp_vs(const void* pa, const void* pb) noexcept nogil:
    cdef const VS* a = <const VS*> pa
    cdef const VS* b = <const VS*> pb
    if a.v < b.v:
        return -1
    if a.v > b.v:
        return 1
    if a.s < b.s:
        return -1
    if a.s > b.s:
        return 1
    return 0


cdef struct NodeTask:
    i64 slot
    i64 start
    i64 end
    double total
    u8 all_equal
    i32 depth


cdef i64 _grow_cart_core(const double* X, i64 n_rows, int p, const double* y,
                         i32* samples, i64 n, int mtry, i64 min_leaf,
                         int max_depth, u64 tree_seed,
                         i32* feature, double* threshold, i32* left,
                         i32* right, double* value,
                         VS* vs, double* ys, i32* scratch, int* farr,
                         int* fsub, NodeTask* stack) nogil:
    cdef i64 n_nodes = 1, sp = 0
    cdef i64 slot, start, end, nn, k, nl, nr, nl_cnt, nr_cnt, s
    cdef i32 depth
    cdef int n_sub, si, f, best_f
    cdef u8 all_equal, aeq_l, aeq_r, can_split
    cdef double total, total_scan, g2n, gl, gr, gain, thr, yi, yfirst
    cdef double best_gain, best_thr, total_l, total_r
    cdef const double* col

    total = 0.0
    all_equal = 1
    yfirst = y[samples[0]]
    for k in range(n):
        yi = y[samples[k]]
        total += yi
        if yi != yfirst:
            all_equal = 0
    stack[0] = NodeTask(0, 0, n, total, all_equal, 0)
    sp = 1
    while sp > 0:
        sp -= 1
        slot = stack[sp].slot
        start = stack[sp].start
        end = stack[sp].end
        total = stack[sp].total
        all_equal = stack[sp].all_equal
        depth = stack[sp].depth
        nn = end - start

        best_gain = NEG_INF
        best_f = -1
        best_thr = 0.0
        can_split = (nn >= 2 and nn >= 2 * min_leaf and not all_equal
                     and (max_depth == 0 or depth < max_depth))
        if can_split:
            _feature_subset(tree_seed, slot, p, mtry, farr, fsub, &n_sub)
            for si in range(n_sub):
                f = fsub[si]
                col = X + (<i64>f) * n_rows
                for k in range(nn):
                    vs[k].v = col[samples[start + k]]
                    vs[k].s = <i32>k
                qsort(vs, <size_t>nn, sizeof(VS), _cmp_vs)
                for k in range(nn):
                    ys[k] = y[samples[start + vs[k].s]]
                total_scan = 0.0
                for k in range(nn):
                    total_scan += ys[k]
                g2n = total_scan * total_scan / (<double>nn)
                gl = 0.0
                for k in range(nn - 1):
                    gl += ys[k]
                    if vs[k].v >= vs[k + 1].v:
                        continue
                    nl = k + 1
                    nr = nn - nl
                    if nl < min_leaf or nr < min_leaf:
                        continue
                    gr = total_scan - gl
                    gain = gl * gl / (<double>nl) + gr * gr / (<double>nr) - g2n
                    if gain > best_gain:
                        thr = (vs[k].v + vs[k + 1].v) * 0.5
                        if thr == vs[k + 1].v:
                            thr = vs[k].v
                        best_gain = gain
                        best_f = f
                        best_thr = thr
        if best_f >= 0 and best_gain > 0.0:
            col = X + (<i64>best_f) * n_rows
            nl_cnt = 0
            for k in range(nn):
                s = samples[start + k]
                if col[s] <= best_thr:
                    scratch[nl_cnt] = <i32>s
                    nl_cnt += 1
            nr_cnt = nl_cnt
            for k in range(nn):
                s = samples[start + k]
                if not (col[s] <= best_thr):
                    scratch[nr_cnt] = <i32>s
                    nr_cnt += 1
            memcpy(samples + start, scratch, <size_t>nn * sizeof(i32))

            total_l = 0.0
            aeq_l = 1
            yfirst = y[samples[start]]
            for k in range(nl_cnt):
                yi = y[samples[start + k]]
                total_l += yi
                if yi != yfirst:
                    aeq_l = 0
            total_r = 0.0
            aeq_r = 1
            yfirst = y[samples[start + nl_cnt]]
            for k in range(nl_cnt, nn):
                yi = y[samples[start + k]]
                total_r += yi
                if yi != yfirst:
                    aeq_r = 0

            feature[slot] = best_f
            threshold[slot] = best_thr
            left[slot] = <i32>n_nodes
            right[slot] = <i32>(n_nodes + 1)
            feature[n_nodes] = -1
            feature[n_nodes + 1] = -1
            stack[sp] = NodeTask(n_nodes + 1, start + nl_cnt, end,
                                 total_r, aeq_r, depth + 1)
            stack[sp + 1] = NodeTask(n_nodes, start, start + nl_cnt,
                                     total_l, aeq_l, depth + 1)
            sp += 2
            n_nodes += 2
        else:
            if all_equal:
                value[slot] = y[samples[start]]
            else:
                value[slot] = total / (<double>nn)
    return n_nodes


def grow_cart(double[::1, :] X, double[::1] y, i32[::1] sample_idx,
              int mtry, int min_leaf, int max_depth, object tree_seed):
    """Compiled twin of _kernels_py.grow_cart (F-ordered X required)."""
    cdef i64 n = sample_idx.shape[0]
    cdef i64 n_rows = X.shape[0]
    cdef int p = <int>X.shape[1]
    cdef u64 ts = <u64>tree_seed
    cdef i64 cap = 2 * n + 1

    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap, dtype=np.float64)
    samples = np.ascontiguousarray(sample_idx).copy()

    cdef i32[::1] fv = feature
    cdef double[::1] tv = threshold
    cdef i32[::1] lv = left
    cdef i32[::1] rv = right
    cdef double[::1] vv = value
    cdef i32[::1] sv = samples

    cdef VS* vs = <VS*>malloc(<size_t>n * sizeof(VS))
    cdef double* ys = <double*>malloc(<size_t>n * sizeof(double))
    cdef i32* scratch = <i32*>malloc(<size_t>n * sizeof(i32))
    cdef int* farr = <int*>malloc(<size_t>p * sizeof(int))
    cdef int* fsub = <int*>malloc(<size_t>p * sizeof(int))
    cdef NodeTask* stack = <NodeTask*>malloc(<size_t>(n + 2) * sizeof(NodeTask))
    if vs == NULL or ys == NULL or scratch == NULL or farr == NULL \
            or fsub == NULL or stack == NULL:
        free(vs); free(ys); free(scratch); free(farr); free(fsub); free(stack)
        raise MemoryError()

    cdef i64 n_nodes
    try:
        with nogil:
            n_nodes = _grow_cart_core(
                &X[0, 0], n_rows, p, &y[0], &sv[0], n, mtry,
                <i64>min_leaf, max_depth, ts,
                &fv[0], &tv[0], &lv[0], &rv[0], &vv[0],
                vs, ys, scratch, farr, fsub, stack)
    finally:
        free(vs); free(ys); free(scratch); free(farr); free(fsub); free(stack)
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(),
            value[:n_nodes].copy())


cdef void _gbdt_best(const u16* binned, i64 n_rows, int p, const i64* eoff,
                     const double* residual, const i32* samples,
                     i64 start, i64 end, double total, i64 min_leaf,
                     double* hist_sum, i64* hist_cnt,
                     double* out_gain, int* out_f, int* out_bin) nogil:
    cdef i64 nn = end - start
    cdef i64 k, s, cl, nr, base, nb, b
    cdef int f
    cdef double g2n, gl, gr, gain, best_gain
    cdef const u16* colb
    best_gain = NEG_INF
    out_gain[0] = NEG_INF
    out_f[0] = -1
    out_bin[0] = -1
    g2n = total * total / (<double>nn)
    for f in range(p):
        nb = eoff[f + 1] - eoff[f] + 1
        if nb < 2:
            continue
        base = eoff[f] + f
        for b in range(nb):
            hist_sum[base + b] = 0.0
            hist_cnt[base + b] = 0
        colb = binned + (<i64>f) * n_rows
        for k in range(nn):
            s = samples[start + k]
            b = colb[s]
            hist_sum[base + b] += residual[s]
            hist_cnt[base + b] += 1
        gl = 0.0
        cl = 0
        for b in range(nb - 1):
            gl += hist_sum[base + b]
            cl += hist_cnt[base + b]
            nr = nn - cl
            if cl < min_leaf or nr < min_leaf:
                continue
            gr = total - gl
            gain = gl * gl / (<double>cl) + gr * gr / (<double>nr) - g2n
            if gain > best_gain:
                best_gain = gain
                out_gain[0] = gain
                out_f[0] = f
                out_bin[0] = <int>b


def grow_gbdt_tree(u16[::1, :] binned, i32[::1] n_bins, double[::1] edges_flat,
                   i64[::1] edges_offsets, double[::1] residual,
                   int max_leaves, int min_leaf, double min_gain):
    """Compiled twin of _kernels_py.grow_gbdt_tree (F-ordered bins required)."""
    cdef i64 n = residual.shape[0]
    cdef int p = <int>binned.shape[1]
    cdef i64 total_bins = edges_offsets[p] + p
    cdef i64 cap = 2 * max_leaves + 1
    cdef int max_slots = 2 * max_leaves + 1

    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap, dtype=np.float64)
    out = np.empty(n, dtype=np.float64)
    samples = np.arange(n, dtype=np.int32)

    cdef i32[::1] fv = feature
    cdef double[::1] tv = threshold
    cdef i32[::1] lv = left
    cdef i32[::1] rv = right
    cdef double[::1] vv = value
    cdef double[::1] ov = out
    cdef i32[::1] sv = samples

    # live-leaf registry, scanned in creation order
    leaf_slot = np.zeros(max_slots, dtype=np.int64)
    leaf_start = np.zeros(max_slots, dtype=np.int64)
    leaf_end = np.zeros(max_slots, dtype=np.int64)
    leaf_total = np.zeros(max_slots, dtype=np.float64)
    leaf_alleq = np.zeros(max_slots, dtype=np.uint8)
    leaf_alive = np.zeros(max_slots, dtype=np.uint8)
    leaf_gain = np.full(max_slots, NEG_INF, dtype=np.float64)
    leaf_f = np.full(max_slots, -1, dtype=np.int32)
    leaf_bin = np.full(max_slots, -1, dtype=np.int32)
    cdef i64[::1] L_slot = leaf_slot
    cdef i64[::1] L_start = leaf_start
    cdef i64[::1] L_end = leaf_end
    cdef double[::1] L_total = leaf_total
    cdef u8[::1] L_alleq = leaf_alleq
    cdef u8[::1] L_alive = leaf_alive
    cdef double[::1] L_gain = leaf_gain
    cdef i32[::1] L_f = leaf_f
    cdef i32[::1] L_bin = leaf_bin

    cdef double* hist_sum = <double*>malloc(<size_t>total_bins * sizeof(double))
    cdef i64* hist_cnt = <i64*>malloc(<size_t>total_bins * sizeof(i64))
    cdef i32* scratch = <i32*>malloc(<size_t>n * sizeof(i32))
    if hist_sum == NULL or hist_cnt == NULL or scratch == NULL:
        free(hist_sum); free(hist_cnt); free(scratch)
        raise MemoryError()

    cdef const u16* bptr = &binned[0, 0]
    cdef const i64* eoff = &edges_offsets[0]
    cdef const double* rptr = &residual[0]
    cdef i64 n_rows = binned.shape[0]

    cdef i64 n_nodes = 1, n_entries = 1, n_leaves = 1
    cdef i64 k, s, nl_cnt, nr_cnt, start, end, nn, e, pick
    cdef int f, b
    cdef double total, gl_gain, rfirst, ri, total_l, total_r, best
    cdef u8 aeq_l, aeq_r
    cdef double gout
    cdef int fout, bout
    cdef const u16* colb

    try:
        total = 0.0
        aeq_l = 1
        rfirst = rptr[0]
        for k in range(n):
            ri = rptr[k]
            total += ri
            if ri != rfirst:
                aeq_l = 0
        L_slot[0] = 0
        L_start[0] = 0
        L_end[0] = n
        L_total[0] = total
        L_alleq[0] = aeq_l
        L_alive[0] = 1
        if not aeq_l and n >= 2 * min_leaf:
            with nogil:
                _gbdt_best(bptr, n_rows, p, eoff, rptr, &sv[0], 0, n,
                           total, <i64>min_leaf, hist_sum, hist_cnt,
                           &gout, &fout, &bout)
            L_gain[0] = gout
            L_f[0] = fout
            L_bin[0] = bout

        while n_leaves < max_leaves:
            pick = -1
            best = NEG_INF
            for e in range(n_entries):
                if L_alive[e] and L_f[e] >= 0 and L_gain[e] > min_gain:
                    if L_gain[e] > best:
                        best = L_gain[e]
                        pick = e
            if pick < 0:
                break
            f = L_f[pick]
            b = L_bin[pick]
            start = L_start[pick]
            end = L_end[pick]
            nn = end - start
            colb = bptr + (<i64>f) * n_rows

            nl_cnt = 0
            for k in range(nn):
                s = sv[start + k]
                if colb[s] <= <u16>b:
                    scratch[nl_cnt] = <i32>s
                    nl_cnt += 1
            nr_cnt = nl_cnt
            for k in range(nn):
                s = sv[start + k]
                if not (colb[s] <= <u16>b):
                    scratch[nr_cnt] = <i32>s
                    nr_cnt += 1
            memcpy(&sv[start], scratch, <size_t>nn * sizeof(i32))

            total_l = 0.0
            aeq_l = 1
            rfirst = rptr[sv[start]]
            for k in range(nl_cnt):
                ri = rptr[sv[start + k]]
                total_l += ri
                if ri != rfirst:
                    aeq_l = 0
            total_r = 0.0
            aeq_r = 1
            rfirst = rptr[sv[start + nl_cnt]]
            for k in range(nl_cnt, nn):
                ri = rptr[sv[start + k]]
                total_r += ri
                if ri != rfirst:
                    aeq_r = 0

            fv[L_slot[pick]] = f
            tv[L_slot[pick]] = edges_flat[edges_offsets[f] + b]
            lv[L_slot[pick]] = <i32>n_nodes
            rv[L_slot[pick]] = <i32>(n_nodes + 1)
            L_alive[pick] = 0

            L_slot[n_entries] = n_nodes
            L_start[n_entries] = start
            L_end[n_entries] = start + nl_cnt
            L_total[n_entries] = total_l
            L_alleq[n_entries] = aeq_l
            L_alive[n_entries] = 1
            if not aeq_l and nl_cnt >= 2 * min_leaf:
                with nogil:
                    _gbdt_best(bptr, n_rows, p, eoff, rptr, &sv[0],
                               start, start + nl_cnt, total_l, <i64>min_leaf,
                               hist_sum, hist_cnt, &gout, &fout, &bout)
                L_gain[n_entries] = gout
                L_f[n_entries] = fout
                L_bin[n_entries] = bout
            n_entries += 1

            L_slot[n_entries] = n_nodes + 1
            L_start[n_entries] = start + nl_cnt
            L_end[n_entries] = end
            L_total[n_entries] = total_r
            L_alleq[n_entries] = aeq_r
            L_alive[n_entries] = 1
            if not aeq_r and (nn - nl_cnt) >= 2 * min_leaf:
                with nogil:
                    _gbdt_best(bptr, n_rows, p, eoff, rptr, &sv[0],
                               start + nl_cnt, end, total_r, <i64>min_leaf,
                               hist_sum, hist_cnt, &gout, &fout, &bout)
                L_gain[n_entries] = gout
                L_f[n_entries] = fout
                L_bin[n_entries] = bout
            n_entries += 1
            n_nodes += 2
            n_leaves += 1

        for e in range(n_entries):
            if not L_alive[e]:
                continue
            start = L_start[e]
            end = L_end[e]
            if L_alleq[e]:
                gl_gain = rptr[sv[start]]
            else:
                gl_gain = L_total[e] / (<double>(end - start))
            vv[L_slot[e]] = gl_gain
            for k in range(start, end):
                ov[sv[k]] = gl_gain
    finally:
        free(hist_sum); free(hist_cnt); free(scratch)

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(),
            value[:n_nodes].copy(), out)


def tree_apply(i32[::1] feature, double[::1] threshold, i32[::1] left,
               i32[::1] right, double[::1] value, double[:, ::1] X):
    """Leaf value per row ("go left iff value <= threshold")."""
    cdef i64 n = X.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef i64 i
    cdef i32 node
    with nogil:
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            ov[i] = value[node]
    return out
