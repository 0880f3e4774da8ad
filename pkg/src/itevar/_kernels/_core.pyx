# distutils: language = c++
# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False, nonecheck=False
"""Compiled tree kernels.

Mirrors _kernels.pure operation for operation; both backends must produce
bit-identical forests from the same seed (same traversal order, same
sequential summation, same tie-breaking). Keep the two files in sync.
"""

import numpy as np

cimport numpy as cnp
from libcpp.vector cimport vector
from libcpp.pair cimport pair
from libcpp.algorithm cimport sort as cpp_sort

ctypedef unsigned long long u64
ctypedef pair[double, long] dl_pair
ctypedef pair[long, long] ll_pair

BACKEND_NAME = "c"
MODE_REG = 0
MODE_EFF = 1

cdef int C_REG = 0
cdef int C_EFF = 1

cdef u64 _GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline u64 _mix64(u64* state) noexcept nogil:
    cdef u64 z
    state[0] = state[0] + _GOLDEN
    z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef struct Frame:
    long start
    long end
    long depth
    long parent
    int isleft


cdef struct Split:
    double gain
    long feature
    double thr
    int found


cdef inline Split _best_split(double[:, ::1] xnode, double* target,
                              long* rows, long m, long* cands, long ncand,
                              long min_node, signed char* low,
                              vector[dl_pair]* buf) noexcept nogil:
    # `low` (may be NULL) marks below-node-mean treatment residual rows;
    # when set, each child needs >= min_node rows from both sides.
    cdef Split best
    cdef long ci, f, p, k
    cdef long n_low, run_low, l_low, l_high, r_low, r_high
    cdef double total, sl, sr, g, v0, v1
    cdef int ok
    best.found = 0
    best.gain = 0.0
    best.feature = -1
    best.thr = 0.0
    n_low = 0
    if low != NULL:
        for p in range(m):
            n_low = n_low + low[rows[p]]
    for ci in range(ncand):
        f = cands[ci]
        buf.clear()
        for p in range(m):
            buf.push_back(dl_pair(xnode[rows[p], f], p))
        cpp_sort(buf[0].begin(), buf[0].end())
        total = 0.0
        for p in range(m):
            total = total + target[rows[buf[0][p].second]]
        sl = 0.0
        run_low = 0
        for p in range(m - 1):
            sl = sl + target[rows[buf[0][p].second]]
            if low != NULL:
                run_low = run_low + low[rows[buf[0][p].second]]
            k = p + 1
            v0 = buf[0][p].first
            v1 = buf[0][p + 1].first
            if v1 > v0 and k >= min_node and m - k >= min_node:
                ok = 1
                if low != NULL:
                    l_low = run_low
                    l_high = k - l_low
                    r_low = n_low - l_low
                    r_high = (m - k) - r_low
                    if (l_low < min_node or l_high < min_node or
                            r_low < min_node or r_high < min_node):
                        ok = 0
                if ok:
                    sr = total - sl
                    g = sl * sl / k + sr * sr / (m - k)
                    if best.found == 0 or g > best.gain:
                        best.found = 1
                        best.gain = g
                        best.feature = f
                        best.thr = (v0 + v1) * 0.5
    return best


def build_tree(double[:, ::1] X, double[::1] t0, double[::1] t1, int mode,
               long sub_size, long j1_size, long min_node, long mtry,
               long max_depth, unsigned long long seed):
    cdef long n = X.shape[0]
    cdef long d = X.shape[1]
    cdef u64 state = seed
    cdef u64 z
    cdef long i, j, p, m, nid, start, end, mid, nl, f
    cdef long nnodes = 0
    cdef long cap = 2 * j1_size + 1

    perm_arr = np.arange(n, dtype=np.int32)
    cdef int[::1] perm = perm_arr
    cdef int tmpi
    with nogil:
        for i in range(sub_size):
            z = _mix64(&state)
            j = i + <long>(z % <u64>(n - i))
            tmpi = perm[i]
            perm[i] = perm[j]
            perm[j] = tmpi

    j1_arr = np.asarray(perm_arr[:j1_size]).copy()
    j2_arr = np.asarray(perm_arr[j1_size:sub_size]).copy()
    cdef int[::1] j1 = j1_arr
    cdef int[::1] j2 = j2_arr
    cdef long m2 = sub_size - j1_size

    xnode_arr = np.empty((j1_size, d))
    cdef double[:, ::1] xnode = xnode_arr
    ynode_arr = np.empty(j1_size)
    anode_arr = np.empty(j1_size)
    cdef double[::1] y = ynode_arr
    cdef double[::1] at = anode_arr
    with nogil:
        for i in range(j1_size):
            for j in range(d):
                xnode[i, j] = X[j1[i], j]
            y[i] = t0[j1[i]]
            if mode == C_EFF:
                at[i] = t1[j1[i]]

    feat_arr = np.empty(cap, dtype=np.int32)
    thr_arr = np.empty(cap)
    left_arr = np.empty(cap, dtype=np.int32)
    right_arr = np.empty(cap, dtype=np.int32)
    cdef int[::1] feat = feat_arr
    cdef double[::1] thr = thr_arr
    cdef int[::1] left = left_arr
    cdef int[::1] right = right_arr

    rows_arr = np.arange(j1_size, dtype=np.int64)
    scratch_arr = np.empty(j1_size, dtype=np.int64)
    cdef long[::1] rows_buf = rows_arr
    cdef long[::1] scratch = scratch_arr
    ac_arr = np.empty(j1_size)
    yc_arr = np.empty(j1_size)
    rho_arr = np.empty(j1_size)
    low_arr = np.zeros(j1_size, dtype=np.int8)
    cdef double[::1] ac = ac_arr
    cdef double[::1] yc = yc_arr
    cdef double[::1] rho = rho_arr
    cdef signed char[::1] low = low_arr
    fidx_arr = np.empty(d, dtype=np.int64)
    cdef long[::1] fidx = fidx_arr
    cdef long ncand

    cdef vector[Frame] stack
    cdef vector[dl_pair] buf
    cdef Frame fr
    cdef Split sp
    cdef double vmin, vmax, mean_a, mean_y, saa, say, tau, denom_bar
    cdef double s, parent_gain, tval
    cdef int can_split, do_split
    cdef long q, tmp

    fr.start = 0
    fr.end = j1_size
    fr.depth = 0
    fr.parent = -1
    fr.isleft = 0
    stack.push_back(fr)

    with nogil:
        while stack.size() > 0:
            fr = stack.back()
            stack.pop_back()
            nid = nnodes
            nnodes = nnodes + 1
            if fr.parent >= 0:
                if fr.isleft:
                    left[fr.parent] = <int>nid
                else:
                    right[fr.parent] = <int>nid
            start = fr.start
            end = fr.end
            m = end - start

            do_split = 0
            can_split = 1
            if m < 2 * min_node:
                can_split = 0
            if max_depth >= 0 and fr.depth >= max_depth:
                can_split = 0
            if can_split:
                if mode == C_REG:
                    vmin = y[rows_buf[start]]
                    vmax = vmin
                    for p in range(start + 1, end):
                        tval = y[rows_buf[p]]
                        if tval < vmin:
                            vmin = tval
                        if tval > vmax:
                            vmax = tval
                    if vmax != vmin:
                        s = 0.0
                        for p in range(start, end):
                            s = s + y[rows_buf[p]]
                        parent_gain = s * s / m
                        # feature subset
                        for p in range(d):
                            fidx[p] = p
                        ncand = d
                        if mtry < d:
                            for i in range(mtry):
                                z = _mix64(&state)
                                j = i + <long>(z % <u64>(d - i))
                                tmp = fidx[i]
                                fidx[i] = fidx[j]
                                fidx[j] = tmp
                            ncand = mtry
                            for i in range(1, ncand):
                                tmp = fidx[i]
                                j = i
                                while j > 0 and fidx[j - 1] > tmp:
                                    fidx[j] = fidx[j - 1]
                                    j = j - 1
                                fidx[j] = tmp
                        sp = _best_split(xnode, &y[0], &rows_buf[start], m,
                                         &fidx[0], ncand, min_node, NULL,
                                         &buf)
                        if sp.found and sp.gain > parent_gain:
                            do_split = 1
                else:
                    vmin = at[rows_buf[start]]
                    vmax = vmin
                    for p in range(start + 1, end):
                        tval = at[rows_buf[p]]
                        if tval < vmin:
                            vmin = tval
                        if tval > vmax:
                            vmax = tval
                    if vmax != vmin:
                        s = 0.0
                        for p in range(start, end):
                            s = s + at[rows_buf[p]]
                        mean_a = s / m
                        s = 0.0
                        for p in range(start, end):
                            s = s + y[rows_buf[p]]
                        mean_y = s / m
                        for p in range(m):
                            q = rows_buf[start + p]
                            ac[q] = at[q] - mean_a
                            yc[q] = y[q] - mean_y
                        saa = 0.0
                        for p in range(start, end):
                            q = rows_buf[p]
                            saa = saa + ac[q] * ac[q]
                        say = 0.0
                        for p in range(start, end):
                            q = rows_buf[p]
                            say = say + ac[q] * yc[q]
                        tau = say / saa
                        denom_bar = saa / m
                        for p in range(start, end):
                            q = rows_buf[p]
                            rho[q] = ac[q] * (yc[q] - ac[q] * tau) / denom_bar
                            low[q] = 1 if ac[q] < 0 else 0
                        s = 0.0
                        for p in range(start, end):
                            s = s + rho[rows_buf[p]]
                        parent_gain = s * s / m
                        for p in range(d):
                            fidx[p] = p
                        ncand = d
                        if mtry < d:
                            for i in range(mtry):
                                z = _mix64(&state)
                                j = i + <long>(z % <u64>(d - i))
                                tmp = fidx[i]
                                fidx[i] = fidx[j]
                                fidx[j] = tmp
                            ncand = mtry
                            for i in range(1, ncand):
                                tmp = fidx[i]
                                j = i
                                while j > 0 and fidx[j - 1] > tmp:
                                    fidx[j] = fidx[j - 1]
                                    j = j - 1
                                fidx[j] = tmp
                        sp = _best_split(xnode, &rho[0], &rows_buf[start], m,
                                         &fidx[0], ncand, min_node, &low[0],
                                         &buf)
                        if sp.found and sp.gain > parent_gain:
                            do_split = 1

            if not do_split:
                feat[nid] = -1
                thr[nid] = 0.0
                left[nid] = -1
                right[nid] = -1
                continue

            f = sp.feature
            # stable partition by x <= thr
            nl = 0
            for p in range(start, end):
                q = rows_buf[p]
                if xnode[q, f] <= sp.thr:
                    scratch[nl] = q
                    nl = nl + 1
            j = nl
            for p in range(start, end):
                q = rows_buf[p]
                if not (xnode[q, f] <= sp.thr):
                    scratch[j] = q
                    j = j + 1
            for p in range(m):
                rows_buf[start + p] = scratch[p]

            feat[nid] = <int>f
            thr[nid] = sp.thr
            left[nid] = -1
            right[nid] = -1
            mid = start + nl
            fr.start = mid
            fr.end = end
            fr.depth = fr.depth + 1
            fr.parent = nid
            fr.isleft = 0
            stack.push_back(fr)
            fr.start = start
            fr.end = mid
            fr.isleft = 1
            stack.push_back(fr)

    # route honest rows, prune empty-leaf splits
    leafid_arr = np.empty(m2, dtype=np.int64)
    cdef long[::1] leafid = leafid_arr
    cdef long cur, row
    with nogil:
        for i in range(m2):
            row = j2[i]
            cur = 0
            while feat[cur] >= 0:
                if X[row, feat[cur]] <= thr[cur]:
                    cur = left[cur]
                else:
                    cur = right[cur]
            leafid[i] = cur

    cnt_arr = np.zeros(nnodes, dtype=np.int64)
    cdef long[::1] cnt = cnt_arr
    nf_arr = np.empty(nnodes, dtype=np.int32)
    nt_arr = np.empty(nnodes)
    nl_arr = np.empty(nnodes, dtype=np.int32)
    nr_arr = np.empty(nnodes, dtype=np.int32)
    o2n_arr = np.full(nnodes, -1, dtype=np.int64)
    cdef int[::1] nf = nf_arr
    cdef double[::1] nt = nt_arr
    cdef int[::1] nlv = nl_arr
    cdef int[::1] nrv = nr_arr
    cdef long[::1] o2n = o2n_arr
    cdef long nn_new = 0
    cdef long ov
    cdef vector[Frame] pstack
    with nogil:
        for i in range(m2):
            cnt[leafid[i]] = cnt[leafid[i]] + 1
        for i in range(nnodes - 1, -1, -1):
            if feat[i] >= 0:
                cnt[i] = cnt[left[i]] + cnt[right[i]]
        fr.start = 0   # old node id
        fr.parent = -1
        fr.isleft = 0
        pstack.push_back(fr)
        while pstack.size() > 0:
            fr = pstack.back()
            pstack.pop_back()
            ov = fr.start
            while feat[ov] >= 0:
                if cnt[left[ov]] == 0:
                    ov = right[ov]
                elif cnt[right[ov]] == 0:
                    ov = left[ov]
                else:
                    break
            nid = nn_new
            nn_new = nn_new + 1
            o2n[ov] = nid
            nf[nid] = feat[ov]
            nt[nid] = thr[ov]
            nlv[nid] = -1
            nrv[nid] = -1
            if fr.parent >= 0:
                if fr.isleft:
                    nlv[fr.parent] = <int>nid
                else:
                    nrv[fr.parent] = <int>nid
            if feat[ov] >= 0:
                fr.start = right[ov]
                fr.parent = nid
                fr.isleft = 0
                pstack.push_back(fr)
                fr.start = left[ov]
                fr.isleft = 1
                pstack.push_back(fr)

    # sort honest rows, map leaves, leaf stats
    cdef vector[ll_pair] rl
    rl.reserve(m2)
    with nogil:
        for i in range(m2):
            rl.push_back(ll_pair(j2[i], o2n[leafid[i]]))
        cpp_sort(rl.begin(), rl.end())
    j2r_arr = np.empty(m2, dtype=np.int32)
    j2l_arr = np.empty(m2, dtype=np.int32)
    cdef int[::1] j2r = j2r_arr
    cdef int[::1] j2l = j2l_arr
    lcnt_arr = np.zeros(nn_new, dtype=np.int32)
    lval_arr = np.zeros(nn_new)
    cdef int[::1] lcnt = lcnt_arr
    cdef double[::1] lval = lval_arr
    with nogil:
        for i in range(m2):
            j2r[i] = <int>rl[i].first
            j2l[i] = <int>rl[i].second
            lcnt[rl[i].second] = lcnt[rl[i].second] + 1
        if mode == C_REG:
            for i in range(m2):
                lval[j2l[i]] = lval[j2l[i]] + t0[j2r[i]]
            for i in range(nn_new):
                if lcnt[i] > 0:
                    lval[i] = lval[i] / lcnt[i]

    sub_sorted = np.sort(np.asarray(perm_arr[:sub_size]))
    j1_sorted = np.sort(j1_arr)
    return (nf_arr[:nn_new].copy(), nt_arr[:nn_new].copy(),
            nl_arr[:nn_new].copy(), nr_arr[:nn_new].copy(),
            lval_arr, lcnt_arr, sub_sorted, j1_sorted, j2r_arr, j2l_arr)


cdef inline int _contains(int* arr, long lo, long hi, long val) noexcept nogil:
    # binary search in arr[lo:hi]
    cdef long mid
    cdef long end = hi
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < val:
            lo = mid + 1
        else:
            hi = mid
    return 1 if (lo < end and arr[lo] == val) else 0


cdef inline long _lower_bound(int* arr, long lo, long hi, long val) noexcept nogil:
    cdef long mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < val:
            lo = mid + 1
        else:
            hi = mid
    return lo


def reg_forest_predict(int[::1] feat, double[::1] thr, int[::1] left,
                       int[::1] right, long[::1] node_off,
                       double[::1] leaf_val, double[:, ::1] X):
    cdef long q = X.shape[0]
    cdef long ntrees = node_off.shape[0] - 1
    psum_arr = np.zeros(q)
    used_arr = np.zeros(q, dtype=np.int32)
    cdef double[::1] psum = psum_arr
    cdef int[::1] used = used_arr
    cdef long t, i, o0, cur
    with nogil:
        for t in range(ntrees):
            o0 = node_off[t]
            for i in range(q):
                cur = o0
                while feat[cur] >= 0:
                    if X[i, feat[cur]] <= thr[cur]:
                        cur = o0 + left[cur]
                    else:
                        cur = o0 + right[cur]
                psum[i] = psum[i] + leaf_val[cur]
                used[i] = used[i] + 1
    return psum_arr, used_arr


def reg_forest_predict_oob(int[::1] feat, double[::1] thr, int[::1] left,
                           int[::1] right, long[::1] node_off,
                           double[::1] leaf_val, long[::1] sub_off,
                           int[::1] sub_rows, double[:, ::1] X):
    cdef long n = X.shape[0]
    cdef long ntrees = node_off.shape[0] - 1
    psum_arr = np.zeros(n)
    used_arr = np.zeros(n, dtype=np.int32)
    cdef double[::1] psum = psum_arr
    cdef int[::1] used = used_arr
    cdef long t, i, o0, cur, s0, s1
    with nogil:
        for t in range(ntrees):
            o0 = node_off[t]
            s0 = sub_off[t]
            s1 = sub_off[t + 1]
            for i in range(n):
                if s1 > s0 and _contains(&sub_rows[0], s0, s1, i):
                    continue
                cur = o0
                while feat[cur] >= 0:
                    if X[i, feat[cur]] <= thr[cur]:
                        cur = o0 + left[cur]
                    else:
                        cur = o0 + right[cur]
                psum[i] = psum[i] + leaf_val[cur]
                used[i] = used[i] + 1
    return psum_arr, used_arr


def eff_forest_accumulate(int[::1] feat, double[::1] thr, int[::1] left,
                          int[::1] right, long[::1] node_off,
                          int[::1] leaf_cnt, long[::1] j2_off,
                          int[::1] j2_rows, int[::1] j2_leaf,
                          double[:, ::1] X, double[:, ::1] V):
    cdef long q = X.shape[0]
    cdef long ncol = V.shape[1]
    cdef long ntrees = node_off.shape[0] - 1
    cdef long maxnodes = 0
    cdef long t, i, c, o0, o1, nn, cur, k2, row
    for t in range(ntrees):
        nn = node_off[t + 1] - node_off[t]
        if nn > maxnodes:
            maxnodes = nn
    sums_arr = np.zeros((q, ncol))
    used_arr = np.zeros(q, dtype=np.int32)
    ls_arr = np.zeros((maxnodes, ncol))
    cdef double[:, ::1] sums = sums_arr
    cdef int[::1] used = used_arr
    cdef double[:, ::1] ls = ls_arr
    cdef double kd
    with nogil:
        for t in range(ntrees):
            o0 = node_off[t]
            o1 = node_off[t + 1]
            nn = o1 - o0
            for i in range(nn):
                for c in range(ncol):
                    ls[i, c] = 0.0
            for i in range(j2_off[t], j2_off[t + 1]):
                row = j2_rows[i]
                for c in range(ncol):
                    ls[j2_leaf[i], c] = ls[j2_leaf[i], c] + V[row, c]
            for i in range(q):
                cur = 0
                while feat[o0 + cur] >= 0:
                    if X[i, feat[o0 + cur]] <= thr[o0 + cur]:
                        cur = left[o0 + cur]
                    else:
                        cur = right[o0 + cur]
                k2 = leaf_cnt[o0 + cur]
                if k2 > 0:
                    kd = <double>k2
                    for c in range(ncol):
                        sums[i, c] = sums[i, c] + ls[cur, c] / kd
                    used[i] = used[i] + 1
    return sums_arr, used_arr


def eff_forest_accumulate_oob(int[::1] feat, double[::1] thr, int[::1] left,
                              int[::1] right, long[::1] node_off,
                              int[::1] leaf_cnt, long[::1] j2_off,
                              int[::1] j2_rows, int[::1] j2_leaf,
                              long[::1] j1_off, int[::1] j1_rows,
                              double[:, ::1] X, double[:, ::1] V):
    cdef long n = X.shape[0]
    cdef long ncol = V.shape[1]
    cdef long ntrees = node_off.shape[0] - 1
    cdef long maxnodes = 0
    cdef long t, i, c, o0, o1, nn, cur, k2, row, z0, z1, pos
    for t in range(ntrees):
        nn = node_off[t + 1] - node_off[t]
        if nn > maxnodes:
            maxnodes = nn
    sums_arr = np.zeros((n, ncol))
    used_arr = np.zeros(n, dtype=np.int32)
    ls_arr = np.zeros((maxnodes, ncol))
    cdef double[:, ::1] sums = sums_arr
    cdef int[::1] used = used_arr
    cdef double[:, ::1] ls = ls_arr
    cdef double kd
    cdef int isself
    with nogil:
        for t in range(ntrees):
            o0 = node_off[t]
            o1 = node_off[t + 1]
            nn = o1 - o0
            z0 = j2_off[t]
            z1 = j2_off[t + 1]
            for i in range(nn):
                for c in range(ncol):
                    ls[i, c] = 0.0
            for i in range(z0, z1):
                row = j2_rows[i]
                for c in range(ncol):
                    ls[j2_leaf[i], c] = ls[j2_leaf[i], c] + V[row, c]
            for i in range(n):
                if j1_off[t + 1] > j1_off[t] and _contains(
                        &j1_rows[0], j1_off[t], j1_off[t + 1], i):
                    continue
                cur = 0
                while feat[o0 + cur] >= 0:
                    if X[i, feat[o0 + cur]] <= thr[o0 + cur]:
                        cur = left[o0 + cur]
                    else:
                        cur = right[o0 + cur]
                k2 = leaf_cnt[o0 + cur]
                isself = 0
                if z1 > z0:
                    pos = _lower_bound(&j2_rows[0], z0, z1, i)
                    if pos < z1 and j2_rows[pos] == i and j2_leaf[pos] == cur:
                        isself = 1
                if isself:
                    k2 = k2 - 1
                    if k2 > 0:
                        kd = <double>k2
                        for c in range(ncol):
                            sums[i, c] = sums[i, c] + (ls[cur, c] - V[i, c]) / kd
                        used[i] = used[i] + 1
                elif k2 > 0:
                    kd = <double>k2
                    for c in range(ncol):
                        sums[i, c] = sums[i, c] + ls[cur, c] / kd
                    used[i] = used[i] + 1
    return sums_arr, used_arr
