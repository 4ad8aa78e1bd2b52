"""Hot inner loops.

Every kernel here is written once in the numba-compatible subset of
Python/numpy. When ``DTSLICE_DISABLE_NUMBA`` is set to a truthy value the
functions run as ordinary interpreted numpy code, otherwise they are compiled
with ``numba.njit``. Both paths must produce identical results; the benchmark
in ``benchmarks/bench_kernels.py`` compares their speed.
"""

import os

import numpy as np

_FLAG = os.environ.get("DTSLICE_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = _FLAG not in ("1", "true", "yes", "on")

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def _jit(fn):
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


@_jit
def link_rate_scalar(gain, bandwidth):
    """Shannon rate for SNR·Hz ``gain`` at ``bandwidth`` Hz (noise scales with bandwidth)."""
    if bandwidth <= 0.0:
        return 0.0
    return bandwidth * np.log2(1.0 + gain / bandwidth)


@_jit
def hz_for_rate(gain, target_rate, b_max):
    """Smallest bandwidth reaching ``target_rate`` for SNR·Hz ``gain``.

    The rate saturates at ``gain / ln 2`` as bandwidth grows; unreachable
    targets return ``b_max``.
    """
    if target_rate <= 0.0:
        return 0.0
    if link_rate_scalar(gain, b_max) < target_rate:
        return b_max
    lo = 0.0
    hi = b_max
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if link_rate_scalar(gain, mid) >= target_rate:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-9 * b_max:
            break
    return hi


@_jit
def lend_slot(reservation, backlog, debt):
    """One small-timescale slot of backlog-proportional lending.

    Groups with zero backlog lend their reservation to a pool; repaid debt
    from the previous slot joins the pool too. The pool is split among
    backlogged groups without outstanding debt in proportion to backlog.
    A group that borrowed must repay the same amount in the next slot.

    Returns ``(allocation, new_debt)``.
    """
    g = reservation.shape[0]
    alloc = np.zeros(g)
    new_debt = np.zeros(g)
    pool = 0.0
    for i in range(g):
        own = reservation[i] - debt[i]
        if own < 0.0:
            own = 0.0
        pool += reservation[i] - own
        if backlog[i] > 0.0:
            alloc[i] = own
        else:
            pool += own
    total = 0.0
    for i in range(g):
        if backlog[i] > 0.0 and debt[i] <= 0.0:
            total += backlog[i]
    if total > 0.0 and pool > 0.0:
        for i in range(g):
            if backlog[i] > 0.0 and debt[i] <= 0.0:
                share = pool * backlog[i] / total
                alloc[i] += share
                new_debt[i] = share
    return alloc, new_debt


@_jit
def _first_missing(have, m, k0, j0, n_videos_list, n_seg, cap):
    """Buffered run length from the playhead and the first missing segment."""
    kk = k0
    jj = j0
    cnt = 0
    for _ in range(cap):
        if kk >= n_videos_list:
            return cnt, -1, -1
        if have[m, kk, jj] < 0:
            return cnt, kk, jj
        cnt += 1
        jj += 1
        if jj >= n_seg:
            jj = 0
            kk += 1
    return cnt, -1, -1


@_jit
def simulate_kernel(
    member_ptr, members, gains, res_bw, res_ops, playlist, watch,
    bitrates, costs, n_seg, seg_len, slot_len, substeps, buffer_cap,
):
    """Segment-level multicast playback over one large window.

    ``members[member_ptr[g]:member_ptr[g+1]]`` lists group ``g``'s users in
    ascending id order. ``gains`` is (slots, users) SNR·Hz, ``playlist`` is
    (groups, K) video ids, ``watch`` is (users, K) segments each user watches
    of the k-th playlist entry before swiping.
    """
    n_groups = member_ptr.shape[0] - 1
    n_users = watch.shape[0]
    n_list = playlist.shape[1]
    n_slots = gains.shape[0]
    n_ver = bitrates.shape[1]
    dt = slot_len / substeps
    eps = 1e-9

    have = np.full((n_users, n_list, n_seg), -1, dtype=np.int8)
    pos_k = np.zeros(n_users, dtype=np.int64)
    pos_j = np.zeros(n_users, dtype=np.int64)
    prog = np.zeros(n_users)
    stall = np.zeros(n_users)
    watched_v = np.zeros((n_users, n_ver), dtype=np.int64)
    delivered = np.zeros(n_users, dtype=np.int64)
    n_done = np.zeros(n_users, dtype=np.int64)
    partial = np.zeros(n_users, dtype=np.int64)

    cur_k = np.full(n_groups, -1, dtype=np.int64)
    cur_j = np.zeros(n_groups, dtype=np.int64)
    cur_v = np.zeros(n_groups, dtype=np.int64)
    remaining = np.zeros(n_groups)
    last_v = np.zeros(n_groups, dtype=np.int64)
    tokens = np.zeros(n_groups)
    for g in range(n_groups):
        tokens[g] = res_ops[g] * seg_len
    bits_sent = np.zeros(n_groups)
    ops_used = np.zeros(n_groups)
    occupied = np.zeros(n_groups)
    alloc_hist = np.zeros((n_groups, n_slots))
    cap_bits = np.zeros((n_groups, n_slots))
    debt = np.zeros(n_groups)
    backlog = np.zeros(n_groups)
    rate = np.zeros(n_groups)

    for slot in range(n_slots):
        # backlog in bits at slot start
        for g in range(n_groups):
            worst_missing = 0
            for idx in range(member_ptr[g], member_ptr[g + 1]):
                m = members[idx]
                if pos_k[m] >= n_list:
                    continue
                cnt, kk, jj = _first_missing(have, m, pos_k[m], pos_j[m], n_list, n_seg, buffer_cap)
                if kk >= 0 and buffer_cap - cnt > worst_missing:
                    worst_missing = buffer_cap - cnt
            b = remaining[g] if cur_k[g] >= 0 else 0.0
            vid = playlist[g, 0]
            backlog[g] = b + worst_missing * bitrates[vid, last_v[g]] * seg_len
        alloc, debt = lend_slot(res_bw, backlog, debt)
        for g in range(n_groups):
            alloc_hist[g, slot] = alloc[g]
            gmin = np.inf
            for idx in range(member_ptr[g], member_ptr[g + 1]):
                if gains[slot, members[idx]] < gmin:
                    gmin = gains[slot, members[idx]]
            if member_ptr[g + 1] == member_ptr[g]:
                gmin = 0.0
            rate[g] = link_rate_scalar(gmin, alloc[g])
            cap_bits[g, slot] = rate[g] * slot_len

        for _sub in range(substeps):
            # transmission
            for g in range(n_groups):
                tokens[g] += res_ops[g] * dt
                tcap = res_ops[g] * seg_len * buffer_cap
                if tokens[g] > tcap:
                    tokens[g] = tcap
                budget = rate[g] * dt
                used = 0.0
                while True:
                    if cur_k[g] >= 0:
                        # drop an in-flight segment nobody can still use
                        needed = False
                        for idx in range(member_ptr[g], member_ptr[g + 1]):
                            m = members[idx]
                            if pos_k[m] < cur_k[g] or (pos_k[m] == cur_k[g] and pos_j[m] <= cur_j[g]):
                                needed = True
                                break
                        if not needed:
                            cur_k[g] = -1
                    if cur_k[g] < 0:
                        best_cnt = buffer_cap + 1
                        sel_k = -1
                        sel_j = -1
                        for idx in range(member_ptr[g], member_ptr[g + 1]):
                            m = members[idx]
                            if pos_k[m] >= n_list:
                                continue
                            cnt, kk, jj = _first_missing(
                                have, m, pos_k[m], pos_j[m], n_list, n_seg, buffer_cap
                            )
                            if kk >= 0 and cnt < best_cnt:
                                best_cnt = cnt
                                sel_k = kk
                                sel_j = jj
                        if sel_k < 0:
                            break
                        vid = playlist[g, sel_k]
                        allowed = rate[g] * (0.5 + 0.5 * best_cnt / buffer_cap)
                        v = 0
                        for cand in range(n_ver):
                            if bitrates[vid, cand] <= allowed:
                                v = cand
                        while v > 0 and costs[vid, v] > tokens[g]:
                            v -= 1
                        tokens[g] -= costs[vid, v]
                        ops_used[g] += costs[vid, v]
                        cur_k[g] = sel_k
                        cur_j[g] = sel_j
                        cur_v[g] = v
                        last_v[g] = v
                        remaining[g] = bitrates[vid, v] * seg_len
                    avail = budget - used
                    if avail <= 0.0:
                        break
                    if remaining[g] > avail:
                        remaining[g] -= avail
                        used = budget
                        break
                    used += remaining[g]
                    remaining[g] = 0.0
                    k = cur_k[g]
                    j = cur_j[g]
                    for idx in range(member_ptr[g], member_ptr[g + 1]):
                        m = members[idx]
                        if pos_k[m] < k or (pos_k[m] == k and pos_j[m] <= j):
                            if have[m, k, j] < 0:
                                have[m, k, j] = cur_v[g]
                                delivered[m] += 1
                    cur_k[g] = -1
                bits_sent[g] += used
                if budget > 0.0:
                    occupied[g] += alloc_hist[g, slot] * dt * used / budget
            # playback
            for m in range(n_users):
                k = pos_k[m]
                if k >= n_list:
                    continue
                j = pos_j[m]
                if have[m, k, j] < 0:
                    stall[m] += dt
                    continue
                prog[m] += dt
                if prog[m] >= seg_len - eps:
                    prog[m] -= seg_len
                    if prog[m] < 0.0:
                        prog[m] = 0.0
                    watched_v[m, have[m, k, j]] += 1
                    j += 1
                    if j >= watch[m, k]:
                        pos_k[m] = k + 1
                        pos_j[m] = 0
                        n_done[m] += 1
                    else:
                        pos_j[m] = j
    for m in range(n_users):
        if pos_k[m] < n_list:
            partial[m] = pos_j[m]
    return (
        watched_v, stall, delivered, n_done, partial,
        bits_sent, ops_used, occupied, alloc_hist, cap_bits,
    )


@_jit
def water_fill_exact(d, n, budget, caps):
    """Exact solution of max sum n*log(1+b/d), sum b <= budget, 0 <= b <= caps.

    Each ``b_g(L) = clip(n_g*L - d_g, 0, cap_g)`` is piecewise linear in the
    water level ``L``; sweeping the sorted breakpoints finds the segment on
    which the budget is met and solves it linearly.
    """
    g = d.shape[0]
    out = np.zeros(g)
    if budget <= 0.0:
        return out
    total_cap = 0.0
    for i in range(g):
        total_cap += caps[i]
    if total_cap <= budget:
        for i in range(g):
            out[i] = caps[i]
        return out
    bp = np.empty(2 * g)
    for i in range(g):
        bp[2 * i] = d[i] / n[i]
        bp[2 * i + 1] = (d[i] + caps[i]) / n[i]
    bp = np.sort(bp)
    # on [bp[k], bp[k+1]] the sum is slope*L + offset over unsaturated active groups
    level = bp[2 * g - 1]
    for k in range(2 * g - 1):
        hi = bp[k + 1]
        s = 0.0
        for i in range(g):
            v = n[i] * hi - d[i]
            if v > caps[i]:
                v = caps[i]
            if v > 0.0:
                s += v
        if s >= budget:
            lo = bp[k]
            slope = 0.0
            offset = 0.0
            mid = 0.5 * (lo + hi)
            for i in range(g):
                v = n[i] * mid - d[i]
                if v >= caps[i]:
                    offset += caps[i]
                elif v > 0.0:
                    slope += n[i]
                    offset -= d[i]
            if slope > 0.0:
                level = (budget - offset) / slope
            else:
                level = lo
            break
    total = 0.0
    for i in range(g):
        v = n[i] * level - d[i]
        if v > caps[i]:
            v = caps[i]
        if v < 0.0:
            v = 0.0
        out[i] = v
        total += v
    if total > budget and total > 0.0:
        scale = budget / total
        for i in range(g):
            out[i] *= scale
    return out
