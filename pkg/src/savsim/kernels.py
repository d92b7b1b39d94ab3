"""Hot numeric kernels.

Every kernel here is written in the numba-compatible subset of Python and is
compiled with ``@jit`` when numba is enabled (see ``_accel``).  With
``SAVSIM_DISABLE_NUMBA=1`` the same functions run as plain Python, except the
all-pairs skim which switches to a vectorised Floyd-Warshall.

Path costs are lexicographic (travel time, then integer metres), packed into a
single int64 as ``time * DIST_SCALE + metres`` so that ties are broken the
same way by every routine.
"""
import numpy as np

from ._accel import USE_NUMBA, jit

DIST_SCALE = 1 << 24  # metres; paths longer than ~16,000 km are not supported
INF = np.int64(1 << 60)


# --------------------------------------------------------------------------
# binary heap on parallel arrays (keys int64, payload int64)

@jit
def _heap_push(keys, vals, size, key, val):
    i = size
    keys[i] = key
    vals[i] = val
    while i > 0:
        parent = (i - 1) >> 1
        if keys[parent] > keys[i] or (keys[parent] == keys[i] and vals[parent] > vals[i]):
            keys[parent], keys[i] = keys[i], keys[parent]
            vals[parent], vals[i] = vals[i], vals[parent]
            i = parent
        else:
            break
    return size + 1


@jit
def _heap_pop(keys, vals, size):
    key = keys[0]
    val = vals[0]
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        smallest = i
        if left < size and (keys[left] < keys[smallest]
                            or (keys[left] == keys[smallest] and vals[left] < vals[smallest])):
            smallest = left
        if right < size and (keys[right] < keys[smallest]
                             or (keys[right] == keys[smallest] and vals[right] < vals[smallest])):
            smallest = right
        if smallest == i:
            break
        keys[smallest], keys[i] = keys[i], keys[smallest]
        vals[smallest], vals[i] = vals[i], vals[smallest]
        i = smallest
    return key, val, size


@jit
def _kheap_push(keys, vals, size, key, val):
    # key-only ordering; for searches whose result ignores tie order
    i = size
    while i > 0:
        parent = (i - 1) >> 1
        if keys[parent] <= key:
            break
        keys[i] = keys[parent]
        vals[i] = vals[parent]
        i = parent
    keys[i] = key
    vals[i] = val
    return size + 1


@jit
def _kheap_pop(keys, vals, size):
    key = keys[0]
    val = vals[0]
    size -= 1
    lk = keys[size]
    lv = vals[size]
    i = 0
    while True:
        c = 2 * i + 1
        if c >= size:
            break
        if c + 1 < size and keys[c + 1] < keys[c]:
            c += 1
        if keys[c] >= lk:
            break
        keys[i] = keys[c]
        vals[i] = vals[c]
        i = c
    keys[i] = lk
    vals[i] = lv
    return key, val, size


# --------------------------------------------------------------------------
# routing

@jit
def td_dijkstra(out_ptr, out_links, link_to, link_len_m, tt_bins, bin_width,
                src_node, dst_node, t0):
    """Earliest-arrival search from ``src_node`` departing at ``t0``.

    ``tt_bins[link, b]`` is the integer traversal time of a link entered in
    time bin ``b``; entries past the last bin use the last bin.  Returns the
    predecessor-link array, the arrival time at ``dst_node`` (-1 when
    unreachable) and the path length in metres.
    """
    n_nodes = out_ptr.shape[0] - 1
    n_bins = tt_bins.shape[1]
    best = np.full(n_nodes, INF, dtype=np.int64)
    pred = np.full(n_nodes, -1, dtype=np.int64)
    done = np.zeros(n_nodes, dtype=np.bool_)
    cap = out_links.shape[0] + n_nodes + 1
    hkeys = np.empty(cap, dtype=np.int64)
    hvals = np.empty(cap, dtype=np.int64)
    best[src_node] = t0 * DIST_SCALE
    size = _heap_push(hkeys, hvals, 0, best[src_node], src_node)
    while size > 0:
        key, u, size = _heap_pop(hkeys, hvals, size)
        if done[u]:
            continue
        done[u] = True
        if u == dst_node:
            break
        t_u = key // DIST_SCALE
        d_u = key % DIST_SCALE
        b = t_u // bin_width
        if b >= n_bins:
            b = n_bins - 1
        for e in range(out_ptr[u], out_ptr[u + 1]):
            link = out_links[e]
            v = link_to[link]
            if done[v]:
                continue
            nk = (t_u + tt_bins[link, b]) * DIST_SCALE + d_u + link_len_m[link]
            if nk < best[v]:
                best[v] = nk
                pred[v] = link
                size = _heap_push(hkeys, hvals, size, nk, v)
    if best[dst_node] >= INF:
        return pred, np.int64(-1), np.int64(-1)
    return pred, best[dst_node] // DIST_SCALE, best[dst_node] % DIST_SCALE


@jit
def _all_pairs_dijkstra(out_ptr, out_links, link_to, link_len_m, link_cost):
    n_nodes = out_ptr.shape[0] - 1
    n_arcs = out_links.shape[0]
    # arcs in CSR order: head node and packed weight
    head = np.empty(n_arcs, dtype=np.int64)
    w = np.empty(n_arcs, dtype=np.int64)
    for e in range(n_arcs):
        link = out_links[e]
        head[e] = link_to[link]
        w[e] = link_cost[link] * DIST_SCALE + link_len_m[link]
    times = np.full((n_nodes, n_nodes), INF, dtype=np.int64)
    dists = np.full((n_nodes, n_nodes), INF, dtype=np.int64)
    cap = n_arcs + n_nodes + 1
    hkeys = np.empty(cap, dtype=np.int64)
    hvals = np.empty(cap, dtype=np.int64)
    best = np.empty(n_nodes, dtype=np.int64)
    done = np.empty(n_nodes, dtype=np.bool_)
    for s in range(n_nodes):
        best[:] = INF
        done[:] = False
        best[s] = 0
        # final keys do not depend on pop order among ties
        size = _kheap_push(hkeys, hvals, 0, np.int64(0), s)
        while size > 0:
            key, u, size = _kheap_pop(hkeys, hvals, size)
            if done[u]:
                continue
            done[u] = True
            for e in range(out_ptr[u], out_ptr[u + 1]):
                v = head[e]
                if done[v]:
                    continue
                nk = key + w[e]
                if nk < best[v]:
                    best[v] = nk
                    size = _kheap_push(hkeys, hvals, size, nk, v)
        for v in range(n_nodes):
            if best[v] < INF:
                times[s, v] = best[v] // DIST_SCALE
                dists[s, v] = best[v] % DIST_SCALE
    return times, dists


def _all_pairs_floyd(out_ptr, out_links, link_to, link_len_m, link_cost):
    n_nodes = out_ptr.shape[0] - 1
    big = np.int64(1 << 61)
    key = np.full((n_nodes, n_nodes), big, dtype=np.int64)
    link_from = np.repeat(np.arange(n_nodes), np.diff(out_ptr))
    link_ids = out_links
    arc = link_cost[link_ids] * DIST_SCALE + link_len_m[link_ids]
    # parallel links: keep the cheapest
    np.minimum.at(key, (link_from, link_to[link_ids]), arc)
    np.fill_diagonal(key, 0)
    for k in range(n_nodes):
        np.minimum(key, key[:, k, None] + key[None, k, :], out=key)
    reach = key < big
    times = np.where(reach, key // DIST_SCALE, INF)
    dists = np.where(reach, key % DIST_SCALE, INF)
    return times, dists


def all_pairs(out_ptr, out_links, link_to, link_len_m, link_cost):
    """Node-to-node (time, metres) matrices for static integer link costs.

    Unreachable pairs hold ``INF`` in both matrices.
    """
    if USE_NUMBA:
        return _all_pairs_dijkstra(out_ptr, out_links, link_to, link_len_m, link_cost)
    return _all_pairs_floyd(out_ptr, out_links, link_to, link_len_m, link_cost)


# --------------------------------------------------------------------------
# insertion heuristic

@jit
def _leg(times, link_from, link_to, link_cost, a, b):
    if a == b:
        return np.int64(0)
    t = times[link_to[a], link_from[b]]
    if t >= INF:
        return INF
    return t + link_cost[b]


@jit
def insertion_scan(times, link_from, link_to, link_cost,
                   candidate, capacity, start_link, start_time, start_occ,
                   n_stops, stop_link, stop_arr, stop_occ,
                   n_req, rq_pick, rq_drop, rq_latest, rq_pick_time, rq_max_ride,
                   stop_dur, pick_link, drop_link, t_sub, max_wait, max_ride,
                   allow_extended, ridesharing):
    """Cheapest feasible (vehicle, pickup index, dropoff index) insertion.

    Candidates are ranked by (tier, added work time); tier 0 keeps the new
    ride within ``max_ride``, tier 1 is the extended-detour fallback.  Ties go
    to the first insertion in scan order (vehicle, then i, then j).

    Returns ``(vehicle, i, j, dwork, tier, pickup_time, dropoff_time, shift_mid,
    shift_after)`` with ``vehicle == -1`` when nothing is feasible.  The shifts
    are the delays applied to stops between the new pickup and dropoff and to
    stops after the new dropoff.
    """
    best_v = -1
    best_i = -1
    best_j = -1
    best_w = INF
    best_tier = 2
    best_pick = -1
    best_drop = -1
    best_d1 = 0
    best_d2 = 0
    n_veh = candidate.shape[0]
    for v in range(n_veh):
        if not candidate[v]:
            continue
        n = n_stops[v]
        if not ridesharing and (n > 0 or start_occ[v] > 0):
            continue
        cap = capacity[v]
        for i in range(n + 1):
            if i == 0:
                prev_link = start_link[v]
                prev_dep = start_time[v]
                occ_p = start_occ[v]
            else:
                prev_link = stop_link[v, i - 1]
                prev_dep = stop_arr[v, i - 1] + stop_dur
                occ_p = stop_occ[v, i - 1]
            if occ_p + 1 > cap:
                continue
            t_prev_p = _leg(times, link_from, link_to, link_cost, prev_link, pick_link)
            if t_prev_p >= INF:
                continue
            pick_time = prev_dep + t_prev_p + stop_dur
            if pick_time - t_sub > max_wait:
                continue
            if i < n:
                base_prev_next = _leg(times, link_from, link_to, link_cost, prev_link, stop_link[v, i])
            else:
                base_prev_next = 0
            t_pd = _leg(times, link_from, link_to, link_cost, pick_link, drop_link)
            if t_pd >= INF:
                continue
            delta1 = 0
            cap_ok = True
            for j in range(i, n + 1):
                if j == i:
                    arr_d = pick_time + t_pd
                    if i < n:
                        t_dn = _leg(times, link_from, link_to, link_cost, drop_link, stop_link[v, i])
                        if t_dn >= INF:
                            continue
                        delta2 = t_prev_p + stop_dur + t_pd + stop_dur + t_dn - base_prev_next
                        dwork = delta2
                    else:
                        delta2 = 0
                        dwork = t_prev_p + stop_dur + t_pd + stop_dur
                else:
                    if j == i + 1:
                        t_pn = _leg(times, link_from, link_to, link_cost, pick_link, stop_link[v, i])
                        if t_pn >= INF:
                            break
                        delta1 = t_prev_p + stop_dur + t_pn - base_prev_next
                    # the new passenger rides through stop j-1
                    if stop_occ[v, j - 1] + 1 > cap:
                        cap_ok = False
                    if not cap_ok:
                        break
                    lk = stop_link[v, j - 1]
                    t_ld = _leg(times, link_from, link_to, link_cost, lk, drop_link)
                    if t_ld >= INF:
                        continue
                    arr_d = stop_arr[v, j - 1] + delta1 + stop_dur + t_ld
                    if j < n:
                        t_dn = _leg(times, link_from, link_to, link_cost, drop_link, stop_link[v, j])
                        if t_dn >= INF:
                            continue
                        t_ln = _leg(times, link_from, link_to, link_cost, lk, stop_link[v, j])
                        delta2 = delta1 + t_ld + stop_dur + t_dn - t_ln
                        dwork = delta2
                    else:
                        delta2 = 0
                        dwork = delta1 + t_ld + stop_dur
                ride = arr_d - pick_time
                if ride <= max_ride:
                    tier = 0
                elif allow_extended:
                    tier = 1
                else:
                    continue
                if tier > best_tier or (tier == best_tier and dwork >= best_w):
                    continue
                # already scheduled requests of this vehicle
                ok = True
                for r in range(n_req[v]):
                    p = rq_pick[v, r]
                    d = rq_drop[v, r]
                    if p >= 0:
                        if p < i:
                            dp = 0
                        elif p < j:
                            dp = delta1
                        else:
                            dp = delta2
                        new_pick = stop_arr[v, p] + stop_dur + dp
                        if dp > 0 and new_pick > rq_latest[v, r]:
                            ok = False
                            break
                    else:
                        dp = 0
                        new_pick = rq_pick_time[v, r]
                    if d < i:
                        dd = 0
                    elif d < j:
                        dd = delta1
                    else:
                        dd = delta2
                    if rq_max_ride[v, r] >= 0 and dd > dp:
                        if stop_arr[v, d] + dd - new_pick > rq_max_ride[v, r]:
                            ok = False
                            break
                if not ok:
                    continue
                best_v = v
                best_i = i
                best_j = j
                best_w = dwork
                best_tier = tier
                best_pick = pick_time
                best_drop = arr_d
                best_d1 = delta1 if j > i else 0
                best_d2 = delta2
    return best_v, best_i, best_j, best_w, best_tier, best_pick, best_drop, best_d1, best_d2


# --------------------------------------------------------------------------
# transportation problem (min-cost flow, successive shortest paths)

@jit
def transport_min_cost_flow(supply, demand, cost):
    """Ship ``min(sum(supply), sum(demand))`` units at minimum total cost.

    ``cost`` is a nonnegative integer (n_supply x n_demand) matrix; arcs are
    uncapacitated.  Returns the integral flow matrix and its total cost.
    """
    ns = supply.shape[0]
    nd = demand.shape[0]
    flow = np.zeros((ns, nd), dtype=np.int64)
    rem_s = supply.astype(np.int64).copy()
    rem_d = demand.astype(np.int64).copy()
    # node ids: 0 source, 1..ns supplies, ns+1..ns+nd demands, ns+nd+1 sink
    n = ns + nd + 2
    sink = n - 1
    dist = np.empty(n, dtype=np.int64)
    prev = np.empty(n, dtype=np.int64)
    inq = np.empty(n, dtype=np.bool_)
    queue = np.empty(n + 1, dtype=np.int64)  # circular; inq[] bounds occupancy
    total = np.int64(0)
    while True:
        dist[:] = INF
        prev[:] = -1
        inq[:] = False
        dist[0] = 0
        qn = n + 1
        head = 0
        tail = 1
        queue[0] = 0
        inq[0] = True
        while head != tail:
            u = queue[head]
            head = (head + 1) % qn
            inq[u] = False
            du = dist[u]
            if u == 0:
                for i in range(ns):
                    if rem_s[i] > 0 and du < dist[1 + i]:
                        dist[1 + i] = du
                        prev[1 + i] = 0
                        if not inq[1 + i]:
                            queue[tail] = 1 + i
                            tail = (tail + 1) % qn
                            inq[1 + i] = True
            elif u <= ns:
                i = u - 1
                for j in range(nd):
                    w = du + cost[i, j]
                    v = ns + 1 + j
                    if w < dist[v]:
                        dist[v] = w
                        prev[v] = u
                        if not inq[v]:
                            queue[tail] = v
                            tail = (tail + 1) % qn
                            inq[v] = True
            elif u < sink:
                j = u - ns - 1
                if rem_d[j] > 0 and du < dist[sink]:
                    dist[sink] = du
                    prev[sink] = u
                for i in range(ns):
                    if flow[i, j] > 0:
                        w = du - cost[i, j]
                        v = 1 + i
                        if w < dist[v]:
                            dist[v] = w
                            prev[v] = u
                            if not inq[v]:
                                queue[tail] = v
                                tail = (tail + 1) % qn
                                inq[v] = True
        if dist[sink] >= INF:
            break
        # bottleneck along the path
        j_last = prev[sink] - ns - 1
        amount = rem_d[j_last]
        v = prev[sink]
        while v != 0:
            u = prev[v]
            if u == 0:
                if rem_s[v - 1] < amount:
                    amount = rem_s[v - 1]
            elif u > ns:
                # reverse arc demand u -> supply v
                if flow[v - 1, u - ns - 1] < amount:
                    amount = flow[v - 1, u - ns - 1]
            v = u
        rem_d[j_last] -= amount
        v = prev[sink]
        while v != 0:
            u = prev[v]
            if u == 0:
                rem_s[v - 1] -= amount
            elif u <= ns:
                flow[u - 1, v - ns - 1] += amount
                total += amount * cost[u - 1, v - ns - 1]
            else:
                flow[v - 1, u - ns - 1] -= amount
                total -= amount * cost[v - 1, u - ns - 1]
            v = u
    return flow, total
