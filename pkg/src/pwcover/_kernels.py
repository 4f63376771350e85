"""Compiled kernels for the transportation network simplex.

Trees are stored as flat arrays over nodes ``0..n`` (sources, ``n`` is the
dummy root) and ``n+1..n+m`` (sinks): ``parent``, ``flow`` (flow on the edge
to the parent), ``depth`` and a doubly linked child list
(``first_child``, ``next_sib``, ``prev_sib``). Arc ``k`` of the augmented
problem is row ``k // m``, column ``k % m``; row ``n`` has zero cost.
"""

import numpy as np
from numba import njit

OK = 0
PIVOT_CAP = 1
INFEASIBLE_BASIS = 2


@njit(cache=True, nogil=True)
def _find(uf, x):
    while uf[x] != x:
        uf[x] = uf[uf[x]]
        x = uf[x]
    return x


@njit(cache=True, nogil=True)
def _union(uf, x, y):
    rx = _find(uf, x)
    ry = _find(uf, y)
    if rx == ry:
        return False
    uf[rx] = ry
    return True


@njit(cache=True, nogil=True)
def least_cost_edges(cost, a, b, order):
    """Least-cost allocation (real rows first, dummy row last) completed to a
    spanning tree with zero-flow arcs."""
    n, m = cost.shape
    n1 = n + 1
    N = n1 + m
    rem_s = a.copy()
    rem_d = b.copy()
    alive_s = np.ones(n, dtype=np.bool_)
    alive_d = np.ones(m, dtype=np.bool_)
    es = np.empty(N, dtype=np.int64)
    et = np.empty(N, dtype=np.int64)
    ef = np.empty(N)
    uf = np.arange(N)
    cnt = 0
    rows_left = n
    for idx in range(order.size):
        k = order[idx]
        s = k // m
        t = k % m
        if not (alive_s[s] and alive_d[t]):
            continue
        q = min(rem_s[s], rem_d[t])
        if _union(uf, s, n1 + t):
            es[cnt] = s
            et[cnt] = t
            ef[cnt] = q
            cnt += 1
        rem_s[s] -= q
        rem_d[t] -= q
        if rem_s[s] <= rem_d[t]:
            alive_s[s] = False
            rows_left -= 1
            if rows_left == 0:
                break
        else:
            alive_d[t] = False
    for t in range(m):
        if alive_d[t] and _union(uf, n, n1 + t):
            es[cnt] = n
            et[cnt] = t
            ef[cnt] = max(rem_d[t], 0.0)
            cnt += 1
    for t in range(m):
        if cnt == N - 1:
            break
        if _union(uf, n, n1 + t):
            es[cnt] = n
            et[cnt] = t
            ef[cnt] = 0.0
            cnt += 1
    for idx in range(order.size):
        if cnt == N - 1:
            break
        k = order[idx]
        s = k // m
        t = k % m
        if _union(uf, s, n1 + t):
            es[cnt] = s
            et[cnt] = t
            ef[cnt] = 0.0
            cnt += 1
    return es[:cnt], et[:cnt], ef[:cnt]


@njit(cache=True, nogil=True)
def _add_child(p, x, first_child, next_sib, prev_sib):
    h = first_child[p]
    next_sib[x] = h
    prev_sib[x] = -1
    if h != -1:
        prev_sib[h] = x
    first_child[p] = x


@njit(cache=True, nogil=True)
def _remove_child(p, x, first_child, next_sib, prev_sib):
    pv = prev_sib[x]
    nx = next_sib[x]
    if pv == -1:
        first_child[p] = nx
    else:
        next_sib[pv] = nx
    if nx != -1:
        prev_sib[nx] = pv
    next_sib[x] = -1
    prev_sib[x] = -1


@njit(cache=True, nogil=True)
def build_tree(n, m, es, et, ef, parent, flow, depth, first_child, next_sib, prev_sib):
    """Root the edge set at the dummy node; returns the number of reached nodes."""
    n1 = n + 1
    N = n1 + m
    deg = np.zeros(N + 1, dtype=np.int64)
    for k in range(es.size):
        deg[es[k] + 1] += 1
        deg[n1 + et[k] + 1] += 1
    for x in range(N):
        deg[x + 1] += deg[x]
    adj = np.empty(2 * es.size, dtype=np.int64)
    fill = deg[:N].copy()
    for k in range(es.size):
        s = es[k]
        t = n1 + et[k]
        adj[fill[s]] = k
        fill[s] += 1
        adj[fill[t]] = k
        fill[t] += 1
    parent[:] = -1
    first_child[:] = -1
    next_sib[:] = -1
    prev_sib[:] = -1
    seen = np.zeros(N, dtype=np.bool_)
    queue = np.empty(N, dtype=np.int64)
    queue[0] = n
    seen[n] = True
    depth[n] = 0
    flow[n] = 0.0
    head = 0
    tail = 1
    while head < tail:
        x = queue[head]
        head += 1
        for p in range(deg[x], deg[x + 1]):
            k = adj[p]
            y = es[k] if x >= n1 else n1 + et[k]
            if not seen[y]:
                seen[y] = True
                parent[y] = x
                flow[y] = ef[k]
                depth[y] = depth[x] + 1
                _add_child(x, y, first_child, next_sib, prev_sib)
                queue[tail] = y
                tail += 1
    return tail


@njit(cache=True, nogil=True)
def _preorder(start, first_child, next_sib, out, stack):
    cnt = 0
    stack[0] = start
    top = 1
    while top > 0:
        top -= 1
        x = stack[top]
        out[cnt] = x
        cnt += 1
        c = first_child[x]
        while c != -1:
            stack[top] = c
            top += 1
            c = next_sib[c]
    return cnt


@njit(cache=True, nogil=True)
def recompute_flows(n, m, a, b, parent, flow, first_child, next_sib):
    """Exact tree flows for the supplies; returns the most negative raw flow."""
    n1 = n + 1
    N = n1 + m
    net = np.empty(N)
    for i in range(n):
        net[i] = a[i]
    net[n] = max(b.sum() - 1.0, 0.0)
    for t in range(m):
        net[n1 + t] = -b[t]
    order = np.empty(N, dtype=np.int64)
    stack = np.empty(N, dtype=np.int64)
    cnt = _preorder(n, first_child, next_sib, order, stack)
    worst = 0.0
    for k in range(cnt - 1, 0, -1):
        x = order[k]
        p = parent[x]
        fx = net[x] if x < n1 else -net[x]
        if fx < 0.0:
            if fx < worst:
                worst = fx
            fx = 0.0
        flow[x] = fx
        net[p] += net[x]
    return worst


@njit(cache=True, nogil=True)
def recompute_potentials(cost, n, m, parent, depth, first_child, next_sib, u, v):
    n1 = n + 1
    N = n1 + m
    order = np.empty(N, dtype=np.int64)
    stack = np.empty(N, dtype=np.int64)
    cnt = _preorder(n, first_child, next_sib, order, stack)
    u[n] = 0.0
    depth[n] = 0
    for k in range(1, cnt):
        x = order[k]
        p = parent[x]
        depth[x] = depth[p] + 1
        if x < n1:
            t = p - n1
            u[x] = cost[x, t] - v[t]
        else:
            t = x - n1
            c = 0.0 if p == n else cost[p, t]
            v[t] = c - u[p]


@njit(cache=True, nogil=True)
def _reroot(n, path, plen, new_parent, new_flow, shift, sink_side,
            parent, flow, depth, first_child, next_sib, prev_sib, u, v, order, stack):
    """Cut the edge above ``path[plen-1]`` and hang the detached subtree from
    ``new_parent`` through ``path[0]``; potentials of the subtree move by
    ``shift`` so that the new edge has zero reduced cost."""
    n1 = n + 1
    q = path[plen - 1]
    _remove_child(parent[q], q, first_child, next_sib, prev_sib)
    for k in range(plen - 1, 0, -1):
        xk = path[k]
        below = path[k - 1]
        _remove_child(xk, below, first_child, next_sib, prev_sib)
        _add_child(below, xk, first_child, next_sib, prev_sib)
        parent[xk] = below
        flow[xk] = flow[below]
    top = path[0]
    parent[top] = new_parent
    flow[top] = new_flow
    _add_child(new_parent, top, first_child, next_sib, prev_sib)
    cnt = _preorder(top, first_child, next_sib, order, stack)
    depth[top] = depth[new_parent] + 1
    if sink_side:
        ds = -shift
        dt = shift
    else:
        ds = shift
        dt = -shift
    for k in range(cnt):
        x = order[k]
        if k > 0:
            depth[x] = depth[parent[x]] + 1
        if x < n1:
            u[x] += ds
        else:
            v[x - n1] += dt


@njit(cache=True, nogil=True)
def _arc_key(x, parent, n1, m):
    p = parent[x]
    if x < n1:
        return x * m + (p - n1)
    return p * m + (x - n1)


@njit(cache=True, nogil=True)
def _pivot(n, m, s, t, rc, parent, flow, depth, first_child, next_sib, prev_sib,
           u, v, side_j, side_i, order, stack, pivot_tol, bland):
    n1 = n + 1
    jn = n1 + t
    x = jn
    y = s
    lj = 0
    li = 0
    while depth[x] > depth[y]:
        side_j[lj] = x
        lj += 1
        x = parent[x]
    while depth[y] > depth[x]:
        side_i[li] = y
        li += 1
        y = parent[y]
    while x != y:
        side_j[lj] = x
        lj += 1
        x = parent[x]
        side_i[li] = y
        li += 1
        y = parent[y]

    # Flow enters on s -> t and returns along t -> ... -> s; tree edges
    # traversed from a sink to a source lose flow.
    theta = np.inf
    for k in range(lj):
        x = side_j[k]
        if x >= n1 and flow[x] < theta:
            theta = flow[x]
    for k in range(li):
        y = side_i[k]
        if y < n1 and flow[y] < theta:
            theta = flow[y]
    if theta < 0.0:
        theta = 0.0
    lim = theta + pivot_tol

    leave_pos = -1
    on_j = False
    if bland:
        best_key = -1
        for k in range(lj):
            x = side_j[k]
            if x >= n1 and flow[x] <= lim:
                key = _arc_key(x, parent, n1, m)
                if best_key < 0 or key < best_key:
                    best_key = key
                    leave_pos = k
                    on_j = True
        for k in range(li):
            y = side_i[k]
            if y < n1 and flow[y] <= lim:
                key = _arc_key(y, parent, n1, m)
                if best_key < 0 or key < best_key:
                    best_key = key
                    leave_pos = k
                    on_j = False
    else:
        # Last blocking arc met when walking the cycle from its apex in the
        # direction of the entering arc.
        for k in range(li - 1, -1, -1):
            y = side_i[k]
            if y < n1 and flow[y] <= lim:
                leave_pos = k
                on_j = False
        for k in range(lj):
            x = side_j[k]
            if x >= n1 and flow[x] <= lim:
                leave_pos = k
                on_j = True

    if theta > 0.0:
        for k in range(lj):
            x = side_j[k]
            if x >= n1:
                fx = flow[x] - theta
                flow[x] = fx if fx > 0.0 else 0.0
            else:
                flow[x] += theta
        for k in range(li):
            y = side_i[k]
            if y < n1:
                fy = flow[y] - theta
                flow[y] = fy if fy > 0.0 else 0.0
            else:
                flow[y] += theta

    if on_j:
        _reroot(n, side_j, leave_pos + 1, s, theta, rc, True,
                parent, flow, depth, first_child, next_sib, prev_sib, u, v, order, stack)
    else:
        _reroot(n, side_i, leave_pos + 1, jn, theta, rc, False,
                parent, flow, depth, first_child, next_sib, prev_sib, u, v, order, stack)
    return theta


@njit(cache=True, nogil=True)
def run_simplex(cost, a, b, parent, flow, depth, first_child, next_sib, prev_sib,
                u, v, rc_tol, pivot_tol, max_pivots, bland_after, block, counters):
    """Pivot to optimality. ``counters`` receives (pivots, degenerate pivots).

    Entering arcs come from block search (scan blocks of about sqrt(#arcs)
    arcs cyclically, take the most negative arc of the first block that has
    one). After ``bland_after`` consecutive degenerate pivots the lowest-index
    rule takes over for both entering and leaving arcs until a pivot makes
    progress.
    """
    n, m = cost.shape
    n1 = n + 1
    N = n1 + m
    total = n1 * m
    side_j = np.empty(N, dtype=np.int64)
    side_i = np.empty(N, dtype=np.int64)
    order = np.empty(N, dtype=np.int64)
    stack = np.empty(N, dtype=np.int64)
    if block <= 0:
        block = max(10, int(np.sqrt(total)))
    next_arc = 0
    run = 0
    piv = 0
    degen = 0
    recomputed = False
    while True:
        bland = run >= bland_after
        best = -rc_tol
        best_k = -1
        if bland:
            for k in range(total):
                s = k // m
                t = k - s * m
                c = cost[s, t] if s < n else 0.0
                r = c - u[s] - v[t]
                if r < best:
                    best = r
                    best_k = k
                    break
        else:
            k = next_arc
            cnt = 0
            for _ in range(total):
                s = k // m
                t = k - s * m
                c = cost[s, t] if s < n else 0.0
                r = c - u[s] - v[t]
                if r < best:
                    best = r
                    best_k = k
                k += 1
                if k == total:
                    k = 0
                cnt += 1
                if cnt == block:
                    if best_k >= 0:
                        break
                    cnt = 0
            next_arc = k
        if best_k < 0:
            if recomputed:
                break
            worst = recompute_flows(n, m, a, b, parent, flow, first_child, next_sib)
            if worst < -1e-9:
                counters[0] = piv
                counters[1] = degen
                return INFEASIBLE_BASIS
            recompute_potentials(cost, n, m, parent, depth, first_child, next_sib, u, v)
            recomputed = True
            continue
        recomputed = False
        if piv >= max_pivots:
            counters[0] = piv
            counters[1] = degen
            return PIVOT_CAP
        s = best_k // m
        t = best_k - s * m
        theta = _pivot(n, m, s, t, best, parent, flow, depth, first_child, next_sib,
                       prev_sib, u, v, side_j, side_i, order, stack, pivot_tol, bland)
        piv += 1
        if theta <= pivot_tol:
            degen += 1
            run += 1
        else:
            run = 0
    counters[0] = piv
    counters[1] = degen
    return OK


@njit(cache=True, nogil=True)
def route_extra_capacity(n, m, t, delta, parent, flow, depth, first_child, next_sib,
                         prev_sib, u, v, pivot_tol):
    """Raise column ``t``'s capacity by ``delta`` (fed from the dummy root)
    while keeping every tree flow nonnegative."""
    n1 = n + 1
    N = n1 + m
    path = np.empty(N, dtype=np.int64)
    order = np.empty(N, dtype=np.int64)
    stack = np.empty(N, dtype=np.int64)
    plen = 0
    x = n1 + t
    while x != n:
        path[plen] = x
        plen += 1
        x = parent[x]
    # Sending root -> column t: edges whose child is a source lose flow.
    cap = np.inf
    for k in range(plen):
        x = path[k]
        if x < n1 and flow[x] < cap:
            cap = flow[x]
    push = min(cap, delta)
    for k in range(plen):
        x = path[k]
        if x < n1:
            fx = flow[x] - push
            flow[x] = fx if fx > 0.0 else 0.0
        else:
            flow[x] += push
    if cap >= delta:
        return
    pos = -1
    for k in range(plen):
        x = path[k]
        if x < n1 and flow[x] <= pivot_tol:
            pos = k
            break
    _reroot(n, path, pos + 1, n, delta - push, -v[t], True,
            parent, flow, depth, first_child, next_sib, prev_sib, u, v, order, stack)


@njit(cache=True, nogil=True)
def sinkhorn_log(C, log_a, log_b, a, b, f, g, eps, tol, marginal_tol, max_iter, history,
                 clamp):
    """Log-domain generalized Sinkhorn sweeps, updating ``f`` and ``g`` in
    place. ``history`` receives the dual objective after each sweep. With
    ``clamp`` False the column update is the plain balanced one.

    Returns (iterations, converged, value).
    """
    n, m = C.shape
    inv = 1.0 / eps
    prev = np.inf
    value = np.nan
    colmax = np.empty(m)
    colsum = np.empty(m)
    for it in range(1, max_iter + 1):
        for i in range(n):
            mx = -np.inf
            for j in range(m):
                z = (g[j] - C[i, j]) * inv
                if z > mx:
                    mx = z
            s = 0.0
            for j in range(m):
                s += np.exp((g[j] - C[i, j]) * inv - mx)
            f[i] = eps * (log_a[i] - mx - np.log(s))
        for j in range(m):
            colmax[j] = -np.inf
            colsum[j] = 0.0
        for i in range(n):
            for j in range(m):
                z = (f[i] - C[i, j]) * inv
                if z > colmax[j]:
                    colmax[j] = z
        for i in range(n):
            for j in range(m):
                colsum[j] += np.exp((f[i] - C[i, j]) * inv - colmax[j])
        for j in range(m):
            gj = eps * (log_b[j] - colmax[j] - np.log(colsum[j]))
            g[j] = gj if (gj < 0.0 or not clamp) else 0.0
        value = 0.0
        mass = 0.0
        row_err = 0.0
        for i in range(n):
            r = 0.0
            for j in range(m):
                p = np.exp((f[i] + g[j] - C[i, j]) * inv)
                r += p
                value += p * C[i, j]
            mass += r
            e = abs(r - a[i])
            if e > row_err:
                row_err = e
        dual = 0.0
        for i in range(n):
            dual += f[i] * a[i]
        for j in range(m):
            if b[j] > 0.0:
                dual += g[j] * b[j]
        history[it - 1] = dual - eps * mass
        if abs(value - prev) < tol and row_err <= marginal_tol:
            return it, True, value
        prev = value
    return max_iter, False, value
