"""Compiled inner loops shared across modules.

Everything here is numba @njit with cache=True: plain numeric code over numpy
arrays, no Python objects. Callers own all buffers. Cell states mirror
grid_map.CellState (0 unknown, 1 free, 2 occupied).
"""
from __future__ import annotations

import numpy as np
from numba import njit

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

_INF = 1e30
# distance value reported for cells no path reaches; callers must compare
# against this, not isfinite() — the jitted code cannot use real inf safely
UNREACHED = _INF
_SQRT2 = np.sqrt(2.0)
_SQRT3 = np.sqrt(3.0)


@njit(cache=True)
def cast_rays(origin, dirs, max_range, tree_xy, tree_rad, tree_h, extent):
    """Intersect rays against tree cylinders and the world box shell.

    The box interior is free space and its boundary is a closed surface, so a
    ray always terminates: either on a trunk, on the boundary, or at max_range.
    Returns (dist, hit) per ray; dist is clipped to max_range on a miss.
    """
    n = dirs.shape[0]
    dists = np.empty(n, dtype=np.float64)
    hits = np.zeros(n, dtype=np.bool_)
    ox, oy, oz = origin[0], origin[1], origin[2]
    for i in range(n):
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        # exit distance through the box walls (origin is inside the box)
        best = _INF
        for ax in range(3):
            d = dirs[i, ax]
            o = origin[ax]
            if d > 1e-12:
                t = (extent[ax] - o) / d
            elif d < -1e-12:
                t = -o / d
            else:
                continue
            if t < best:
                best = t
        a = dx * dx + dy * dy
        for k in range(tree_xy.shape[0]):
            # param interval where the ray is inside the z-slab [0, height]
            h = tree_h[k]
            if dz > 1e-12:
                tz0 = -oz / dz
                tz1 = (h - oz) / dz
            elif dz < -1e-12:
                tz0 = (h - oz) / dz
                tz1 = -oz / dz
            else:
                if oz < 0.0 or oz > h:
                    continue
                tz0 = -_INF
                tz1 = _INF
            # param interval inside the infinite cylinder
            px = ox - tree_xy[k, 0]
            py = oy - tree_xy[k, 1]
            r = tree_rad[k]
            if a > 1e-16:
                b = 2.0 * (px * dx + py * dy)
                c = px * px + py * py - r * r
                disc = b * b - 4.0 * a * c
                if disc < 0.0:
                    continue
                sq = np.sqrt(disc)
                tc0 = (-b - sq) / (2.0 * a)
                tc1 = (-b + sq) / (2.0 * a)
            else:
                if px * px + py * py > r * r:
                    continue
                tc0 = -_INF
                tc1 = _INF
            lo = tc0 if tc0 > tz0 else tz0
            hi = tc1 if tc1 < tz1 else tz1
            if lo > hi or hi <= 0.0:
                continue
            t = lo if lo > 0.0 else 0.0
            if t < best:
                best = t
        if best <= max_range:
            dists[i] = best
            hits[i] = True
        else:
            dists[i] = max_range
            hits[i] = False
    return dists, hits


@njit(cache=True)
def integrate_rays(cells, res, ox, oy, oz, endpoints, hits,
                   changed_idx, changed_state):
    """Carve ray corridors into the grid (amanatides-woo cell walk).

    Interior cells along origin->endpoint upgrade Unknown->Free; the endpoint
    cell becomes Occupied when the ray hit, and is left untouched otherwise.
    Cells outside the grid are skipped (the walk stops at the grid boundary,
    and an out-of-grid endpoint is never marked), so grids smaller than the
    sensed world — slab-bounded sub-grids — integrate correctly. Occupied
    never downgrades. Changed cells append (flat idx, new state) to the
    caller's buffers. Returns (change count, free delta, occupied delta),
    or (-1, 0, 0) on buffer overflow.
    """
    nx, ny, nz = cells.shape
    n_changed = 0
    d_free = 0
    d_occ = 0
    # origin cell, clamped into the grid
    oi = int(np.floor(ox / res))
    oj = int(np.floor(oy / res))
    ok = int(np.floor(oz / res))
    if oi < 0:
        oi = 0
    if oi >= nx:
        oi = nx - 1
    if oj < 0:
        oj = 0
    if oj >= ny:
        oj = ny - 1
    if ok < 0:
        ok = 0
    if ok >= nz:
        ok = nz - 1
    guard = 2 * (nx + ny + nz) + 6
    for ray in range(endpoints.shape[0]):
        ex = endpoints[ray, 0]
        ey = endpoints[ray, 1]
        ez = endpoints[ray, 2]
        ei = int(np.floor(ex / res))
        ej = int(np.floor(ey / res))
        ek = int(np.floor(ez / res))
        end_in = 0 <= ei < nx and 0 <= ej < ny and 0 <= ek < nz
        dx = ex - ox
        dy = ey - oy
        dz = ez - oz
        ix, iy, iz = oi, oj, ok
        step_x = 1 if dx > 0.0 else (-1 if dx < 0.0 else 0)
        step_y = 1 if dy > 0.0 else (-1 if dy < 0.0 else 0)
        step_z = 1 if dz > 0.0 else (-1 if dz < 0.0 else 0)
        if step_x > 0:
            tmax_x = ((ix + 1) * res - ox) / dx
            tdel_x = res / dx
        elif step_x < 0:
            tmax_x = (ix * res - ox) / dx
            tdel_x = -res / dx
        else:
            tmax_x = _INF
            tdel_x = _INF
        if step_y > 0:
            tmax_y = ((iy + 1) * res - oy) / dy
            tdel_y = res / dy
        elif step_y < 0:
            tmax_y = (iy * res - oy) / dy
            tdel_y = -res / dy
        else:
            tmax_y = _INF
            tdel_y = _INF
        if step_z > 0:
            tmax_z = ((iz + 1) * res - oz) / dz
            tdel_z = res / dz
        elif step_z < 0:
            tmax_z = (iz * res - oz) / dz
            tdel_z = -res / dz
        else:
            tmax_z = _INF
            tdel_z = _INF
        steps = 0
        while not (end_in and ix == ei and iy == ej and iz == ek):
            if cells[ix, iy, iz] == UNKNOWN:
                cells[ix, iy, iz] = FREE
                if n_changed >= changed_idx.shape[0]:
                    return -1, 0, 0
                changed_idx[n_changed] = (ix * ny + iy) * nz + iz
                changed_state[n_changed] = FREE
                n_changed += 1
                d_free += 1
            if tmax_x <= tmax_y and tmax_x <= tmax_z:
                ix += step_x
                tmax_x += tdel_x
            elif tmax_y <= tmax_z:
                iy += step_y
                tmax_y += tdel_y
            else:
                iz += step_z
                tmax_z += tdel_z
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
                break
            steps += 1
            if steps > guard:
                break
        if hits[ray] and end_in and cells[ei, ej, ek] != OCCUPIED:
            if cells[ei, ej, ek] == FREE:
                d_free -= 1
            cells[ei, ej, ek] = OCCUPIED
            d_occ += 1
            if n_changed >= changed_idx.shape[0]:
                return -1, 0, 0
            changed_idx[n_changed] = (ei * ny + ej) * nz + ek
            changed_state[n_changed] = OCCUPIED
            n_changed += 1
    return n_changed, d_free, d_occ


@njit(cache=True)
def line_of_sight(passable, ai, aj, ak, bi, bj, bk):
    """True iff every cell traversed between the two cell centers is passable.

    Walks the segment with the same cell traversal as integrate_rays; exact
    boundary ties advance x before y before z, so the checked route is
    deterministic. Endpoints are included in the check.
    """
    nx, ny, nz = passable.shape
    if passable[ai, aj, ak] == 0 or passable[bi, bj, bk] == 0:
        return False
    ox = (ai + 0.5)
    oy = (aj + 0.5)
    oz = (ak + 0.5)
    dx = (bi - ai)
    dy = (bj - aj)
    dz = (bk - ak)
    ix, iy, iz = ai, aj, ak
    step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    step_z = 1 if dz > 0 else (-1 if dz < 0 else 0)
    tmax_x = ((ix + (1 if step_x > 0 else 0)) - ox) / dx if step_x != 0 else _INF
    tdel_x = abs(1.0 / dx) if step_x != 0 else _INF
    tmax_y = ((iy + (1 if step_y > 0 else 0)) - oy) / dy if step_y != 0 else _INF
    tdel_y = abs(1.0 / dy) if step_y != 0 else _INF
    tmax_z = ((iz + (1 if step_z > 0 else 0)) - oz) / dz if step_z != 0 else _INF
    tdel_z = abs(1.0 / dz) if step_z != 0 else _INF
    guard = 2 * (nx + ny + nz) + 6
    steps = 0
    while not (ix == bi and iy == bj and iz == bk):
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            ix += step_x
            tmax_x += tdel_x
        elif tmax_y <= tmax_z:
            iy += step_y
            tmax_y += tdel_y
        else:
            iz += step_z
            tmax_z += tdel_z
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return False
        if passable[ix, iy, iz] == 0:
            return False
        steps += 1
        if steps > guard:
            return False
    return True


@njit(cache=True)
def dijkstra_grid(passable, si, sj):
    """Single-source shortest path lengths over the 8-connected 2D mask.

    Edge costs 1 / sqrt(2) in cell units (caller multiplies by resolution).
    Unreachable cells keep +inf. Binary heap over parallel arrays.
    """
    n, m = passable.shape
    dist = np.full((n, m), _INF, dtype=np.float64)
    if si < 0 or si >= n or sj < 0 or sj >= m or passable[si, sj] == 0:
        return dist
    cap = 16 * n * m + 64
    heap_d = np.empty(cap, dtype=np.float64)
    heap_i = np.empty(cap, dtype=np.int64)
    size = 0
    dist[si, sj] = 0.0
    heap_d[0] = 0.0
    heap_i[0] = si * m + sj
    size = 1
    while size > 0:
        top_d = heap_d[0]
        top_i = heap_i[0]
        size -= 1
        heap_d[0] = heap_d[size]
        heap_i[0] = heap_i[size]
        pos = 0
        while True:
            lc = 2 * pos + 1
            rc = lc + 1
            small = pos
            if lc < size and heap_d[lc] < heap_d[small]:
                small = lc
            if rc < size and heap_d[rc] < heap_d[small]:
                small = rc
            if small == pos:
                break
            heap_d[pos], heap_d[small] = heap_d[small], heap_d[pos]
            heap_i[pos], heap_i[small] = heap_i[small], heap_i[pos]
            pos = small
        ci = top_i // m
        cj = top_i % m
        if top_d > dist[ci, cj]:
            continue
        for di in range(-1, 2):
            for dj in range(-1, 2):
                if di == 0 and dj == 0:
                    continue
                ni = ci + di
                nj = cj + dj
                if ni < 0 or ni >= n or nj < 0 or nj >= m:
                    continue
                if passable[ni, nj] == 0:
                    continue
                w = 1.0 if di == 0 or dj == 0 else _SQRT2
                nd = top_d + w
                if nd < dist[ni, nj]:
                    dist[ni, nj] = nd
                    if size >= cap:
                        return dist  # heap exhausted; should not happen
                    heap_d[size] = nd
                    heap_i[size] = ni * m + nj
                    pos = size
                    size += 1
                    while pos > 0:
                        par = (pos - 1) // 2
                        if heap_d[par] <= heap_d[pos]:
                            break
                        heap_d[pos], heap_d[par] = heap_d[par], heap_d[pos]
                        heap_i[pos], heap_i[par] = heap_i[par], heap_i[pos]
                        pos = par
    return dist


@njit(cache=True)
def astar_grid(passable, si, sj, sk, gi, gj, gk):
    """A* over the 26-connected 3D mask with Euclidean edge costs (cell units).

    Heap orders by (f, flat index), so equal-cost frontiers expand in
    lexicographic cell order and the returned path is unique. Returns the
    flat-index path start->goal, or an empty array when unreachable.
    """
    nx, ny, nz = passable.shape
    empty = np.empty(0, dtype=np.int64)
    if passable[si, sj, sk] == 0 or passable[gi, gj, gk] == 0:
        return empty
    total = nx * ny * nz
    g = np.full(total, _INF, dtype=np.float64)
    parent = np.full(total, -1, dtype=np.int64)
    closed = np.zeros(total, dtype=np.uint8)
    cap = 32 * total + 64
    heap_f = np.empty(cap, dtype=np.float64)
    heap_i = np.empty(cap, dtype=np.int64)
    size = 0
    start = (si * ny + sj) * nz + sk
    goal = (gi * ny + gj) * nz + gk

    dx0 = float(si - gi)
    dy0 = float(sj - gj)
    dz0 = float(sk - gk)
    g[start] = 0.0
    heap_f[0] = np.sqrt(dx0 * dx0 + dy0 * dy0 + dz0 * dz0)
    heap_i[0] = start
    size = 1
    while size > 0:
        top_f = heap_f[0]
        top_i = heap_i[0]
        # pop: prefer smaller flat index among equal f (heap property keeps
        # the min-f at root; the tie rule is enforced by the comparisons below)
        size -= 1
        heap_f[0] = heap_f[size]
        heap_i[0] = heap_i[size]
        pos = 0
        while True:
            lc = 2 * pos + 1
            rc = lc + 1
            small = pos
            if lc < size and (heap_f[lc] < heap_f[small]
                              or (heap_f[lc] == heap_f[small] and heap_i[lc] < heap_i[small])):
                small = lc
            if rc < size and (heap_f[rc] < heap_f[small]
                              or (heap_f[rc] == heap_f[small] and heap_i[rc] < heap_i[small])):
                small = rc
            if small == pos:
                break
            heap_f[pos], heap_f[small] = heap_f[small], heap_f[pos]
            heap_i[pos], heap_i[small] = heap_i[small], heap_i[pos]
            pos = small
        if closed[top_i] == 1:
            continue
        closed[top_i] = 1
        if top_i == goal:
            break
        ci = top_i // (ny * nz)
        cj = (top_i // nz) % ny
        ck = top_i % nz
        for di in range(-1, 2):
            ni = ci + di
            if ni < 0 or ni >= nx:
                continue
            for dj in range(-1, 2):
                nj = cj + dj
                if nj < 0 or nj >= ny:
                    continue
                for dk in range(-1, 2):
                    if di == 0 and dj == 0 and dk == 0:
                        continue
                    nk = ck + dk
                    if nk < 0 or nk >= nz:
                        continue
                    if passable[ni, nj, nk] == 0:
                        continue
                    nidx = (ni * ny + nj) * nz + nk
                    if closed[nidx] == 1:
                        continue
                    nd = abs(di) + abs(dj) + abs(dk)
                    w = 1.0 if nd == 1 else (_SQRT2 if nd == 2 else _SQRT3)
                    ng = g[top_i] + w
                    if ng < g[nidx]:
                        g[nidx] = ng
                        parent[nidx] = top_i
                        hx = float(ni - gi)
                        hy = float(nj - gj)
                        hz = float(nk - gk)
                        f = ng + np.sqrt(hx * hx + hy * hy + hz * hz)
                        if size >= cap:
                            return empty
                        heap_f[size] = f
                        heap_i[size] = nidx
                        pos = size
                        size += 1
                        while pos > 0:
                            par = (pos - 1) // 2
                            if heap_f[par] < heap_f[pos] or (
                                    heap_f[par] == heap_f[pos] and heap_i[par] < heap_i[pos]):
                                break
                            heap_f[pos], heap_f[par] = heap_f[par], heap_f[pos]
                            heap_i[pos], heap_i[par] = heap_i[par], heap_i[pos]
                            pos = par
    if closed[goal] == 0:
        return empty
    # walk parents back from the goal
    length = 1
    cur = goal
    while cur != start:
        cur = parent[cur]
        length += 1
    path = np.empty(length, dtype=np.int64)
    cur = goal
    for t in range(length - 1, -1, -1):
        path[t] = cur
        cur = parent[cur]
    return path


@njit(cache=True)
def count_visible_cells(cells, res, px, py, pz, yaw, targets,
                        max_range, half_hfov, half_vfov):
    """Count target cells visible from a camera pose.

    A target counts when it lies inside the range and FOV cone and the grid
    walk from the camera cell to the target cell crosses only Free cells
    (the target cell itself is exempt). `targets` is an (N, 3) int array.
    """
    nx, ny, nz = cells.shape
    pi = int(np.floor(px / res))
    pj = int(np.floor(py / res))
    pk = int(np.floor(pz / res))
    if pi < 0 or pi >= nx or pj < 0 or pj >= ny or pk < 0 or pk >= nz:
        return 0
    count = 0
    guard = 2 * (nx + ny + nz) + 6
    cos_y = np.cos(yaw)
    sin_y = np.sin(yaw)
    for t in range(targets.shape[0]):
        ti = targets[t, 0]
        tj = targets[t, 1]
        tk = targets[t, 2]
        tx = (ti + 0.5) * res
        ty = (tj + 0.5) * res
        tz = (tk + 0.5) * res
        dx = tx - px
        dy = ty - py
        dz = tz - pz
        d = np.sqrt(dx * dx + dy * dy + dz * dz)
        if d > max_range or d < 1e-9:
            continue
        # horizontal angle off the camera axis
        fwd = dx * cos_y + dy * sin_y
        lat = -dx * sin_y + dy * cos_y
        if fwd <= 0.0:
            continue
        if abs(np.arctan2(lat, fwd)) > half_hfov:
            continue
        horiz = np.sqrt(dx * dx + dy * dy)
        if abs(np.arctan2(dz, horiz)) > half_vfov:
            continue
        # grid walk: interior cells must be Free
        ix, iy, iz = pi, pj, pk
        step_x = 1 if dx > 0.0 else (-1 if dx < 0.0 else 0)
        step_y = 1 if dy > 0.0 else (-1 if dy < 0.0 else 0)
        step_z = 1 if dz > 0.0 else (-1 if dz < 0.0 else 0)
        tmax_x = (((ix + (1 if step_x > 0 else 0)) * res) - px) / dx if step_x != 0 else _INF
        tdel_x = abs(res / dx) if step_x != 0 else _INF
        tmax_y = (((iy + (1 if step_y > 0 else 0)) * res) - py) / dy if step_y != 0 else _INF
        tdel_y = abs(res / dy) if step_y != 0 else _INF
        tmax_z = (((iz + (1 if step_z > 0 else 0)) * res) - pz) / dz if step_z != 0 else _INF
        tdel_z = abs(res / dz) if step_z != 0 else _INF
        visible = True
        steps = 0
        while not (ix == ti and iy == tj and iz == tk):
            if cells[ix, iy, iz] != FREE:
                visible = False
                break
            if tmax_x <= tmax_y and tmax_x <= tmax_z:
                ix += step_x
                tmax_x += tdel_x
            elif tmax_y <= tmax_z:
                iy += step_y
                tmax_y += tdel_y
            else:
                iz += step_z
                tmax_z += tdel_z
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
                visible = False
                break
            steps += 1
            if steps > guard:
                visible = False
                break
        if visible:
            count += 1
    return count
