"""Numba kernels for ray marching and ambient occlusion.

All kernels work in voxel space: positions are divided by the grid
spacing up front, while the ray parameter t stays in world units (the
direction passed in is the world-unit direction rescaled per axis).
Compiled once per process and cached on disk.
"""
import numpy as np
from numba import njit

_K1 = np.uint64(0x9E3779B97F4A7C15)
_K2 = np.uint64(0xBF58476D1CE4E5B9)
_K3 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, inline="always")
def _mix64(x):
    x = (x ^ (x >> np.uint64(30))) * _K2
    x = (x ^ (x >> np.uint64(27))) * _K3
    return x ^ (x >> np.uint64(31))


@njit(cache=True, inline="always")
def _hash_u01(seed, a, b, c):
    key = (np.uint64(seed) * _K1 + np.uint64(a) * _K2
           + np.uint64(b) * _K3 + np.uint64(c) * _K1)
    return float(_mix64(key) >> np.uint64(11)) * _INV53


@njit(cache=True, inline="always")
def _trilin(data, nx, ny, nz, x, y, z):
    if x < 0.0:
        x = 0.0
    elif x > nx - 1.0:
        x = nx - 1.0
    if y < 0.0:
        y = 0.0
    elif y > ny - 1.0:
        y = ny - 1.0
    if z < 0.0:
        z = 0.0
    elif z > nz - 1.0:
        z = nz - 1.0
    x0 = int(x)
    y0 = int(y)
    z0 = int(z)
    if x0 > nx - 2:
        x0 = nx - 2 if nx > 1 else 0
    if y0 > ny - 2:
        y0 = ny - 2 if ny > 1 else 0
    if z0 > nz - 2:
        z0 = nz - 2 if nz > 1 else 0
    x1 = x0 + 1 if nx > 1 else x0
    y1 = y0 + 1 if ny > 1 else y0
    z1 = z0 + 1 if nz > 1 else z0
    fx = x - x0
    fy = y - y0
    fz = z - z0
    c00 = data[z0, y0, x0] * (1 - fx) + data[z0, y0, x1] * fx
    c10 = data[z0, y1, x0] * (1 - fx) + data[z0, y1, x1] * fx
    c01 = data[z1, y0, x0] * (1 - fx) + data[z1, y0, x1] * fx
    c11 = data[z1, y1, x0] * (1 - fx) + data[z1, y1, x1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


@njit(cache=True, inline="always")
def _coarsest_excluded(mins, maxs, offs, ldims, nlv, qx, qy, qz, iso):
    """Walk up from the finest level; return the coarsest excluded level
    containing the point, or -1 if even the finest node straddles iso."""
    xi = int(qx)
    yi = int(qy)
    zi = int(qz)
    if xi < 0:
        xi = 0
    if yi < 0:
        yi = 0
    if zi < 0:
        zi = 0
    best = -1
    for lvl in range(nlv):
        s = lvl + 1
        nbx = ldims[lvl, 0]
        nby = ldims[lvl, 1]
        nbz = ldims[lvl, 2]
        ix = xi >> s
        iy = yi >> s
        iz = zi >> s
        if ix >= nbx:
            ix = nbx - 1
        if iy >= nby:
            iy = nby - 1
        if iz >= nbz:
            iz = nbz - 1
        k = offs[lvl] + (iz * nby + iy) * nbx + ix
        if iso < mins[k] or iso > maxs[k]:
            best = lvl
        else:
            break
    return best


@njit(cache=True, inline="always")
def _node_exit_t(ox, oy, oz, dx, dy, dz, lvl, qx, qy, qz, ldims):
    """World-t at which the ray leaves the node containing (qx,qy,qz)."""
    s = lvl + 1
    size = 2 << lvl
    t_exit = 1e30

    xi = int(qx) if qx >= 0.0 else 0
    ix = xi >> s
    if ix >= ldims[lvl, 0]:
        ix = ldims[lvl, 0] - 1
    lo = float(ix * size)
    if dx > 1e-12:
        tc = (lo + size - ox) / dx
        if tc < t_exit:
            t_exit = tc
    elif dx < -1e-12:
        tc = (lo - ox) / dx
        if tc < t_exit:
            t_exit = tc

    yi = int(qy) if qy >= 0.0 else 0
    iy = yi >> s
    if iy >= ldims[lvl, 1]:
        iy = ldims[lvl, 1] - 1
    lo = float(iy * size)
    if dy > 1e-12:
        tc = (lo + size - oy) / dy
        if tc < t_exit:
            t_exit = tc
    elif dy < -1e-12:
        tc = (lo - oy) / dy
        if tc < t_exit:
            t_exit = tc

    zi = int(qz) if qz >= 0.0 else 0
    iz = zi >> s
    if iz >= ldims[lvl, 2]:
        iz = ldims[lvl, 2] - 1
    lo = float(iz * size)
    if dz > 1e-12:
        tc = (lo + size - oz) / dz
        if tc < t_exit:
            t_exit = tc
    elif dz < -1e-12:
        tc = (lo - oz) / dz
        if tc < t_exit:
            t_exit = tc
    return t_exit


@njit(cache=True, inline="always")
def _bbox_clip(ox, oy, oz, dx, dy, dz, nx, ny, nz, t_lo, t_hi):
    """Clip [t_lo, t_hi] against the voxel-space box [0, n-1]^3.
    Returns (ok, lo, hi)."""
    for axis in range(3):
        if axis == 0:
            o, d, n = ox, dx, nx
        elif axis == 1:
            o, d, n = oy, dy, ny
        else:
            o, d, n = oz, dz, nz
        if d > 1e-12 or d < -1e-12:
            ta = (0.0 - o) / d
            tb = (n - 1.0 - o) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > t_lo:
                t_lo = ta
            if tb < t_hi:
                t_hi = tb
        else:
            if o < 0.0 or o > n - 1.0:
                return False, 0.0, 0.0
    if t_lo > t_hi:
        return False, 0.0, 0.0
    return True, t_lo, t_hi


@njit(cache=True)
def _march(data, mins, maxs, offs, ldims, nlv,
           ox, oy, oz, dx, dy, dz, iso, near, far, dt,
           refine, seg_out, record):
    """Pyramid-guided march; returns (hit, t, n_segments_recorded).

    Samples the fixed grid t0 + j*dt (t0 = entry into the volume), but
    jumps the index past nodes whose value interval excludes iso. The
    retained samples are an exact subset of an acceleration-free march
    on the same grid, and skipped samples all lie in sign-constant
    regions, so both marchers detect identical crossings. A sign change
    brackets the crossing; 8 bisection iterations refine it when
    ``refine`` is set. Skipped intervals are written to ``seg_out``
    when ``record`` is set.
    """
    nz, ny, nx = data.shape
    ok, t0, t1 = _bbox_clip(ox, oy, oz, dx, dy, dz, nx, ny, nz, near, far)
    nseg = 0
    if not ok:
        return False, 0.0, nseg
    eps = 1e-4 * dt
    t = t0
    v_prev = _trilin(data, nx, ny, nz, ox + t * dx, oy + t * dy, oz + t * dz) - iso
    sp = v_prev > 0.0
    j = 0
    max_it = int((t1 - t0) / dt) + 256
    it = 0
    while t < t1 and it < max_it:
        it += 1
        ta = t + eps
        qx = ox + ta * dx
        qy = oy + ta * dy
        qz = oz + ta * dz
        lvl = _coarsest_excluded(mins, maxs, offs, ldims, nlv, qx, qy, qz, iso)
        if lvl >= 0:
            te = _node_exit_t(ox, oy, oz, dx, dy, dz, lvl, qx, qy, qz, ldims) + eps
            jn = int(np.floor((te - t0) / dt)) + 1
            if jn <= j:
                jn = j + 1
            if record and nseg < seg_out.shape[0]:
                # the guaranteed-crossing-free interval ends at the node
                # exit; the stretch up to the next retained sample is
                # covered by the endpoint sign comparison as usual
                seg_end = te if te < t1 else t1
                seg_out[nseg, 0] = t
                seg_out[nseg, 1] = seg_end
                nseg += 1
        else:
            jn = j + 1
        tn = t0 + jn * dt
        if tn > t1:
            tn = t1
        v = _trilin(data, nx, ny, nz, ox + tn * dx, oy + tn * dy, oz + tn * dz) - iso
        sn = v > 0.0
        if sn != sp:
            if not refine:
                return True, tn, nseg
            a = t
            b = tn
            va = v_prev
            for _ in range(8):
                m = 0.5 * (a + b)
                vm = _trilin(data, nx, ny, nz, ox + m * dx, oy + m * dy, oz + m * dz) - iso
                if (vm > 0.0) != (va > 0.0):
                    b = m
                else:
                    a = m
                    va = vm
            return True, 0.5 * (a + b), nseg
        if tn >= t1:
            break
        j = jn
        t = tn
        v_prev = v
        sp = sn
    return False, 0.0, nseg


@njit(cache=True)
def first_hit_batch(data, mins, maxs, offs, ldims, nlv,
                    origins, dirs, spacing, iso, near, far, step_vox,
                    out_t, out_hit):
    """March a batch of world-space rays; fills out_t/out_hit in place."""
    dummy_seg = np.zeros((1, 2), dtype=np.float64)
    for i in range(origins.shape[0]):
        ox = origins[i, 0] / spacing[0]
        oy = origins[i, 1] / spacing[1]
        oz = origins[i, 2] / spacing[2]
        dx = dirs[i, 0] / spacing[0]
        dy = dirs[i, 1] / spacing[1]
        dz = dirs[i, 2] / spacing[2]
        dn = np.sqrt(dx * dx + dy * dy + dz * dz)
        if dn < 1e-30:
            out_hit[i] = 0
            out_t[i] = 0.0
            continue
        dt = step_vox / dn
        hit, t, _ = _march(data, mins, maxs, offs, ldims, nlv,
                           ox, oy, oz, dx, dy, dz, iso, near, far, dt,
                           True, dummy_seg, False)
        out_hit[i] = 1 if hit else 0
        out_t[i] = t


@njit(cache=True)
def first_hit_segments(data, mins, maxs, offs, ldims, nlv,
                       origin, direction, spacing, iso, near, far, step_vox,
                       seg_out):
    """Single-ray march that records skipped intervals. Returns
    (hit, t, n_segments)."""
    ox = origin[0] / spacing[0]
    oy = origin[1] / spacing[1]
    oz = origin[2] / spacing[2]
    dx = direction[0] / spacing[0]
    dy = direction[1] / spacing[1]
    dz = direction[2] / spacing[2]
    dn = np.sqrt(dx * dx + dy * dy + dz * dz)
    dt = step_vox / dn
    return _march(data, mins, maxs, offs, ldims, nlv,
                  ox, oy, oz, dx, dy, dz, iso, near, far, dt,
                  True, seg_out, True)


@njit(cache=True)
def ambient_occlusion_batch(data, mins, maxs, offs, ldims, nlv,
                            points, normals, spacing, iso,
                            n_samples, max_dist, seed, offset_world, step_vox,
                            out_escaped):
    """Count escaping cosine-weighted hemisphere rays per surface point.

    Rays start ``offset_world`` along the normal and march up to
    ``max_dist``. The RNG is a counter hash of (seed, point index,
    sample index), so results are independent of evaluation order.
    """
    dummy_seg = np.zeros((1, 2), dtype=np.float64)
    for i in range(points.shape[0]):
        nxw = normals[i, 0]
        nyw = normals[i, 1]
        nzw = normals[i, 2]
        # orthonormal tangent frame around the normal
        if nzw > 0.9 or nzw < -0.9:
            txw, tyw, tzw = 1.0, 0.0, 0.0
        else:
            txw, tyw, tzw = 0.0, 0.0, 1.0
        # t = normalize(cross(up, n)), b = cross(n, t)
        cx = tyw * nzw - tzw * nyw
        cy = tzw * nxw - txw * nzw
        cz = txw * nyw - tyw * nxw
        cl = np.sqrt(cx * cx + cy * cy + cz * cz)
        cx /= cl
        cy /= cl
        cz /= cl
        bx = nyw * cz - nzw * cy
        by = nzw * cx - nxw * cz
        bz = nxw * cy - nyw * cx

        px = points[i, 0] + offset_world * nxw
        py = points[i, 1] + offset_world * nyw
        pz = points[i, 2] + offset_world * nzw
        escaped = 0
        for s in range(n_samples):
            u1 = _hash_u01(seed, i, s, 0)
            u2 = _hash_u01(seed, i, s, 1)
            z = np.sqrt(u1)
            r = np.sqrt(1.0 - u1)
            phi = 6.283185307179586 * u2
            lx = r * np.cos(phi)
            ly = r * np.sin(phi)
            wx = lx * cx + ly * bx + z * nxw
            wy = lx * cy + ly * by + z * nyw
            wz = lx * cz + ly * bz + z * nzw

            ox = px / spacing[0]
            oy = py / spacing[1]
            oz = pz / spacing[2]
            dx = wx / spacing[0]
            dy = wy / spacing[1]
            dz = wz / spacing[2]
            dn = np.sqrt(dx * dx + dy * dy + dz * dz)
            dt = step_vox / dn
            hit, _, _ = _march(data, mins, maxs, offs, ldims, nlv,
                               ox, oy, oz, dx, dy, dz, iso,
                               0.0, max_dist, dt, False, dummy_seg, False)
            if not hit:
                escaped += 1
        out_escaped[i] = escaped


@njit(cache=True)
def brute_force_hit_batch(data, origins, dirs, spacing, iso, near, far,
                          step_voxels, out_t, out_hit):
    """Acceleration-free fixed-step march with bisection refinement.

    Reference implementation for validating the pyramid-guided path:
    samples every grid point t0 + j*dt along the ray with no skipping.
    """
    nz, ny, nx = data.shape
    for i in range(origins.shape[0]):
        ox = origins[i, 0] / spacing[0]
        oy = origins[i, 1] / spacing[1]
        oz = origins[i, 2] / spacing[2]
        dx = dirs[i, 0] / spacing[0]
        dy = dirs[i, 1] / spacing[1]
        dz = dirs[i, 2] / spacing[2]
        dn = np.sqrt(dx * dx + dy * dy + dz * dz)
        out_hit[i] = 0
        out_t[i] = 0.0
        if dn < 1e-30:
            continue
        dt = step_voxels / dn
        ok, t0, t1 = _bbox_clip(ox, oy, oz, dx, dy, dz, nx, ny, nz, near, far)
        if not ok:
            continue
        t = t0
        v_prev = _trilin(data, nx, ny, nz, ox + t * dx, oy + t * dy, oz + t * dz) - iso
        sp = v_prev > 0.0
        j = 0
        while t < t1:
            j += 1
            tn = t0 + j * dt
            if tn > t1:
                tn = t1
            v = _trilin(data, nx, ny, nz, ox + tn * dx, oy + tn * dy, oz + tn * dz) - iso
            sn = v > 0.0
            if sn != sp:
                a = t
                b = tn
                va = v_prev
                for _ in range(8):
                    m = 0.5 * (a + b)
                    vm = _trilin(data, nx, ny, nz,
                                 ox + m * dx, oy + m * dy, oz + m * dz) - iso
                    if (vm > 0.0) != (va > 0.0):
                        b = m
                    else:
                        a = m
                        va = vm
                out_hit[i] = 1
                out_t[i] = 0.5 * (a + b)
                break
            if tn >= t1:
                break
            t = tn
            v_prev = v
            sp = sn
