"""Compiled SPMe + thermal kernels.

Everything that runs inside the integrator loop lives here as numba
``njit`` functions operating on flat arrays. The public modules
(:mod:`fastcharge.spme`, :mod:`fastcharge.thermal`, :mod:`fastcharge.plant`)
wrap these with validation and dataclasses.

State vector layout (``n_r`` radial nodes, ``n_x`` axial nodes)::

    [ c_s-  (n_r) | c_s+ (n_r) | c_e (n_x) | T_c | T_s ]

Model data is a tuple ``(p, geom_n, geom_p, ex, ocp_n_x, ocp_n_c, ocp_p_x, ocp_p_c)``.
``p`` holds scalars at the indices below; ``geom_*`` are (4, n_r) arrays of
finite-volume coefficients (inner, outer, volume weight, unused);
``ex`` is (5, n_x): dx, porosity, porosity**brug, source coefficient, region.
"""

import math

import numpy as np
from numba import njit

# scalar parameter indices
P_F = 0
P_RG = 1
P_TREF = 2
P_AREA = 3
P_LN = 4
P_LS = 5
P_LP = 6
P_AN = 7  # specific area, 1/m
P_AP = 8
P_CMAXN = 9
P_CMAXP = 10
P_RSN = 11
P_RSP = 12
P_DSN = 13
P_DSP = 14
P_EADN = 15
P_EADP = 16
P_KN = 17
P_KP = 18
P_EAKN = 19
P_EAKP = 20
P_RFN = 21
P_RFP = 22
P_TPLUS = 23
P_RCONT = 24
P_RIN = 25
P_CC = 26
P_CS = 27
P_TFORM = 28  # 0 = series form, 1 = classical two-node form
P_DESCALE = 29
P_KAPSCALE = 30
P_EPSN = 31
P_EPSS = 32
P_EPSP = 33
P_BRUG = 34
P_THN0 = 35
P_THN100 = 36
P_NR = 37
P_NXN = 38
P_NXS = 39
P_NXP = 40
N_P = 41

# output vector indices
O_PHI_N = 0
O_U_N = 1
O_ETA_N = 2
O_FILM_N = 3
O_PHI_P = 4
O_UC = 5
O_OCV = 6
O_PGEN = 7
O_SOC = 8
O_THETA_SS_N = 9
O_THETA_SS_P = 10
O_ETA_P = 11
O_DPHI_E = 12
O_TC = 13
O_TS = 14
O_U_P = 15
O_FILM_P = 16
N_OUT = 17

TRBDF2_GAMMA = 2.0 - math.sqrt(2.0)
TRBDF2_D = TRBDF2_GAMMA / 2.0
TRBDF2_W = math.sqrt(2.0) / 4.0

STATUS_OK = 0
STATUS_NEWTON_FAIL = 1
STATUS_STEP_FLOOR = 2
STATUS_MAX_STEPS = 3
STATUS_NONFINITE = 4


@njit(cache=True)
def pchip_eval(bp, coef, x):
    n = bp.shape[0]
    if x < bp[0]:
        x = bp[0]
    elif x > bp[n - 1]:
        x = bp[n - 1]
    k = np.searchsorted(bp, x, side="right") - 1
    if k < 0:
        k = 0
    elif k > n - 2:
        k = n - 2
    dx = x - bp[k]
    return ((coef[0, k] * dx + coef[1, k]) * dx + coef[2, k]) * dx + coef[3, k]


@njit(cache=True)
def arrhenius(ref, ea, rg, tref, t):
    return ref * math.exp(ea / rg * (1.0 / tref - 1.0 / t))


@njit(cache=True)
def electrolyte_diffusivity(c, t, scale):
    """Valoen-Reimers LiPF6 diffusivity, m^2/s (c in mol/m^3, t in K)."""
    cl = min(max(c, 1.0), 4000.0) * 1e-3
    return scale * 1e-4 * 10.0 ** (-4.43 - 54.0 / (t - 229.0 - 5.0 * cl) - 0.22 * cl)


@njit(cache=True)
def electrolyte_conductivity(c, t, scale):
    """Valoen-Reimers LiPF6 conductivity, S/m."""
    cl = min(max(c, 1.0), 4000.0) * 1e-3
    s = (-10.5 + 0.074 * t - 6.96e-5 * t * t + 0.668 * cl - 0.0178 * cl * t
         + 2.8e-5 * cl * t * t + 0.494 * cl * cl - 8.86e-4 * cl * cl * t)
    return scale * 0.1 * cl * s * s


@njit(cache=True)
def overpotential(jn, css, ce, cmax, k, t, f, rg):
    """Inverse Butler-Volmer with symmetric transfer (alpha = 0.5)."""
    lo = 1e-9 * cmax
    c = min(max(css, lo), cmax - lo)
    i0 = f * k * math.sqrt(max(ce, 1e-6) * c * (cmax - c))
    return rg * t / (0.5 * f) * math.asinh(f * jn / (2.0 * i0))


@njit(cache=True)
def fluxes(p, current):
    """Pore-wall molar flux density per electrode, mol/(m^2 s); >0 leaves the particle."""
    f = p[P_F]
    jn = -current / (f * p[P_AN] * p[P_LN] * p[P_AREA])
    jp = current / (f * p[P_AP] * p[P_LP] * p[P_AREA])
    return jn, jp


@njit(cache=True)
def solid_rhs(c, jn, d, radius, geom, out):
    n = c.shape[0]
    k = d / (radius * radius)
    for i in range(n):
        acc = 0.0
        if i > 0:
            acc += geom[0, i] * (c[i - 1] - c[i])
        if i < n - 1:
            acc += geom[1, i] * (c[i + 1] - c[i])
        out[i] = k * acc
    out[n - 1] -= jn * geom[3, 0] / radius


@njit(cache=True)
def surface_concentration(c, jn, d, radius):
    n = c.shape[0]
    return c[n - 1] - jn * radius * (0.5 / n) / d


@njit(cache=True)
def bulk_mean(c, geom):
    s = 0.0
    for i in range(c.shape[0]):
        s += geom[2, i] * c[i]
    return s


@njit(cache=True)
def electrolyte_rhs(ce, jn, jp, t, p, ex, out):
    nx = ce.shape[0]
    nxn = int(p[P_NXN])
    nxs = int(p[P_NXS])
    de = np.empty(nx)
    for i in range(nx):
        de[i] = electrolyte_diffusivity(ce[i], t, p[P_DESCALE]) * ex[2, i]
    flux_prev = 0.0
    for i in range(nx):
        if i < nx - 1:
            res = 0.5 * ex[0, i] / de[i] + 0.5 * ex[0, i + 1] / de[i + 1]
            flux_next = -(ce[i + 1] - ce[i]) / res
        else:
            flux_next = 0.0
        if i < nxn:
            src = ex[3, i] * jn
        elif i < nxn + nxs:
            src = 0.0
        else:
            src = ex[3, i] * jp
        out[i] = ((flux_prev - flux_next) / ex[0, i] + src) / ex[1, i]
        flux_prev = flux_next


@njit(cache=True)
def region_means(ce, p, ex):
    nxn = int(p[P_NXN])
    nxs = int(p[P_NXS])
    nx = ce.shape[0]
    sn = 0.0
    wn = 0.0
    ss = 0.0
    ws = 0.0
    sp = 0.0
    wp = 0.0
    for i in range(nx):
        if i < nxn:
            sn += ex[0, i] * ce[i]
            wn += ex[0, i]
        elif i < nxn + nxs:
            ss += ex[0, i] * ce[i]
            ws += ex[0, i]
        else:
            sp += ex[0, i] * ce[i]
            wp += ex[0, i]
    return sn / wn, ss / ws, sp / wp


@njit(cache=True)
def cell_outputs(y, current, data, out):
    p, gn, gp, ex, onx, onc, opx, opc = data
    nr = int(p[P_NR])
    nx = y.shape[0] - 2 * nr - 2
    cn = y[0:nr]
    cp = y[nr:2 * nr]
    ce = y[2 * nr:2 * nr + nx]
    tc = y[2 * nr + nx]
    ts = y[2 * nr + nx + 1]
    f = p[P_F]
    rg = p[P_RG]
    tref = p[P_TREF]
    jn, jp = fluxes(p, current)
    dn = arrhenius(p[P_DSN], p[P_EADN], rg, tref, tc)
    dp = arrhenius(p[P_DSP], p[P_EADP], rg, tref, tc)
    kn = arrhenius(p[P_KN], p[P_EAKN], rg, tref, tc)
    kp = arrhenius(p[P_KP], p[P_EAKP], rg, tref, tc)
    cssn = surface_concentration(cn, jn, dn, p[P_RSN])
    cssp = surface_concentration(cp, jp, dp, p[P_RSP])
    cen, ces, cep = region_means(ce, p, ex)
    un = pchip_eval(onx, onc, cssn / p[P_CMAXN])
    up = pchip_eval(opx, opc, cssp / p[P_CMAXP])
    etan = overpotential(jn, cssn, cen, p[P_CMAXN], kn, tc, f, rg)
    etap = overpotential(jp, cssp, cep, p[P_CMAXP], kp, tc, f, rg)
    filmn = f * p[P_RFN] * jn
    filmp = f * p[P_RFP] * jp
    phin = un + etan + filmn
    kap_n = electrolyte_conductivity(cen, tc, p[P_KAPSCALE]) * p[P_EPSN] ** p[P_BRUG]
    kap_s = electrolyte_conductivity(ces, tc, p[P_KAPSCALE]) * p[P_EPSS] ** p[P_BRUG]
    kap_p = electrolyte_conductivity(cep, tc, p[P_KAPSCALE]) * p[P_EPSP] ** p[P_BRUG]
    r_e = (0.5 * p[P_LN] / kap_n + p[P_LS] / kap_s + 0.5 * p[P_LP] / kap_p) / p[P_AREA]
    conc = 2.0 * rg * tc / f * (1.0 - p[P_TPLUS]) * math.log(max(ce[nx - 1], 1e-6) / max(ce[0], 1e-6))
    dphie = current * r_e + conc
    phip = up + etap + filmp + dphie + current * p[P_RCONT]
    uc = phip - phin
    thn = bulk_mean(cn, gn) / p[P_CMAXN]
    thp = bulk_mean(cp, gp) / p[P_CMAXP]
    ocv = pchip_eval(opx, opc, thp) - pchip_eval(onx, onc, thn)
    out[O_PHI_N] = phin
    out[O_U_N] = un
    out[O_ETA_N] = etan
    out[O_FILM_N] = filmn
    out[O_PHI_P] = phip
    out[O_UC] = uc
    out[O_OCV] = ocv
    out[O_PGEN] = current * (uc - ocv)
    out[O_SOC] = (thn - p[P_THN0]) / (p[P_THN100] - p[P_THN0])
    out[O_THETA_SS_N] = cssn / p[P_CMAXN]
    out[O_THETA_SS_P] = cssp / p[P_CMAXP]
    out[O_ETA_P] = etap
    out[O_DPHI_E] = dphie
    out[O_TC] = tc
    out[O_TS] = ts
    out[O_U_P] = up
    out[O_FILM_P] = filmp


@njit(cache=True)
def thermal_derivatives(tc, ts, tamb, pgen, rout, r_in, c_c, c_s, form):
    dtc = (ts - tc) / (r_in * c_c) + pgen / c_c
    if form == 0:
        dts = (tamb - ts + pgen * r_in) / (c_s * (r_in + rout))
    else:
        dts = ((tc - ts) / r_in - (ts - tamb) / rout) / c_s
    return dtc, dts


@njit(cache=True)
def rhs(y, current, rout, tamb, data, out):
    p, gn, gp, ex, onx, onc, opx, opc = data
    nr = int(p[P_NR])
    nx = y.shape[0] - 2 * nr - 2
    tc = y[2 * nr + nx]
    ts = y[2 * nr + nx + 1]
    rg = p[P_RG]
    tref = p[P_TREF]
    jn, jp = fluxes(p, current)
    dn = arrhenius(p[P_DSN], p[P_EADN], rg, tref, tc)
    dp = arrhenius(p[P_DSP], p[P_EADP], rg, tref, tc)
    solid_rhs(y[0:nr], jn, dn, p[P_RSN], gn, out[0:nr])
    solid_rhs(y[nr:2 * nr], jp, dp, p[P_RSP], gp, out[nr:2 * nr])
    electrolyte_rhs(y[2 * nr:2 * nr + nx], jn, jp, tc, p, ex, out[2 * nr:2 * nr + nx])
    if current != 0.0:
        o = np.empty(N_OUT)
        cell_outputs(y, current, data, o)
        pgen = o[O_PGEN]
    else:
        pgen = 0.0
    dtc, dts = thermal_derivatives(tc, ts, tamb, pgen, rout, p[P_RIN], p[P_CC], p[P_CS], int(p[P_TFORM]))
    out[2 * nr + nx] = dtc
    out[2 * nr + nx + 1] = dts


# -- dense linear algebra -------------------------------------------------

@njit(cache=True)
def lu_factor(a, piv):
    n = a.shape[0]
    for k in range(n):
        p = k
        big = abs(a[k, k])
        for i in range(k + 1, n):
            v = abs(a[i, k])
            if v > big:
                big = v
                p = i
        piv[k] = p
        if big == 0.0:
            return False
        if p != k:
            for j in range(n):
                tmp = a[k, j]
                a[k, j] = a[p, j]
                a[p, j] = tmp
        inv = 1.0 / a[k, k]
        for i in range(k + 1, n):
            a[i, k] *= inv
            m = a[i, k]
            if m != 0.0:
                for j in range(k + 1, n):
                    a[i, j] -= m * a[k, j]
    return True


@njit(cache=True)
def lu_solve(lu, piv, b):
    n = lu.shape[0]
    x = b.copy()
    for k in range(n):
        p = piv[k]
        if p != k:
            tmp = x[k]
            x[k] = x[p]
            x[p] = tmp
    for i in range(n):
        s = x[i]
        for j in range(i):
            s -= lu[i, j] * x[j]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= lu[i, j] * x[j]
        x[i] = s / lu[i, i]
    return x


@njit(cache=True)
def fd_jacobian(y, current, rout, tamb, data, f0, jac):
    n = y.shape[0]
    yp = y.copy()
    fp = np.empty(n)
    for j in range(n):
        h = 1.4901161193847656e-08 * max(abs(y[j]), 1.0)
        yp[j] = y[j] + h
        h = yp[j] - y[j]
        rhs(yp, current, rout, tamb, data, fp)
        for i in range(n):
            jac[i, j] = (fp[i] - f0[i]) / h
        yp[j] = y[j]


@njit(cache=True)
def wrms(v, y0, y1, rtol, atol):
    s = 0.0
    n = v.shape[0]
    for i in range(n):
        sc = atol[i] + rtol[i] * max(abs(y0[i]), abs(y1[i]))
        e = v[i] / sc
        s += e * e
    return math.sqrt(s / n)


@njit(cache=True)
def _newton(z, base, dh, current, rout, tamb, data, lu, piv, y, rtol, atol, tol, maxit):
    """Solve z - base - dh f(z) = 0 in place with a frozen iteration matrix."""
    n = z.shape[0]
    fz = np.empty(n)
    g = np.empty(n)
    prev = 0.0
    for it in range(maxit):
        rhs(z, current, rout, tamb, data, fz)
        for i in range(n):
            g[i] = -(z[i] - base[i] - dh * fz[i])
        dz = lu_solve(lu, piv, g)
        for i in range(n):
            z[i] += dz[i]
        nrm = wrms(dz, y, z, rtol, atol)
        if not math.isfinite(nrm):
            return False
        if nrm <= tol:
            return True
        if it > 0 and nrm > 0.9 * prev:
            return False
        prev = nrm
    return False


@njit(cache=True)
def integrate(y0, current, rout, tamb, dt, data, rtol, atol, h_init, fixed_steps, hs_out, max_steps):
    """TR-BDF2 (trapezoid + BDF2) over [0, dt] with zero-order-hold inputs.

    Adaptive mode (``fixed_steps`` empty) controls the local error with the
    filtered third-order embedded estimate and writes accepted step sizes to
    ``hs_out``. Fixed mode replays the given step sequence without error
    control, which keeps the map smooth in its inputs.

    ``rtol`` and ``atol`` are per-component arrays.

    Returns (y, status, n_steps, h_next).
    """
    n = y0.shape[0]
    gam = TRBDF2_GAMMA
    d = TRBDF2_D
    w = TRBDF2_W
    e0 = w - (1.0 - w) / 3.0
    e1 = w - (3.0 * w + 1.0) / 3.0
    e2 = d - d / 3.0
    newton_tol = 1e-3
    y = y0.copy()
    f0 = np.empty(n)
    f1 = np.empty(n)
    f2 = np.empty(n)
    jac = np.empty((n, n))
    m = np.empty((n, n))
    piv = np.empty(n, dtype=np.int64)
    base = np.empty(n)
    z1 = np.empty(n)
    z2 = np.empty(n)
    err = np.empty(n)
    rhs(y, current, rout, tamb, data, f0)
    fd_jacobian(y, current, rout, tamb, data, f0, jac)
    jac_fresh = True
    fixed = fixed_steps.shape[0] > 0
    t = 0.0
    h = min(h_init, dt)
    h_min = 1e-10 * dt
    nsteps = 0
    attempts = 0
    while t < dt * (1.0 - 1e-13):
        if fixed:
            if nsteps >= fixed_steps.shape[0]:
                break
            h = fixed_steps[nsteps]
        else:
            if t + h > dt or dt - (t + h) < 1e-3 * h:
                h = dt - t
        attempts += 1
        if attempts > max_steps:
            return y, STATUS_MAX_STEPS, nsteps, h
        for i in range(n):
            for j in range(n):
                m[i, j] = -d * h * jac[i, j]
            m[i, i] += 1.0
        if not lu_factor(m, piv):
            return y, STATUS_NEWTON_FAIL, nsteps, h
        # trapezoidal stage to t + gamma h
        for i in range(n):
            base[i] = y[i] + d * h * f0[i]
            z1[i] = y[i] + gam * h * f0[i]
        ok = _newton(z1, base, d * h, current, rout, tamb, data, m, piv, y, rtol, atol, newton_tol, 8)
        if ok:
            rhs(z1, current, rout, tamb, data, f1)
            for i in range(n):
                base[i] = y[i] + h * w * (f0[i] + f1[i])
                z2[i] = base[i] + d * h * f1[i]
            ok = _newton(z2, base, d * h, current, rout, tamb, data, m, piv, y, rtol, atol, newton_tol, 8)
        if not ok:
            if fixed:
                if jac_fresh:
                    return y, STATUS_NEWTON_FAIL, nsteps, h
            elif jac_fresh:
                h *= 0.25
                if h < h_min:
                    return y, STATUS_STEP_FLOOR, nsteps, h
            fd_jacobian(y, current, rout, tamb, data, f0, jac)
            jac_fresh = True
            continue
        rhs(z2, current, rout, tamb, data, f2)
        if fixed:
            enorm = 0.0
        else:
            for i in range(n):
                err[i] = h * (e0 * f0[i] + e1 * f1[i] + e2 * f2[i])
            err = lu_solve(m, piv, err)
            enorm = wrms(err, y, z2, rtol, atol)
            if not math.isfinite(enorm):
                enorm = 1e10
        if enorm <= 1.0:
            for i in range(n):
                y[i] = z2[i]
                f0[i] = f2[i]
            t += h
            if nsteps < hs_out.shape[0]:
                hs_out[nsteps] = h
            nsteps += 1
            jac_fresh = False
            if not fixed:
                fac = 5.0 if enorm == 0.0 else min(5.0, max(0.2, 0.9 * enorm ** (-1.0 / 3.0)))
                h *= fac
        else:
            h *= max(0.2, 0.9 * enorm ** (-1.0 / 3.0))
            if h < h_min:
                return y, STATUS_STEP_FLOOR, nsteps, h
    for i in range(n):
        if not math.isfinite(y[i]):
            return y, STATUS_NONFINITE, nsteps, h
    return y, STATUS_OK, nsteps, h


@njit(cache=True)
def rk4_fixed(y0, current, rout, tamb, dt, nsub, data):
    """Classic fixed-step RK4; used as an integration reference in tests."""
    n = y0.shape[0]
    y = y0.copy()
    h = dt / nsub
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for _ in range(nsub):
        rhs(y, current, rout, tamb, data, k1)
        for i in range(n):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        rhs(tmp, current, rout, tamb, data, k2)
        for i in range(n):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        rhs(tmp, current, rout, tamb, data, k3)
        for i in range(n):
            tmp[i] = y[i] + h * k3[i]
        rhs(tmp, current, rout, tamb, data, k4)
        for i in range(n):
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return y
