"""Acceptance suite: every shipped criterion at its stated tolerance and budget.

Each test prints one PASS/FAIL line. Expensive artifacts (kernel tables,
sweeps, reference relaxations) are cached at module level and attributed to
the first criterion that needs them, mirroring how a cached pipeline would
amortize them.
"""

import time

import numpy as np

from latthermo import (
    DisplacementField,
    Supercell,
    conjugate_operator,
    delta_S_saddle,
    energy_periodic,
    entropy_total,
    gradient_periodic,
    hessian,
    kernel_F,
    kernel_FN,
    matrix_log_plus,
    preset_model,
    projector_constants,
    relax_minimum,
    renormalised_entropy,
    site_entropies,
    variation_contractions,
)
from latthermo.fitting import envelope_decay, fit_rate
from latthermo.harness import RunConfig, sweep
from latthermo.spectral import log_plus_contour

_cache: dict = {}


def record(num, name, ok, detail, elapsed, budget):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {num:02d} {name}: {status} ({elapsed:.1f}s / budget {budget:.0f}s) -- {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"
    assert elapsed < budget, f"criterion {num} exceeded budget: {elapsed:.1f}s >= {budget}s"


def get(key, builder):
    if key not in _cache:
        _cache[key] = builder()
    return _cache[key]


def kernel256():
    model = preset_model("square_anharmonic")
    return model, kernel_F(model, M_quad=256, max_offset=40.0)


def misfit_table():
    model = preset_model("square_misfit")
    cfg = RunConfig(model=model, N_list=[6, 8, 10, 12, 16, 20, 24], saddle="off")
    return sweep(cfg)


def dwell_table():
    model = preset_model("square_double_well")
    cfg = RunConfig(model=model, N_list=[4, 6, 8, 10, 12], saddle="auto",
                    kick_site=(0, 0), kick_vector=np.array([0.15, 0.0]))
    return sweep(cfg)


def dwell_points(N=6):
    model = preset_model("square_double_well")
    cell = Supercell(model.spec, N)
    kick = np.zeros((cell.n, 2))
    kick[cell.index((0, 0))] = [0.15, 0.0]
    minimum = relax_minimum(model, cell, initial_guess=kick)
    from latthermo import find_saddle
    perm = cell.site_permutation(model.mirror)
    mirrored = minimum.u.values[perm] @ np.asarray(model.mirror, float).T
    saddle = find_saddle(model, cell, guess_pair=(minimum.u.values, mirrored))
    return model, cell, minimum, saddle


def test_criterion_01_operator_identities():
    t0 = time.time()
    worst = 0.0
    for name, d in [("chain_harmonic", 1), ("square_anharmonic", 2)]:
        model = preset_model(name)
        for N in (4, 8, 12):
            cell = Supercell(model.spec, N)
            FN = kernel_FN(model, cell)
            Fop = FN.dense_operator()
            worst = max(worst, Fop.symmetry_defect())                       # FopN1
            H = hessian(model, cell.zero_field(), kind="homogeneous")
            A = conjugate_operator(FN, H, include_pi=True)
            eye = np.eye(cell.n * cell.spec.m)
            worst = max(worst, float(np.max(np.abs(A.dense() - eye))))      # FopN2
            pi = projector_constants(cell).mat
            Fd = Fop.dense()
            worst = max(worst, float(np.max(np.abs(Fd @ pi))),
                        float(np.max(np.abs(pi @ Fd))))                     # FopN3
    record(1, "operator-identities", worst < 1e-10,
           f"max residual {worst:.2e} over d=1,2 x N=4,8,12", time.time() - t0, 30)


def test_criterion_02_entropy_decomposition():
    t0 = time.time()
    model, cell, minimum, saddle = get("dwell6", lambda: dwell_points(6))
    gaps = []
    prof = site_entropies(model, minimum)
    gaps.append(abs(prof.total - entropy_total(model, minimum)))
    rng = np.random.default_rng(0)
    for _ in range(5):
        u = DisplacementField(cell, minimum.u.values
                              + 0.02 * rng.standard_normal((cell.n, 2)))
        gaps.append(abs(site_entropies(model, u).total - entropy_total(model, u)))
    ds = delta_S_saddle(model, minimum, saddle)       # saddle splitting identity
    gaps.append(abs(ds.splitting - ds.direct))
    worst = max(gaps)
    record(2, "entropy-decomposition", worst < 1e-8,
           f"max identity gap {worst:.2e} (min, 5 random states, saddle splitting)",
           time.time() - t0, 60)


def test_criterion_03_log_plus_contour():
    # dimension 200 (<= 512): the rectangle contour hugs the spectrum at
    # height sigma_lo/2, so trapezoid stability needs ~10^2 nodes per edge
    t0 = time.time()
    model = preset_model("square_misfit")
    cell = Supercell(model.spec, 5)
    pt = relax_minimum(model, cell)
    FN = kernel_FN(model, cell)
    A = conjugate_operator(FN, hessian(model, pt.u), include_pi=False)
    L_eig, _ = matrix_log_plus(A, expected_zero=2)
    L_con = log_plus_contour(A, start_nodes=32)
    err = float(np.max(np.abs(L_eig.dense() - L_con)))
    record(3, "logplus-contour-vs-eig", err < 1e-6,
           f"max block error {err:.2e} at dimension {cell.n * 2}", time.time() - t0, 60)


def test_criterion_04_kernel_decay():
    t0 = time.time()
    model, table = get("kernel256", kernel256)
    cell = table.cell
    idx = np.flatnonzero((cell.r >= 4.0) & (cell.r <= 32.0))
    DF = table.dtable()
    mag = np.sqrt((DF[idx] ** 2).sum(axis=(1, 2, 3)))
    fit1 = envelope_decay(cell.r[idx], mag, window=(4.0, 32.0))
    sub = idx[::7]
    D2 = table.d2_at(sub)
    mag2 = np.sqrt((D2 ** 2).sum(axis=(1, 2, 3, 4)))
    fit2 = envelope_decay(cell.r[sub], mag2, window=(4.0, 32.0))
    ok = abs(fit1.exponent - (-2.0)) <= 0.4 and abs(fit2.exponent - (-3.0)) <= 0.5
    record(4, "kernel-decay", ok,
           f"|DF| exponent {fit1.exponent:.3f} (-2 +- 0.4), "
           f"|D2F| exponent {fit2.exponent:.3f} (-3 +- 0.5)", time.time() - t0, 120)


def test_criterion_05_projection_rate():
    t0 = time.time()
    model, table = get("kernel256", kernel256)
    Ns = [8, 12, 16, 24, 32]
    errs = []
    for N in Ns:
        cN = Supercell(model.spec, N)
        DFN = kernel_FN(model, cN).dtable()
        idx_big = table.cell.site_indices(cN.x)
        nb_big = table.cell.neighbors[idx_big]
        DF_ref = table.values[nb_big] - table.values[idx_big][:, None]
        errs.append(float(np.max(np.abs(DF_ref - DFN))))
    fit = fit_rate(np.array(Ns, float), np.array(errs))
    ok = -2.4 <= fit.exponent <= -1.6
    record(5, "projection-rate", ok,
           f"sup|DF-DF_N| exponent {fit.exponent:.3f} in [-2.4,-1.6]",
           time.time() - t0, 120)


def test_criterion_06_energy_convergence():
    t0 = time.time()
    table = get("misfit", misfit_table)
    fit = table.fits["E_min"]
    ok = -2.6 <= fit["exponent"] <= -1.6
    record(6, "energy-convergence", ok,
           f"|E_N - E_ext| exponent {fit['exponent']:.3f} in [-2.6,-1.6], "
           f"E_ext {table.limits['E_min']['value']:.8f} "
           f"+- {table.limits['E_min']['uncertainty']:.1e}", time.time() - t0, 300)


def test_criterion_07_entropy_convergence():
    t0 = time.time()
    table = get("misfit", misfit_table)
    fit = table.fits["S_min"]
    ok = fit["exponent"] <= -1.5
    record(7, "entropy-convergence", ok,
           f"|S_N - S_ext| pure-power exponent {fit['exponent']:.3f} <= -1.5 "
           "(consistent with -2 up to log factors; no sharpness asserted)",
           time.time() - t0, 300)


def test_criterion_08_site_entropy_locality():
    t0 = time.time()
    model = preset_model("square_misfit")
    cell = Supercell(model.spec, 32)
    pt = relax_minimum(model, cell)
    ren = renormalised_entropy(model, pt, R_sum=8, fit_window=(1.5, 8.0))
    # cross-check: the truncated renormalised sum agrees with the sweep's
    # extrapolated entropy limit within its own tail bound
    S_ext = get("misfit", misfit_table).limits["S_min"]["value"]
    gap = abs(ren.value - S_ext)
    ok = ren.decay_fit.exponent <= -3.4 and gap <= 2.0 * ren.tail_estimate
    record(8, "site-entropy-locality", ok,
           f"renormalised site-term exponent {ren.decay_fit.exponent:.3f} <= -3.4 "
           f"at N_ref=32; |site-sum - S_ext| = {gap:.1e} <= 2x tail "
           f"{ren.tail_estimate:.1e}", time.time() - t0, 180)


def test_criterion_09_saddle_pipeline():
    t0 = time.time()
    table = get("dwell", dwell_table)
    rows = table.ok_rows()
    lam_ok = all(r["lam"] < 0 and r["mu"] < 0 for r in rows)
    split_ok = all(r["dS_split_gap"] < 1e-8 for r in rows)
    f_lam = table.fits["lam"]["exponent"]
    f_mu = table.fits["mu"]["exponent"]
    ok = lam_ok and split_ok and f_lam <= -1.5 and f_mu <= -1.5
    record(9, "saddle-pipeline", ok,
           f"lam,mu < 0 at all N; splitting gap max "
           f"{max(r['dS_split_gap'] for r in rows):.1e} < 1e-8; "
           f"exponents lam {f_lam:.3f}, mu {f_mu:.3f} <= -1.5",
           time.time() - t0, 480)


def test_criterion_10_rate_convergence():
    t0 = time.time()
    table = get("dwell", dwell_table)
    rows = table.ok_rows()
    prod_ok = all(r["K_product_gap"] < 1e-8 for r in rows)
    f_K = table.fits["K"]["exponent"]
    ok = prod_ok and f_K <= -1.5
    record(10, "rate-convergence", ok,
           f"|K_N - K_ext| exponent {f_K:.3f} <= -1.5 at beta=1; product-form "
           f"gap max {max(r['K_product_gap'] for r in rows):.1e} < 1e-8 relative",
           time.time() - t0, 180)


def test_criterion_11_derivative_consistency():
    t0 = time.time()
    worst = 0.0
    h = 1e-5
    rng = np.random.default_rng(1)
    for name in ("square_misfit", "square_anharmonic", "square_double_well",
                 "square_harmonic_defect", "chain_misfit"):
        model = preset_model(name)
        cell = Supercell(model.spec, 3)
        m = model.spec.m
        u = DisplacementField(cell, 0.04 * rng.standard_normal((cell.n, m)))
        v = rng.standard_normal((cell.n, m))
        # gradient vs FD of energy
        g = float(np.sum(gradient_periodic(model, u) * v))
        ep = energy_periodic(model, DisplacementField(cell, u.values + h * v)).value
        em = energy_periodic(model, DisplacementField(cell, u.values - h * v)).value
        worst = max(worst, abs((ep - em) / (2 * h) - g) / max(abs(g), 1e-8))
        # Hessian quadratic form vs FD of gradient
        Hv = hessian(model, u).apply(v)
        gp = gradient_periodic(model, DisplacementField(cell, u.values + h * v))
        gm = gradient_periodic(model, DisplacementField(cell, u.values - h * v))
        fd = (gp - gm) / (2 * h)
        worst = max(worst, np.max(np.abs(Hv - fd)) / max(np.max(np.abs(fd)), 1e-8))
        # third variation vs FD of the Hessian
        vf = DisplacementField(cell, v)
        dH = variation_contractions(model, u, vf).dense()
        Hp = hessian(model, DisplacementField(cell, u.values + h * v)).dense()
        Hm = hessian(model, DisplacementField(cell, u.values - h * v)).dense()
        fdH = (Hp - Hm) / (2 * h)
        worst = max(worst, np.max(np.abs(dH - fdH)) / max(np.max(np.abs(fdH)), 1e-8))
    record(11, "derivative-consistency", worst < 1e-5,
           f"max relative FD error {worst:.2e} over the model family",
           time.time() - t0, 60)


def test_criterion_12_minimiser_decay():
    t0 = time.time()
    model = preset_model("square_misfit")
    cell = Supercell(model.spec, 24)
    pt = relax_minimum(model, cell)
    G = np.linalg.norm(pt.u.gradients().reshape(cell.n, -1), axis=1)
    fit = envelope_decay(cell.r, G, window=(4.0, 12.0))
    ok = fit.exponent <= -1.5
    record(12, "minimiser-decay", ok,
           f"|Du_N(l)| exponent {fit.exponent:.3f} <= -1.5 over 4 <= |l| <= N/2 at N=24",
           time.time() - t0, 60)
