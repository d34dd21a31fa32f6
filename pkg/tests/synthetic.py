"""Synthetic c-function data with known fit parameters, finite-volume and lattice-spacing terms."""

import numpy as np

from kwreplica import analysis
from kwreplica.neq import CFunctionPoint

TRUTH = {"A": 0.33, "alpha": 0.36, "M": 1.31, "c2_cft": 0.25, "mg_over_tc": 2.0}


def synthetic_points(seed=7, n_tau_c=(8, 12, 16), l_tc=np.arange(0.25, 2.01, 0.25),
                     volumes=(1.5, 2.0, 2.5, 3.0, 4.0), rel_noise=2e-3, model="ansatz"):
    gen = np.random.default_rng(seed)
    pts = []
    for ntc in n_tau_c:
        beta_c, _ = analysis.scale_lookup(ntc)
        for lt in l_tc:
            l = lt * ntc
            if abs(l - round(l)) > 1e-9:
                continue
            x = lt * TRUTH["mg_over_tc"]
            if model == "ansatz":
                f = analysis.ansatz(x, TRUTH["A"], TRUTH["alpha"])
            else:
                f = analysis.powerlaw(x, 0.36, 0.48)
            a = 1.0 / ntc
            for v in volumes:
                n_s = int(round(v * ntc))
                L = n_s / ntc
                base = TRUTH["c2_cft"] * (f + 0.2 * a) - 0.05 * np.exp(-TRUTH["M"] * L)
                err = rel_noise * abs(TRUTH["c2_cft"] * f) + 1e-6
                val = base + err * gen.standard_normal()
                mid = val + 0.05 * a * TRUTH["c2_cft"]
                pts.append(CFunctionPoint(beta=beta_c, n=2, n_tau=4 * ntc, n_s=n_s, l=float(round(l)), value=float(val),
                                          error=float(err), value_mid=float(mid), error_mid=float(err), dimension=3,
                                          boundary_sites=n_s, n_tau_c=ntc))
    return pts
