"""Scale setting, volume and continuum extrapolation, and the two c-function fit models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize, special

# beta_c of the dual gauge theory per N_tau,c, stored as printed (value(error in last digits))
_SCALE_ROWS = [
    (6, "0.228818(4)"), (8, "0.226102(5)"), (10, "0.224743(5)"), (12, "0.223951(3)"),
    (14, "0.223442(4)"), (16, "0.223101(2)"), (18, "0.2228492(15)"), (20, "0.2226632(13)"),
    (24, "0.2224077(9)"), (25, "0.2223601(8)"), (28, "0.2222431(7)"), (30, "0.2221817(7)"),
    (36, "0.2220486(5)"), (40, "0.2219876(4)"), (45, "0.2219306(3)"), (48, "0.2219037(3)"),
    (50, "0.2218880(3)"), (60, "0.2218292(2)"), (72, "0.22178524(16)"), (75, "0.22177703(15)"),
    (90, "0.22174622(12)"),
]

# reference results of the large-scale study; not reproducible at desk scale
REFERENCE_RESULTS = {
    "AnsatzBessel": {"A": (0.33, 0.03), "alpha": (0.360, 0.019), "chi2_red": 0.82, "window": "l m_g >= 0.84"},
    "PowerLaw": {"B": (0.360, 0.009), "c": (0.48, 0.02), "chi2_red": 1.02, "window": "l m_g <= 1.26"},
    "ThermoExp": {"M/T_c": (1.31, 0.02), "chi2_red": 1.87},
}

ANSATZ_WINDOW = (0.84, math.inf)
POWERLAW_WINDOW = (0.0, 1.26)


def parse_uncertain(text: str) -> tuple:
    """'0.2228492(15)' -> (0.2228492, 1.5e-06)."""
    text = text.strip()
    if "(" not in text:
        return float(text), 0.0
    val, err = text.rstrip(")").split("(")
    decimals = len(val.split(".")[1]) if "." in val else 0
    return float(val), int(err) * 10.0 ** (-decimals)


@dataclass(frozen=True)
class ScaleTable:
    rows: tuple

    @classmethod
    def default(cls) -> "ScaleTable":
        return cls(tuple((n, *parse_uncertain(s)) for n, s in _SCALE_ROWS))

    def __post_init__(self):
        betas = [r[1] for r in self.rows]
        if any(b2 >= b1 for b1, b2 in zip(betas, betas[1:])):
            raise ValueError("beta_c must decrease strictly with N_tau,c")

    def lookup(self, n_tau_c: int) -> tuple:
        for n, b, e in self.rows:
            if n == n_tau_c:
                return b, e
        raise KeyError(n_tau_c)

    @property
    def n_tau_values(self) -> list:
        return [r[0] for r in self.rows]


SCALE_TABLE = ScaleTable.default()


def scale_lookup(n_tau_c: int, table: ScaleTable = SCALE_TABLE) -> tuple:
    """(beta_c, a T_c) for a tabulated N_tau,c; no interpolation."""
    try:
        beta_c, _ = table.lookup(int(n_tau_c))
    except KeyError:
        raise ValueError(f"N_tau,c = {n_tau_c} not in the scale table (available: {table.n_tau_values})") from None
    return beta_c, 1.0 / int(n_tau_c)


def l_times_tc(l_lattice: float, n_tau_c: int) -> float:
    return l_lattice / n_tau_c


# fitting engine


@dataclass
class FitResult:
    model: str
    params: dict
    errors: dict
    covariance: np.ndarray
    chi2: float
    dof: int
    fit_range: tuple = (None, None)
    converged: bool = True
    message: str = ""
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def chi2_red(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else 0.0

    def to_json_dict(self) -> dict:
        return {"model": self.model, "params": self.params, "errors": self.errors,
                "covariance": np.asarray(self.covariance).tolist(), "chi2": self.chi2, "dof": self.dof,
                "chi2_red": self.chi2_red, "fit_range": list(self.fit_range), "converged": self.converged,
                "message": self.message, "flags": list(self.flags), "extra": self.extra}


def _lm(fun, jac, p0, x, y, sigma, max_iter: int = 500):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("errors must be positive")

    def res(p):
        return (fun(x, p) - y) / sigma

    def jres(p):
        return jac(x, p) / sigma[:, None]

    out = optimize.least_squares(res, np.asarray(p0, dtype=float), jac=jres, method="lm",
                                 ftol=1e-10, xtol=1e-10, gtol=1e-10, max_nfev=max_iter)
    J = jres(out.x)
    cov = np.linalg.pinv(J.T @ J)
    cov = 0.5 * (cov + cov.T)
    chi2 = float(np.sum(out.fun ** 2))
    return out, cov, chi2


def ansatz(x, A, alpha):
    """f(x; A, alpha) = A x int_0^inf exp(-2 alpha x sqrt(1+t^2)) dt = A x K_1(2 alpha x)."""
    x = np.asarray(x, dtype=float)
    return A * x * special.k1(2.0 * alpha * x)


def ansatz_jacobian(x, p):
    A, alpha = p
    x = np.asarray(x, dtype=float)
    b = 2.0 * alpha * x
    k1 = special.k1(b)
    dk1 = -special.k0(b) - k1 / b
    return np.stack([x * k1, A * x * dk1 * 2.0 * x], axis=1)


def ansatz_integral(b: float) -> float:
    """int_0^inf exp(-b sqrt(1+t^2)) dt by adaptive quadrature (cross-check of K_1)."""
    val, _ = integrate.quad(lambda t: math.exp(-b * math.sqrt(1.0 + t * t)), 0.0, math.inf,
                            epsabs=0.0, epsrel=1e-12, limit=200)
    return val


def powerlaw(x, B, c):
    return B / np.asarray(x, dtype=float) ** c


def powerlaw_jacobian(x, p):
    B, c = p
    x = np.asarray(x, dtype=float)
    f = x ** (-c)
    return np.stack([f, -B * f * np.log(x)], axis=1)


def _window(x, y, e, window):
    x, y, e = (np.asarray(v, dtype=float) for v in (x, y, e))
    lo, hi = window
    sel = (x >= lo) & (x <= hi)
    return x[sel], y[sel], e[sel]


def _result(model, names, out, cov, chi2, n, window, flags=None):
    p = out.x
    return FitResult(model=model, params={k: float(v) for k, v in zip(names, p)},
                     errors={k: float(math.sqrt(max(cov[i, i], 0.0))) for i, k in enumerate(names)},
                     covariance=cov, chi2=chi2, dof=n - len(names), fit_range=window,
                     converged=bool(out.success), message=str(out.message),
                     flags=list(flags or []) + ([] if out.success else ["not_converged"]))


def fit_ansatz(x, y, err, window=ANSATZ_WINDOW, p0=(0.33, 0.36)) -> FitResult:
    """Least-squares fit of A x K_1(2 alpha x) to normalized c-function points vs x = l m_g."""
    x, y, e = _window(x, y, err, window)
    if x.size < 3:
        raise ValueError(f"need >= 3 points in the window {window}, got {x.size}")
    if np.any(x <= 0):
        raise ValueError("x = l m_g must be positive")
    alpha0 = float(p0[1])
    shape = ansatz(x, 1.0, alpha0)
    w = 1.0 / e ** 2
    A0 = float(np.sum(w * shape * y) / np.sum(w * shape * shape))
    out, cov, chi2 = _lm(lambda xx, p: ansatz(xx, *p), ansatz_jacobian, (A0, alpha0), x, y, e)
    return _result("AnsatzBessel", ["A", "alpha"], out, cov, chi2, x.size, tuple(window))


def fit_powerlaw(x, y, err, window=POWERLAW_WINDOW) -> FitResult:
    """Least-squares fit of B / x^c."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("power-law fits need x > 0")
    x, y, e = _window(x, y, err, window)
    if x.size < 3:
        raise ValueError(f"need >= 3 points in the window {window}, got {x.size}")
    pos = y > 0
    if pos.sum() >= 2:
        slope, icpt = np.polyfit(np.log(x[pos]), np.log(y[pos]), 1)
        p0 = (math.exp(icpt), -slope)
    else:
        p0 = (float(np.mean(y)), 0.5)
    out, cov, chi2 = _lm(lambda xx, p: powerlaw(xx, *p), powerlaw_jacobian, p0, x, y, e)
    return _result("PowerLaw", ["B", "c"], out, cov, chi2, x.size, tuple(window))


# infinite-volume extrapolation


def thermo_model(L, c, A, M):
    return c + A * np.exp(-M * np.asarray(L, dtype=float))


def _thermo_global(groups, p):
    M = p[0]
    out = []
    for g, (L, _, _) in enumerate(groups):
        out.append(thermo_model(L, p[1 + 2 * g], p[2 + 2 * g], M))
    return np.concatenate(out)


def _thermo_jac(groups, p):
    M = p[0]
    n = sum(len(L) for L, _, _ in groups)
    J = np.zeros((n, p.size))
    row = 0
    for g, (L, _, _) in enumerate(groups):
        L = np.asarray(L, dtype=float)
        ex = np.exp(-M * L)
        k = L.size
        J[row:row + k, 0] = -p[2 + 2 * g] * L * ex
        J[row:row + k, 1 + 2 * g] = 1.0
        J[row:row + k, 2 + 2 * g] = ex
        row += k
    return J


def _linear_ca(L, y, e, M):
    X = np.stack([np.ones_like(L), np.exp(-M * L)], axis=1) / e[:, None]
    sol, *_ = np.linalg.lstsq(X, y / e, rcond=None)
    r = X @ sol - y / e
    return sol, float(r @ r)


def thermo_extrapolate(groups: dict, M0: float | None = None, min_volumes: int = 3) -> tuple:
    """Global fit f(L) = c_g + A_g exp(-M L) with one shared M.

    groups maps a key (e.g. (beta, l)) to (L, value, error) arrays.  Groups with
    fewer than min_volumes volumes are passed through (largest volume)
    and flagged "unextrapolated".  Returns (FitResult or None, {key: (c, err, flags)}).
    """
    fitted, passed = [], {}
    for key, (L, y, e) in groups.items():
        L, y, e = (np.asarray(v, dtype=float) for v in (L, y, e))
        if L.size < min_volumes:
            i = int(np.argmax(L))
            passed[key] = (float(y[i]), float(e[i]), ["unextrapolated"])
        else:
            fitted.append((key, (L, y, e)))
    results = dict(passed)
    if not fitted:
        return None, results
    data = [d for _, d in fitted]
    L_all = np.concatenate([d[0] for d in data])
    y_all = np.concatenate([d[1] for d in data])
    e_all = np.concatenate([d[2] for d in data])
    # M enters nonlinearly: scan it with (c, A) solved linearly, then refine jointly
    if M0 is None:
        span = max(np.ptp(L_all), 1e-12)
        grid = np.geomspace(0.05 / span, 50.0 / span, 400)
        costs = [sum(_linear_ca(L, y, e, M)[1] for L, y, e in data) for M in grid]
        M0 = float(grid[int(np.argmin(costs))])
    p0 = [M0]
    for L, y, e in data:
        sol, _ = _linear_ca(L, y, e, M0)
        p0 += [sol[0], sol[1]]
    names = ["M"] + [f"{n}_{i}" for i in range(len(data)) for n in ("c", "A")]
    out, cov, chi2 = _lm(lambda _x, p: _thermo_global(data, p), lambda _x, p: _thermo_jac(data, p),
                         p0, None, y_all, e_all)
    res = _result("ThermoExp", names, out, cov, chi2, y_all.size, (float(L_all.min()), float(L_all.max())))
    A = np.array([res.params[f"A_{i}"] for i in range(len(data))])
    eA = np.array([res.errors[f"A_{i}"] for i in range(len(data))])
    if np.all(np.abs(A) <= 2.0 * eA + 1e-12 * (1 + np.abs(y_all).max())):
        # no visible finite-volume effect: M unconstrained, c is the weighted mean
        res.flags.append("M_unconstrained")
        res.params["M"] = float("nan")
        res.errors["M"] = float("nan")
        for i, (L, y, e) in enumerate(data):
            w = 1.0 / e ** 2
            res.params[f"c_{i}"] = float(np.sum(w * y) / np.sum(w))
            res.errors[f"c_{i}"] = float(1.0 / math.sqrt(np.sum(w)))
            res.params[f"A_{i}"] = 0.0
    res.extra["keys"] = [repr(k) for k, _ in fitted]
    for i, (key, _) in enumerate(fitted):
        results[key] = (res.params[f"c_{i}"], res.errors[f"c_{i}"], list(res.flags))
    return res, results


# continuum extrapolation


def _line(a, y, e):
    w = 1.0 / np.asarray(e, dtype=float) ** 2
    X = np.stack([np.ones_like(a), a], axis=1)
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    beta = cov @ (X.T @ (w * y))
    return float(beta[0]), float(math.sqrt(cov[0, 0])), float(beta[1])


@dataclass
class ContinuumResult:
    value: float
    stat: float
    syst: float
    backward: float
    mid: float
    flags: list = field(default_factory=list)

    @property
    def total_error(self) -> float:
        return math.hypot(self.stat, self.syst)


def continuum_extrapolate(a, y_back, e_back, y_mid, e_mid) -> ContinuumResult:
    """Linear-in-a extrapolation under the backward and mid-point conventions.

    Central value: mid-point extrapolation; syst: |difference| of the two.
    """
    a = np.asarray(a, dtype=float)
    y_back, e_back, y_mid, e_mid = (np.asarray(v, dtype=float) for v in (y_back, e_back, y_mid, e_mid))
    if np.unique(a).size < 2:
        if a.size < 1:
            raise ValueError("no points")
        i = int(np.argmin(a))
        return ContinuumResult(value=float(y_mid[i]), stat=float(e_mid[i]), syst=abs(float(y_mid[i] - y_back[i])),
                               backward=float(y_back[i]), mid=float(y_mid[i]), flags=["single_spacing"])
    vb, _, _ = _line(a, y_back, e_back)
    vm, sm, _ = _line(a, y_mid, e_mid)
    return ContinuumResult(value=vm, stat=sm, syst=abs(vm - vb), backward=vb, mid=vm)


# normalization


def normalize_cfunction(points, c2_cft):
    """Divide values and errors by C_2^CFT; the raw values are kept for an exact round trip."""
    if c2_cft is None:
        raise ValueError("C_2^CFT is not set: supply analysis.c2_cft in the run config")
    if not c2_cft > 0:
        raise ValueError("C_2^CFT must be positive")
    out = []
    for p in points:
        if p.normalized:
            raise ValueError("point already normalized")
        q = replace(p, value=p.value / c2_cft, error=p.error / c2_cft, value_mid=p.value_mid / c2_cft,
                    error_mid=p.error_mid / c2_cft, normalized=True)
        q._raw = p
        out.append(q)
    return out


def denormalize_cfunction(points, c2_cft):
    out = []
    for p in points:
        raw = getattr(p, "_raw", None)
        if raw is not None:
            out.append(raw)
        else:
            out.append(replace(p, value=p.value * c2_cft, error=p.error * c2_cft,
                               value_mid=p.value_mid * c2_cft, error_mid=p.error_mid * c2_cft,
                               normalized=False))
    return out


def plot_cfunction(path, x, y, err, fits=(), xlabel=r"$l\,m_g$", ylabel=r"$\bar C_2$"):
    """c-function vs l m_g with fit overlays."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.errorbar(x, y, yerr=err, fmt="o", ms=4, capsize=2, label="data")
    xs = np.linspace(max(min(x) * 0.8, 1e-3), max(x) * 1.2, 300)
    for fr in fits:
        if fr.model == "AnsatzBessel":
            ax.plot(xs, ansatz(xs, fr.params["A"], fr.params["alpha"]), label="Ansatz")
        elif fr.model == "PowerLaw":
            ax.plot(xs, powerlaw(xs, fr.params["B"], fr.params["c"]), "--", label="power law")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


# end-to-end pipeline: normalize -> infinite volume -> continuum -> fits


def point_from_row(row: dict):
    """CFunctionPoint from a CSV row (strings; empty cells are None)."""
    from .neq import CFUNCTION_FIELDS, CFunctionPoint

    ints = {"n", "n_tau", "n_s", "dimension", "boundary_sites", "n_tau_c", "volume"}
    kw = {}
    for k in CFUNCTION_FIELDS:
        v = row.get(k, "")
        if v is None or v == "":
            kw[k] = None
        elif k == "normalized":
            kw[k] = str(v).lower() in ("true", "1")
        elif k in ints:
            kw[k] = int(float(v))
        else:
            kw[k] = float(v)
    kw = {k: v for k, v in kw.items() if v is not None or k in ("n_tau_c", "a_m_g", "volume")}
    return CFunctionPoint(**kw)


def mg_over_tc_from_table(table, n_tau_c_values, tol: float = 1e-9) -> float:
    """m_g/T_c = (a m_g)(beta_c) N_tau,c from a user table of (beta, a m_g), averaged over N_tau,c."""
    table = [(float(b), float(m)) for b, m in table]
    vals = []
    for n in sorted(set(n_tau_c_values)):
        beta_c, _ = scale_lookup(n)
        hit = [m for b, m in table if abs(b - beta_c) <= tol]
        if not hit:
            raise ValueError(f"m_g table has no entry for beta_c = {beta_c} (N_tau,c = {n})")
        vals.append(hit[0] * n)
    return float(np.mean(vals))


@dataclass
class PipelineResult:
    thermo: list
    continuum: list
    fits: list
    thermo_fits: list
    warnings: list
    mg_over_tc: float | None = None


def run_pipeline(points, c2_cft, mg_over_tc=None, mg_table=None, fits=("ansatz", "powerlaw"),
                 ansatz_window=ANSATZ_WINDOW, powerlaw_window=POWERLAW_WINDOW, min_volumes: int = 3) -> PipelineResult:
    warnings = []
    pts = normalize_cfunction(points, c2_cft)
    groups = {}
    for p in pts:
        key = (p.dimension, p.n, p.n_tau_c, p.n_tau, p.beta, p.l)
        L = p.n_s / p.n_tau_c if p.n_tau_c else float(p.n_s)
        groups.setdefault(key, []).append((L, p))
    thermo_rows, thermo_fits = [], []
    conv = {}
    for name, vk, ek in (("backward", "value", "error"), ("mid", "value_mid", "error_mid")):
        data = {}
        for key, items in groups.items():
            items = sorted(items, key=lambda t: t[0])
            data[key] = (np.array([t[0] for t in items]), np.array([getattr(t[1], vk) for t in items]),
                         np.array([getattr(t[1], ek) for t in items]))
        fr, res = thermo_extrapolate(data, min_volumes=min_volumes)
        if fr is not None:
            fr.extra["convention"] = name
            thermo_fits.append(fr)
        conv[name] = res
    for key in groups:
        vb, eb, fb = conv["backward"][key]
        vm, em, fm = conv["mid"][key]
        dim, n, ntc, ntau, beta, l = key
        thermo_rows.append({"dimension": dim, "n": n, "n_tau_c": ntc, "n_tau": ntau, "beta": beta, "l": l,
                            "value": vb, "error": eb, "value_mid": vm, "error_mid": em,
                            "flags": sorted(set(fb) | set(fm))})
    if any("unextrapolated" in r["flags"] for r in thermo_rows):
        warnings.append("some points have fewer than %d volumes and were not extrapolated to infinite volume"
                        % min_volumes)

    cgroups = {}
    for r in thermo_rows:
        if r["n_tau_c"] is None:
            warnings.append(f"point beta={r['beta']} l={r['l']} has no N_tau,c: kept out of the continuum limit")
            continue
        cgroups.setdefault((r["dimension"], r["n"], round(r["l"] / r["n_tau_c"], 9)), []).append(r)
    cont_rows = []
    for (dim, n, ltc), rows in sorted(cgroups.items()):
        a = np.array([1.0 / r["n_tau_c"] for r in rows])
        cr = continuum_extrapolate(a, [r["value"] for r in rows], [r["error"] for r in rows],
                                   [r["value_mid"] for r in rows], [r["error_mid"] for r in rows])
        flags = sorted(set(cr.flags) | {f for r in rows for f in r["flags"]})
        cont_rows.append({"dimension": dim, "n": n, "l_tc": ltc, "value": cr.value, "stat": cr.stat,
                          "syst": cr.syst, "error": cr.total_error, "backward": cr.backward, "mid": cr.mid,
                          "n_spacings": int(np.unique(a).size), "flags": flags})
    if any("single_spacing" in r["flags"] for r in cont_rows):
        warnings.append("some points have a single lattice spacing: no continuum extrapolation")

    fit_results = []
    if fits:
        if mg_over_tc is None:
            if mg_table is None:
                raise ValueError("l m_g axes need the glueball mass: set analysis.mg_table or analysis.mg_over_tc")
            mg_over_tc = mg_over_tc_from_table(mg_table, [r["n_tau_c"] for r in thermo_rows
                                                          if r["n_tau_c"] is not None])
        for r in cont_rows:
            r["x"] = r["l_tc"] * mg_over_tc
        x = np.array([r["x"] for r in cont_rows])
        y = np.array([r["value"] for r in cont_rows])
        e = np.array([r["error"] for r in cont_rows])
        for name, fn, win in (("ansatz", fit_ansatz, ansatz_window), ("powerlaw", fit_powerlaw, powerlaw_window)):
            if name not in fits:
                continue
            try:
                fit_results.append(fn(x, y, e, window=tuple(win)))
            except ValueError as err:
                warnings.append(f"{name} fit skipped: {err}")
    return PipelineResult(thermo=thermo_rows, continuum=cont_rows, fits=fit_results, thermo_fits=thermo_fits,
                          warnings=warnings, mg_over_tc=mg_over_tc)
