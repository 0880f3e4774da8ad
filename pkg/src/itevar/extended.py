"""Conditional effect-variance estimation on top of a fitted causal
forest, plus the distribution summaries built from it.

The squared outcome admits the same residual-on-residual representation
as the outcome itself; its local slope identifies

    delta(x) = tau(x)^2 + var(effect | x) + 2 tau(x) theta0(x)

when the effect deviation is independent of the untreated outcome given
x. Fitting one extra regression forest for E[Y^2 | x] therefore yields a
per-row variance estimate by subtraction:

    sigma1_sq(x) = delta(x) - tau(x)^2 - 2 tau(x) theta0(x),

with theta0(x) = m(x) - e(x) tau(x) the untreated conditional mean. The
raw estimate may be negative; it is stored unclamped and floored at zero
exactly where the population-SD and positive-effect formulas do so.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .causal import CausalForest, fit_causal_forest
from .data import ObservedData
from .forest import ForestParams, fit_regression_forest

__all__ = [
    "ExtendedFit",
    "variance_from_h",
    "ITEDensity",
    "extend_causal_forest",
    "fit_extended",
    "population_sd",
    "pep_gaussian",
    "sd_cate_only",
    "pep_cate_only",
    "ite_density",
]

DENSITY_GRID_POINTS = 512
DENSITY_CUT = 4.0  # tail width in bandwidths; keeps grid mass within 1e-3 of 1


@dataclass
class ExtendedFit:
    """Per-row output of the extended fit (all vectors length n)."""

    tau_hat: np.ndarray
    theta0_hat: np.ndarray
    delta_hat: np.ndarray
    sigma1_sq_hat: np.ndarray
    h_hat_oob: np.ndarray
    ate: float
    ate_se: float
    denominator: str


def variance_from_h(cf: CausalForest, h_hat: np.ndarray) -> ExtendedFit:
    """Variance extension given externally supplied out-of-bag
    predictions of the squared outcome (exposed so exact references can
    be plugged in)."""
    if not cf.orthogonalized:
        raise ValueError(
            "the variance extension requires an orthogonalized causal forest")
    data = cf.data
    c = cf.centered
    h_hat = np.asarray(h_hat, dtype=np.float64)
    ysq_resid = (data.y * data.y - h_hat) * c.a_tilde
    cols = np.ascontiguousarray(np.column_stack([
        c.y_tilde * c.a_tilde,
        c.a_tilde * c.a_tilde,
        c.a_tilde,
        ysq_resid,
    ]))
    sums, used = cf.accumulate_oob(cols)
    tau = cf._ratio(sums[:, :3], used)
    den = sums[:, 1] if cf.denominator == "squared" else sums[:, 2]
    delta = sums[:, 3] / den
    if cf._tau_oob is None:
        cf._tau_oob = tau
    theta0 = c.m_hat_oob - c.e_hat_oob * tau
    sigma1_sq = delta - (tau * tau + 2.0 * tau * theta0)
    aipw = cf.ate_aipw()
    return ExtendedFit(
        tau_hat=tau, theta0_hat=theta0, delta_hat=delta,
        sigma1_sq_hat=sigma1_sq, h_hat_oob=h_hat,
        ate=aipw.ate, ate_se=aipw.se, denominator=cf.denominator)


def extend_causal_forest(cf: CausalForest, n_jobs: int = 1) -> ExtendedFit:
    """Run the variance extension on an already fitted causal forest
    (the causal forest is reused, not refit)."""
    if not cf.orthogonalized:
        raise ValueError(
            "the variance extension requires an orthogonalized causal forest")
    data = cf.data
    h_forest = fit_regression_forest(
        data.x, data.y * data.y, cf.params.with_seed(cf.h_seed),
        target_name="y_squared", n_jobs=n_jobs)
    return variance_from_h(cf, h_forest.predict_oob(data.x))


def fit_extended(data: ObservedData, params: ForestParams,
                 denominator: str = "squared", n_jobs: int = 1) -> ExtendedFit:
    """One-shot fit: causal forest plus the variance extension."""
    cf = fit_causal_forest(data, params, orthogonalized=True,
                           denominator=denominator, n_jobs=n_jobs)
    return extend_causal_forest(cf, n_jobs=n_jobs)


def population_sd(fit: ExtendedFit) -> float:
    """SD of the effect over the whole population: the mean of the
    per-row second moments minus the squared average effect, floored at
    zero (raw per-row variances enter unclamped)."""
    second_moment = float(np.mean(fit.sigma1_sq_hat + fit.tau_hat ** 2))
    return float(np.sqrt(max(0.0, second_moment - fit.ate ** 2)))


def pep_gaussian(fit: ExtendedFit) -> float:
    """Positive-effect probability under per-row Gaussian conditional
    effect distributions N(tau_hat, max(0, sigma1_sq_hat)). Zero-variance
    rows contribute an indicator (1/2 when the mean is exactly zero)."""
    tau = fit.tau_hat
    var = np.maximum(fit.sigma1_sq_hat, 0.0)
    out = np.empty_like(tau)
    pos = var > 0
    out[pos] = ndtr(tau[pos] / np.sqrt(var[pos]))
    out[~pos] = np.where(tau[~pos] > 0, 1.0, np.where(tau[~pos] == 0, 0.5, 0.0))
    return float(out.mean())


def sd_cate_only(tau_hat: np.ndarray) -> float:
    """Empirical SD of the local effect estimates themselves."""
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    if tau_hat.size < 2:
        raise ValueError("need at least 2 effect estimates for an SD")
    return float(tau_hat.std(ddof=1))


def pep_cate_only(tau_hat: np.ndarray) -> float:
    """Fraction of strictly positive local effect estimates."""
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    if tau_hat.size == 0:
        raise ValueError("need at least 1 effect estimate")
    return float((tau_hat > 0).mean())


@dataclass(frozen=True)
class ITEDensity:
    grid: np.ndarray
    density: np.ndarray
    method: str

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


def kde_bandwidth(values: np.ndarray) -> float:
    """Rule-of-thumb bandwidth 0.9 * min(sd, IQR/1.34) * n^(-1/5), with
    the usual fallbacks when the spread collapses."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 2:
        raise ValueError("need at least 2 values for a bandwidth")
    sd = float(values.std(ddof=1))
    q25, q75 = np.quantile(values, [0.25, 0.75])
    lo = min(sd, float(q75 - q25) / 1.34)
    if lo == 0.0:
        lo = sd if sd > 0 else (abs(float(values[0])) or 1.0)
    return 0.9 * lo * n ** (-0.2)


def _resolve_grid(grid, lo: float, hi: float) -> np.ndarray:
    if grid is None:
        return np.linspace(lo, hi, DENSITY_GRID_POINTS)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2 or not (np.diff(grid) > 0).all():
        raise ValueError("grid must be a strictly increasing vector")
    return grid


def _gaussian_mix_eval(grid: np.ndarray, means: np.ndarray,
                       sds: np.ndarray) -> np.ndarray:
    out = np.zeros_like(grid)
    step = 100_000 // max(grid.size, 1) + 1
    inv = 1.0 / sds
    norm = inv / np.sqrt(2.0 * np.pi)
    for s in range(0, means.size, step):
        e = min(s + step, means.size)
        z = (grid[None, :] - means[s:e, None]) * inv[s:e, None]
        out += (norm[s:e, None] * np.exp(-0.5 * z * z)).sum(axis=0)
    return out / means.size


def ite_density(tau_hat: np.ndarray, method: str = "kde",
                sigma1_sq: np.ndarray | None = None,
                grid: np.ndarray | None = None) -> ITEDensity:
    """Effect-distribution density estimate.

    method="kde": Gaussian kernel density over the local effect
    estimates with the rule-of-thumb bandwidth.
    method="mixture": equal-weight Gaussian mixture with per-row means
    tau_hat and variances max(0, sigma1_sq); zero-variance components
    fall back to the KDE bandwidth so every component has a density.
    """
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    bw = kde_bandwidth(tau_hat)
    if method == "kde":
        g = _resolve_grid(grid, tau_hat.min() - DENSITY_CUT * bw,
                          tau_hat.max() + DENSITY_CUT * bw)
        dens = _gaussian_mix_eval(g, tau_hat, np.full(tau_hat.size, bw))
    elif method == "mixture":
        if sigma1_sq is None:
            raise ValueError("mixture method needs the sigma1_sq vector")
        sds = np.sqrt(np.maximum(np.asarray(sigma1_sq, dtype=np.float64), 0.0))
        sds[sds == 0.0] = bw
        smax = float(sds.max())
        g = _resolve_grid(grid, tau_hat.min() - DENSITY_CUT * smax,
                          tau_hat.max() + DENSITY_CUT * smax)
        dens = _gaussian_mix_eval(g, tau_hat, sds)
    else:
        raise ValueError(f"unknown density method {method!r}")
    return ITEDensity(grid=g, density=dens, method=method)


def density_for(fit_or_tau, method: str, grid=None) -> ITEDensity:
    """Convenience dispatcher: an ExtendedFit uses its own variance
    vector for the mixture; a bare tau vector only supports the KDE."""
    if isinstance(fit_or_tau, ExtendedFit):
        return ite_density(fit_or_tau.tau_hat, method=method,
                           sigma1_sq=fit_or_tau.sigma1_sq_hat, grid=grid)
    return ite_density(np.asarray(fit_or_tau), method=method, grid=grid)


def export_fit_csv(fit: ExtendedFit, path, header_comments=None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header_comments or []:
            fh.write(f"# {line}\n")
        fh.write("i,tau_hat,theta0_hat,delta_hat,sigma1_sq_hat\n")
        for i in range(fit.tau_hat.size):
            fh.write(f"{i},{fit.tau_hat[i]:.17g},{fit.theta0_hat[i]:.17g},"
                     f"{fit.delta_hat[i]:.17g},{fit.sigma1_sq_hat[i]:.17g}\n")


def export_density_csv(density: ITEDensity, path, header_comments=None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header_comments or []:
            fh.write(f"# {line}\n")
        fh.write("y,f_y,method\n")
        for g, f in zip(density.grid, density.density):
            fh.write(f"{g:.17g},{f:.17g},{density.method}\n")
