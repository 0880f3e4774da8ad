"""Synthetic cause-effect scenarios and their ground-truth targets.

The data-generating process models a binary treatment assigned by a
logistic rule on sex and standardized blood pressure, a linear untreated
outcome, and an individual effect that is the sum of a feature-driven
mean and a latent zero-mean deviation u1. A third measured feature x0 is
correlated with u1 (corr rho), so rho sweeps how much of the latent
effect heterogeneity is explainable from measured features.

Scenario kinds
--------------
baseline     Gaussian u1 independent of the outcome noise.
dependent    (outcome noise, u1) jointly Gaussian with correlation kappa;
             the u1 scale is recalibrated so var(Y|treated, x) is
             unchanged from baseline.
lognormal    u1 is a shifted log-normal with the same mean and variance.
nonlinear    effect mean is (tau0 + tau_sex*sex) * exp(tau_sbp * sbp).
confounder   tau_sex = 0, so sex confounds but does not modify; the
             strong variant raises beta_sex/alpha_sex.
randomized   treatment is Bernoulli(0.15), independent of everything.

Generation is a pure function of the config (Philox counter-based
stream), so datasets can be produced concurrently from per-replication
seeds without any shared state.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import expit, ndtr

from .data import ObservedData

SCENARIO_KINDS = ("baseline", "dependent", "lognormal", "nonlinear",
                  "confounder", "randomized")

RANDOMIZED_TREAT_PROB = 0.15

_TRUTH_SEED = 0x7A9E0B1C


class ConfigError(ValueError):
    """Invalid scenario configuration; message names the offending field."""


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    n: int
    seed: int
    rho: float = 0.0
    kappa: float | None = None
    strong: bool = False
    delta: float = 2.0
    p_sex: float = 0.5
    alpha0: float = -1.7
    alpha_sex: float = -0.1
    alpha_sbp: float = 0.4
    beta0: float = 5.9
    beta_sex: float = 0.8
    beta_sbp: float = 0.5
    tau0: float = 0.45
    tau_sex: float = 0.1
    tau_sbp: float = 0.15
    sigma0: float = 1.6
    sigma1: float = 1.4

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"kind: unknown scenario {self.kind!r}")
        if self.n < 1:
            raise ConfigError(f"n: must be >= 1, got {self.n}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho: must be in [0, 1], got {self.rho}")
        if self.delta <= 0:
            raise ConfigError(f"delta: must be > 0, got {self.delta}")
        if not 0.0 < self.p_sex < 1.0:
            raise ConfigError(f"p_sex: must be in (0, 1), got {self.p_sex}")
        if self.sigma0 < 0:
            raise ConfigError(f"sigma0: must be >= 0, got {self.sigma0}")
        if self.sigma1 < 0:
            raise ConfigError(f"sigma1: must be >= 0, got {self.sigma1}")
        if self.kind == "dependent":
            if self.kappa is None:
                raise ConfigError("kappa: required for the dependent scenario")
            if not -1.0 <= self.kappa <= 1.0:
                raise ConfigError(f"kappa: must be in [-1, 1], got {self.kappa}")
        elif self.kappa is not None:
            raise ConfigError(
                f"kappa: only valid for the dependent scenario, not {self.kind!r}"
            )
        if self.strong and self.kind != "confounder":
            raise ConfigError(
                f"strong: only valid for the confounder scenario, not {self.kind!r}"
            )

    def effective_sigma1(self) -> float:
        """Scale of u1 actually used in generation. For the dependent
        scenario it is recalibrated so that var(Y^1 | x) =
        sigma0^2 + sigma1^2 stays at its baseline value."""
        if self.kind != "dependent":
            return self.sigma1
        k = self.kappa
        return -self.sigma0 * k + math.sqrt(
            self.sigma0 ** 2 * k ** 2 + self.sigma1 ** 2)

    def resolved(self) -> dict:
        d = asdict(self)
        d["sigma1_effective"] = self.effective_sigma1()
        return d


def scenario_config(kind: str, n: int, seed: int, **overrides) -> ScenarioConfig:
    """Build a config with the kind-specific parameter defaults applied
    before any explicit overrides."""
    defaults: dict = {}
    if kind == "nonlinear":
        defaults["tau_sbp"] = 0.2
    elif kind == "confounder":
        defaults["tau_sex"] = 0.0
        if overrides.get("strong"):
            defaults["beta_sex"] = 3.2
            defaults["alpha_sex"] = 3.0
    defaults.update(overrides)
    try:
        return ScenarioConfig(kind=kind, n=n, seed=seed, **defaults)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class HiddenColumns:
    """Ground truth reserved for evaluation; estimators never see this."""

    y0: np.ndarray
    y1: np.ndarray
    ite: np.ndarray
    tau_x: np.ndarray
    u1: np.ndarray
    n_y: np.ndarray


@dataclass(frozen=True)
class SimulatedDataset:
    config: ScenarioConfig
    x_sex: np.ndarray
    x_sbp: np.ndarray
    x0: np.ndarray
    a: np.ndarray
    y: np.ndarray
    hidden: HiddenColumns

    @property
    def n(self) -> int:
        return self.y.size

    def observed(self) -> ObservedData:
        """Estimator-facing view without the ground-truth columns."""
        x = np.ascontiguousarray(
            np.column_stack([self.x_sex, self.x_sbp, self.x0]))
        return ObservedData(x=x, a=self.a.copy(), y=self.y.copy())


@dataclass(frozen=True)
class TrueTargets:
    ate: float
    sd: float
    pep: float


def _rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _draw_structural(config: ScenarioConfig, rng: np.random.Generator, n: int):
    """Features, noise and effect components, in a fixed draw order."""
    c = config
    s1 = c.effective_sigma1()
    x_sex = (rng.random(n) < c.p_sex).astype(np.float64)
    x_sbp = rng.standard_normal(n)
    z_ny = rng.standard_normal(n)
    z_u1 = rng.standard_normal(n)
    z_x0 = rng.standard_normal(n)

    n_y = c.sigma0 * z_ny
    if c.kind == "dependent":
        k = c.kappa
        u1 = s1 * (k * z_ny + math.sqrt(1.0 - k * k) * z_u1)
    elif c.kind == "lognormal":
        # shifted log-normal with mean 0 and variance sigma1^2
        s_sq = math.log(0.5 * math.sqrt(4.0 * s1 ** 2 + 1.0) + 0.5)
        shift = math.exp(0.5 * s_sq)
        u1 = np.exp(math.sqrt(s_sq) * z_u1) - shift
    else:
        u1 = s1 * z_u1

    x0 = c.rho * c.delta * u1 + c.delta * s1 * math.sqrt(
        1.0 - c.rho ** 2) * z_x0

    if c.kind == "nonlinear":
        tau_mean = (c.tau0 + c.tau_sex * x_sex) * np.exp(c.tau_sbp * x_sbp)
    else:
        tau_mean = c.tau0 + c.tau_sex * x_sex + c.tau_sbp * x_sbp
    return x_sex, x_sbp, x0, n_y, u1, tau_mean


def generate_dataset(config: ScenarioConfig) -> SimulatedDataset:
    """Simulate one dataset. Identical configs (including seed) yield
    bit-identical output."""
    c = config
    rng = _rng_for(c.seed)
    n = c.n
    x_sex, x_sbp, x0, n_y, u1, tau_mean = _draw_structural(c, rng, n)

    ite = tau_mean + u1
    y0 = c.beta0 + c.beta_sex * x_sex + c.beta_sbp * x_sbp + n_y
    y1 = y0 + ite

    n_a = rng.random(n)
    if c.kind == "randomized":
        a = (n_a < RANDOMIZED_TREAT_PROB).astype(np.float64)
    else:
        p = expit(c.alpha0 + c.alpha_sbp * x_sbp + c.alpha_sex * x_sex)
        a = (p > n_a).astype(np.float64)
    y = np.where(a > 0, y1, y0)

    # Conditional mean of the effect given all measured features. For
    # Gaussian u1 the x0 term is E[u1 | x0] = (rho/delta) * x0 exactly;
    # for the lognormal scenario it is the linear projection, which is
    # exact only at rho = 0.
    tau_x = tau_mean + (c.rho / c.delta) * x0

    hidden = HiddenColumns(y0=y0, y1=y1, ite=ite, tau_x=tau_x, u1=u1, n_y=n_y)
    return SimulatedDataset(config=c, x_sex=x_sex, x_sbp=x_sbp, x0=x0,
                            a=a, y=y, hidden=hidden)


def baseline_closed_form(config: ScenarioConfig) -> TrueTargets:
    """Exact effect-distribution characteristics for the baseline DGP."""
    c = config
    p = c.p_sex
    s1 = c.effective_sigma1()
    ate = c.tau0 + c.tau_sex * p
    sd = math.sqrt(c.tau_sex ** 2 * p * (1 - p) + c.tau_sbp ** 2 + s1 ** 2)
    s_within = math.sqrt(c.tau_sbp ** 2 + s1 ** 2)
    pep = p * float(ndtr((c.tau0 + c.tau_sex) / s_within)) + \
        (1 - p) * float(ndtr(c.tau0 / s_within))
    return TrueTargets(ate=ate, sd=sd, pep=pep)


def true_targets(config: ScenarioConfig, mc_n: int = 1_000_000) -> TrueTargets:
    """ATE, SD and positive-effect probability of the effect
    distribution: closed form for the baseline, Monte Carlo over hidden
    effects otherwise. Deterministic for fixed (config, mc_n)."""
    if config.kind == "baseline":
        return baseline_closed_form(config)
    if mc_n < 100_000:
        raise ConfigError(f"mc_n: need >= 100000 Monte Carlo draws, got {mc_n}")
    rng = _rng_for(_TRUTH_SEED)
    _, _, _, _, u1, tau_mean = _draw_structural(config, rng, mc_n)
    ite = tau_mean + u1
    return TrueTargets(
        ate=float(ite.mean()),
        sd=float(ite.std(ddof=1)),
        pep=float((ite > 0).mean()),
    )


def with_seed(config: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(config, seed=int(seed))
