"""Adaptive Metropolis-within-Gibbs samplers for spatial two-part models.

Three latent parameterizations share one block-sampling engine:

* :class:`PicarZ` — basis coefficients on projected Moran eigenvectors with
  a graph-reduced prior precision, optionally cross-correlated between the
  occurrence and prevalence processes;
* :class:`FixedRankKriging` — bisquare basis coefficients with a spherical
  prior;
* :class:`GoldStandard` — full-rank latent fields written as L(phi) gamma
  through a fresh Cholesky of the exponential correlation matrix whenever a
  range parameter is proposed.

Vector blocks use random-walk proposals whose scale follows a
Robbins-Monro recursion toward a 0.234 acceptance rate (0.44 for scalars)
and whose shape adapts to the empirical chain covariance; adaptation is
frozen at the end of burn-in.  Precision parameters with conjugate Gamma
full conditionals are Gibbs-updated.
"""

import json
import re
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial.distance import cdist
from scipy.special import gammaln, log_ndtr

from .likelihoods import (
    TwoPartFamily,
    _log1mexp,
    _validate_obs,
    family_from_tag,
    occurrence_prob,
    positivity_prob,
    predictive_mean,
)
from .metrics import chain_ess
from .rank_selection import binarize_occurrence, fit_glm, prevalence_glm_kind

__all__ = [
    "PriorSpec",
    "SamplerConfig",
    "PicarZ",
    "FixedRankKriging",
    "GoldStandard",
    "Chain",
    "PredictionSummary",
    "fit",
    "predict",
    "log_posterior",
    "correlated_delta_logprior",
    "tau_full_conditional",
    "sample_adaptive_rw",
    "save_chain",
    "save_chain_summary",
    "load_chain",
]


@dataclass(frozen=True)
class PriorSpec:
    """Priors: Gaussian betas, Gamma precisions, inverse-gamma variances,
    uniform cross-correlation, and uniform range for the gold standard."""

    beta_var: float = 100.0
    tau_shape: float = 0.002
    tau_rate: float = 0.002
    sigma2_eps_shape: float = 0.002
    sigma2_eps_rate: float = 0.002
    sigma2_shape: float = 0.002
    sigma2_rate: float = 0.002
    phi_max: float = float(np.sqrt(2.0))

    def __post_init__(self):
        for name in ("beta_var", "tau_shape", "tau_rate", "sigma2_eps_shape",
                     "sigma2_eps_rate", "sigma2_shape", "sigma2_rate", "phi_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 150_000
    burnin: int | None = None
    thin: int = 10
    seed: int = 0
    adapt_window: int = 50
    target_vector: float = 0.234
    target_scalar: float = 0.44
    init_scale: float = 1.0

    def __post_init__(self):
        if self.burnin is None:
            object.__setattr__(self, "burnin", self.iterations // 3)
        if not 0 <= self.burnin < self.iterations:
            raise ValueError("burn-in must be shorter than the chain")
        if self.thin < 1 or self.adapt_window < 1 or self.init_scale <= 0:
            raise ValueError("thin, adapt_window, and init_scale must be positive")


# ---------------------------------------------------------------------------
# latent parameterizations


def _as_matrix(basis):
    return basis.vectors if hasattr(basis, "vectors") else np.asarray(basis)


class _BasisCv:
    """Validation-site designs for basis parameterizations."""

    def __init__(self, B_o, B_p):
        self.B_o = B_o
        self.B_p = B_p


class PicarZ:
    """Moran-basis parameterization: eta = X beta + A M delta.

    Carries the per-process basis and reduced prior precision; the dense
    n x p products A @ M are cached once so each proposal costs a single
    small matrix-vector product.
    """

    method = "picar"

    def __init__(self, A, basis_o, basis_p, precision_o, precision_p, correlated=False):
        M_o, M_p = _as_matrix(basis_o), _as_matrix(basis_p)
        if A.shape[1] != M_o.shape[0] or A.shape[1] != M_p.shape[0]:
            raise ValueError("mesh mismatch: projector columns differ from basis rows")
        if precision_o.dim != M_o.shape[1] or precision_p.dim != M_p.shape[1]:
            raise ValueError("reduced precision dimensions differ from basis ranks")
        self.A = A
        self.M_o, self.M_p = M_o, M_p
        self.precision_o, self.precision_p = precision_o, precision_p
        self.correlated = bool(correlated)
        if correlated:
            self.method = "picar-correlated"
        self.B_o = np.asarray(A @ M_o)
        self.B_p = np.asarray(A @ M_p)

    def cv_design(self, A_cv):
        if A_cv.shape[1] != self.M_o.shape[0]:
            raise ValueError("mesh mismatch: projector columns differ from basis rows")
        return _BasisCv(np.asarray(A_cv @ self.M_o), np.asarray(A_cv @ self.M_p))


class FixedRankKriging:
    """Bisquare-basis comparator: eta = X beta + Phi delta, delta ~ N(0, tau^{-1} I)."""

    method = "frk"
    correlated = False

    def __init__(self, design):
        self.design = design
        B = np.asarray(design.matrix)
        self.B_o = B
        self.B_p = B
        p = B.shape[1]
        eye = np.eye(p)
        from .spectral import ReducedPrecision

        self.precision_o = ReducedPrecision(eye, eye.copy(), 0.0)
        self.precision_p = self.precision_o

    def cv_design(self, sites_cv):
        Phi = self.design.evaluate(sites_cv)
        return _BasisCv(Phi, Phi)


class GoldStandard:
    """Reparameterized full-rank fields: W = L(phi) gamma, gamma ~ N(0, sigma2 I).

    Every range proposal triggers a fresh Cholesky of the exponential
    correlation matrix, which is the comparator's dominant cost.
    """

    method = "gold"
    correlated = False

    def __init__(self, sites, jitter=1e-10):
        self.sites = np.asarray(sites, dtype=float)
        self.D = cdist(self.sites, self.sites)
        self.jitter = jitter

    def corr_cholesky(self, phi):
        R = np.exp(-self.D / phi)
        R[np.diag_indices_from(R)] += self.jitter
        return np.linalg.cholesky(R)

    def cv_design(self, sites_cv):
        return _GoldCv(self, np.asarray(sites_cv, dtype=float))


class _GoldCv:
    def __init__(self, param, sites_cv):
        self.param = param
        self.D_cross = cdist(sites_cv, param.sites)

    def field(self, phi, gamma):
        """Conditional-mean interpolation of W = L(phi) gamma at new sites."""
        L = self.param.corr_cholesky(phi)
        x = solve_triangular(L.T, gamma, lower=False)
        return np.exp(-self.D_cross / phi) @ x


# ---------------------------------------------------------------------------
# likelihood evaluator with per-fit caches


class _LogLik:
    """Total log-likelihood as a function of the two linear predictors.

    Splits the data once into zero and positive parts and precomputes the
    constants (log factorials, log responses) so a call costs a handful of
    vectorized operations.
    """

    def __init__(self, family, Z, link):
        z = _validate_obs(family, np.asarray(Z, dtype=float))
        self.family = family
        self.pos = z > 0
        self.zero = ~self.pos
        self.zpos = z[self.pos]
        self.n_pos = int(self.pos.sum())
        if link == "logit":
            self._lpi = lambda eta: -np.logaddexp(0.0, -eta)
            self._l1mpi = lambda eta: -np.logaddexp(0.0, eta)
        elif link == "probit":
            self._lpi = log_ndtr
            self._l1mpi = lambda eta: log_ndtr(-eta)
        else:
            raise ValueError(f"unknown link {link!r}")
        if family.is_count:
            self.logfact = float(gammaln(self.zpos + 1.0).sum())
        if family.tag == "hurdle-lognormal":
            self.logz = np.log(self.zpos)
            self.sum_logz = float(self.logz.sum())

    def __call__(self, eta_o, eta_p, sigma2_eps=None):
        fam = self.family
        pos, zero = self.pos, self.zero
        with np.errstate(over="ignore", invalid="ignore"):
            if fam.tag == "hurdle-count":
                ep = eta_p[pos]
                theta = np.exp(ep)
                return float(
                    self._l1mpi(eta_o[zero]).sum()
                    + self._lpi(eta_o[pos]).sum()
                    + self.zpos @ ep
                    - theta.sum()
                    - self.logfact
                    - _log1mexp(theta).sum()
                )
            if fam.tag == "mixture-poisson":
                eo_z = eta_o[zero]
                zero_sum = np.logaddexp(self._l1mpi(eo_z), self._lpi(eo_z) - np.exp(eta_p[zero])).sum()
                ep = eta_p[pos]
                theta = np.exp(ep)
                return float(
                    zero_sum + self._lpi(eta_o[pos]).sum() + self.zpos @ ep - theta.sum() - self.logfact
                )
            if fam.tag == "hurdle-lognormal":
                mu = eta_p[pos]
                quad = self.logz - mu
                return float(
                    self._l1mpi(eta_o[zero]).sum()
                    + self._lpi(eta_o[pos]).sum()
                    - self.sum_logz
                    - 0.5 * self.n_pos * np.log(2.0 * np.pi * sigma2_eps)
                    - quad @ quad / (2.0 * sigma2_eps)
                )
            # mixture-tobit
            sd = np.sqrt(sigma2_eps)
            eo_z = eta_o[zero]
            zero_sum = np.logaddexp(
                self._l1mpi(eo_z),
                self._lpi(eo_z) + log_ndtr((fam.tobit_threshold - eta_p[zero]) / sd),
            ).sum()
            resid = self.zpos - eta_p[pos]
            return float(
                zero_sum
                + self._lpi(eta_o[pos]).sum()
                - 0.5 * self.n_pos * np.log(2.0 * np.pi * sigma2_eps)
                - resid @ resid / (2.0 * sigma2_eps)
            )


# ---------------------------------------------------------------------------
# priors


def _beta_logprior(beta, priors):
    return -0.5 * float(beta @ beta) / priors.beta_var


def _delta_logprior(delta, tau, rp):
    p = rp.dim
    return 0.5 * p * np.log(tau) + 0.5 * rp.logdet - 0.5 * tau * rp.quad(delta) - 0.5 * p * np.log(2.0 * np.pi)


def _gamma_logpdf(x, shape, rate):
    if x <= 0:
        return -np.inf
    return (shape - 1.0) * np.log(x) - rate * x


def _invgamma_logpdf(x, shape, rate):
    if x <= 0:
        return -np.inf
    return -(shape + 1.0) * np.log(x) - rate / x


def tau_full_conditional(priors, quad_value, p):
    """Gamma(shape, rate) full conditional of a basis-coefficient precision."""
    return priors.tau_shape + 0.5 * p, priors.tau_rate + 0.5 * quad_value


def correlated_delta_logprior(delta_o, delta_p, tau_o, tau_p, rho, precision_o, precision_p):
    """Joint normal log-density of cross-correlated basis coefficients.

    The joint covariance is blkdiag(G_o, G_p) [[I, rho J], [rho J', I]]
    blkdiag(G_o, G_p)' with G_x the Cholesky factor of tau_x^{-1} P_x^{-1}
    and J the identity on the overlapping leading coordinates, which keeps
    the joint positive definite for any |rho| < 1 and rank pair.
    """
    if not -1.0 < rho < 1.0:
        return -np.inf
    if tau_o <= 0 or tau_p <= 0:
        return -np.inf
    G0_o = _inv_chol(precision_o)
    G0_p = _inv_chol(precision_p)
    u = np.sqrt(tau_o) * solve_triangular(G0_o, delta_o, lower=True)
    v = np.sqrt(tau_p) * solve_triangular(G0_p, delta_p, lower=True)
    p_o, p_p = len(u), len(v)
    pmin = min(p_o, p_p)
    r2 = 1.0 - rho * rho
    up, vp = u[:pmin], v[:pmin]
    quad = float(up @ up - 2.0 * rho * (up @ vp) + vp @ vp) / r2
    quad += float(u[pmin:] @ u[pmin:]) + float(v[pmin:] @ v[pmin:])
    logdet_K = pmin * np.log(r2)
    logdet_G = (
        -0.5 * p_o * np.log(tau_o)
        + float(np.log(np.diag(G0_o)).sum())
        - 0.5 * p_p * np.log(tau_p)
        + float(np.log(np.diag(G0_p)).sum())
    )
    return -0.5 * quad - 0.5 * logdet_K - logdet_G - 0.5 * (p_o + p_p) * np.log(2.0 * np.pi)


def _inv_chol(rp):
    """Lower Cholesky factor of P^{-1}, cached on the ReducedPrecision."""
    cached = getattr(rp, "_inv_chol_lower", None)
    if cached is None:
        eye = np.eye(rp.dim)
        Pinv = cho_solve((rp.chol_lower, True), eye)
        Pinv = (Pinv + Pinv.T) / 2.0
        cached = np.linalg.cholesky(Pinv)
        rp._inv_chol_lower = cached
    return cached


# ---------------------------------------------------------------------------
# adaptive block machinery


class _Adapt:
    """Robbins-Monro scale recursion toward a target acceptance rate."""

    def __init__(self, scale, target):
        self.log_scale = float(np.log(scale))
        self.target = target
        self.frozen = False
        self.n_windows = 0
        self._acc = 0
        self._try = 0

    @property
    def scale(self):
        return np.exp(self.log_scale)

    def record(self, accepted):
        if not self.frozen:
            self._acc += accepted
            self._try += 1

    def end_window(self):
        if self.frozen or self._try == 0:
            return
        self.n_windows += 1
        gain = min(0.5, 1.0 / np.sqrt(self.n_windows))
        self.log_scale += gain * (self._acc / self._try - self.target)
        self._acc = 0
        self._try = 0


class _RunningCov:
    """Welford accumulator for the empirical covariance of a vector block."""

    def __init__(self, dim):
        self.count = 0
        self.mean = np.zeros(dim)
        self.M2 = np.zeros((dim, dim))

    def update(self, x):
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.M2 += np.outer(d, x - self.mean)

    def cov(self):
        return self.M2 / (self.count - 1)


@dataclass
class _Block:
    name: str
    size: int
    step: callable
    get: callable
    adapt: _Adapt | None = None
    cov: _RunningCov | None = None
    chol: np.ndarray | None = None
    accepted: int = 0
    attempted: int = 0
    record: bool = True


def _safe_chol(C):
    p = C.shape[0]
    bump = 1e-10 * max(np.trace(C) / p, 1e-12)
    for _ in range(6):
        try:
            return np.linalg.cholesky(C + bump * np.eye(p))
        except np.linalg.LinAlgError:
            bump *= 100.0
    return None


def _run_blocks(blocks, cfg, rng):
    """Shared sampling loop: adapt during burn-in, freeze, then record."""
    recorded = [b for b in blocks if b.record]
    sizes = [b.size for b in recorded]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    n_rows = (cfg.iterations - cfg.burnin + cfg.thin - 1) // cfg.thin
    samples = np.empty((n_rows, offsets[-1]))
    row = 0
    freeze_scales = None
    start = time.perf_counter()
    for it in range(cfg.iterations):
        if it == cfg.burnin:
            for b in blocks:
                if b.adapt is not None:
                    b.adapt.frozen = True
            freeze_scales = {b.name: b.adapt.scale for b in blocks if b.adapt is not None}
        for b in blocks:
            acc = b.step(rng)
            if acc is not None:
                b.attempted += 1
                b.accepted += acc
                if b.adapt is not None:
                    b.adapt.record(acc)
        if it < cfg.burnin:
            for b in blocks:
                if b.cov is not None:
                    b.cov.update(b.get())
            if (it + 1) % cfg.adapt_window == 0:
                for b in blocks:
                    if b.adapt is not None:
                        b.adapt.end_window()
                    if b.cov is not None and b.cov.count > 2 * b.size:
                        chol = _safe_chol(b.cov.cov())
                        if chol is not None:
                            b.chol = chol
        elif (it - cfg.burnin) % cfg.thin == 0:
            for b, lo, hi in zip(recorded, offsets[:-1], offsets[1:]):
                samples[row, lo:hi] = b.get()
            row += 1
    seconds = time.perf_counter() - start
    scales = {b.name: b.adapt.scale for b in blocks if b.adapt is not None}
    if cfg.burnin == 0:
        freeze_scales = scales
    frozen_ok = all(scales[k] == freeze_scales[k] for k in scales)
    return samples[:row], seconds, scales, frozen_ok


def _propose_vector(block, cur, rng):
    z = rng.standard_normal(block.size)
    if block.chol is not None:
        z = block.chol @ z
    return cur + block.adapt.scale * z


# ---------------------------------------------------------------------------
# chain container and persistence


@dataclass
class Chain:
    """Retained posterior draws with block layout and run metadata."""

    names: list
    samples: np.ndarray
    block_index: dict
    accept_rates: dict
    seconds: float
    seed: int
    iterations: int
    burnin: int
    thin: int
    method: str = ""
    family_tag: str = ""
    link: str = "logit"
    adaptation_frozen: bool = True
    final_scales: dict = field(default_factory=dict)

    @property
    def n_draws(self):
        return self.samples.shape[0]

    def get(self, name):
        sl = self.block_index[name]
        block = self.samples[:, sl]
        return block[:, 0] if sl.stop - sl.start == 1 and not name.startswith(("beta", "delta", "gamma")) else block

    def has(self, name):
        return name in self.block_index


def _component_names(blocks):
    names = []
    for b in blocks:
        if not b.record:
            continue
        if b.size == 1:
            names.append(b.name)
        else:
            names.extend(f"{b.name}_{j + 1}" for j in range(b.size))
    return names


def _block_index(blocks):
    idx = {}
    lo = 0
    for b in blocks:
        if not b.record:
            continue
        idx[b.name] = slice(lo, lo + b.size)
        lo += b.size
    return idx


def save_chain(chain, path):
    """One CSV per fit: a header naming every scalar component, one row per draw."""
    pd.DataFrame(chain.samples, columns=chain.names).to_csv(path, index=False)


def save_chain_summary(chain, path):
    """Sidecar JSON: acceptance rates, wall-clock seconds, ES/sec per parameter."""
    diag = chain_ess(chain.samples, seconds=chain.seconds)
    payload = {
        "method": chain.method,
        "family": chain.family_tag,
        "link": chain.link,
        "seed": chain.seed,
        "iterations": chain.iterations,
        "burnin": chain.burnin,
        "thin": chain.thin,
        "seconds": chain.seconds,
        "n_draws": chain.n_draws,
        "accept_rates": chain.accept_rates,
        "adaptation_frozen": chain.adaptation_frozen,
        "final_scales": chain.final_scales,
        "ess": dict(zip(chain.names, np.where(np.isfinite(diag["ess"]), diag["ess"], None))),
        "es_per_sec": dict(zip(chain.names, np.where(np.isfinite(diag["es_per_sec"]), diag["es_per_sec"], None))),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, default=float)


def load_chain(path, summary_path=None):
    """Rebuild a :class:`Chain` from its CSV (and optional summary sidecar)."""
    df = pd.read_csv(path)
    names = list(df.columns)
    groups = []
    for name in names:
        m = re.fullmatch(r"(.+)_(\d+)", name)
        base = m.group(1) if m else name
        if groups and groups[-1][0] == base:
            groups[-1][1] += 1
        else:
            groups.append([base, 1])
    idx = {}
    lo = 0
    for base, size in groups:
        idx[base] = slice(lo, lo + size)
        lo += size
    meta = {}
    if summary_path is not None:
        with open(summary_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    return Chain(
        names=names,
        samples=df.to_numpy(dtype=float),
        block_index=idx,
        accept_rates=meta.get("accept_rates", {}),
        seconds=meta.get("seconds", float("nan")),
        seed=meta.get("seed", 0),
        iterations=meta.get("iterations", 0),
        burnin=meta.get("burnin", 0),
        thin=meta.get("thin", 1),
        method=meta.get("method", ""),
        family_tag=meta.get("family", ""),
        link=meta.get("link", "logit"),
    )


# ---------------------------------------------------------------------------
# posterior density (used for initialization checks and tests)


def log_posterior(state, X, Z, family, param, priors, link="logit"):
    """Joint log-posterior (up to a constant) at a full parameter state."""
    ll = _LogLik(family, Z, link)
    s2 = state.get("sigma2_eps")
    if family.uses_nugget and (s2 is None or s2 <= 0):
        return -np.inf
    lp = _beta_logprior(state["beta_o"], priors) + _beta_logprior(state["beta_p"], priors)
    if isinstance(param, GoldStandard):
        phi_o, phi_p = state["phi_o"], state["phi_p"]
        if not (0 < phi_o < priors.phi_max and 0 < phi_p < priors.phi_max):
            return -np.inf
        s2_o, s2_p = state["sigma2_o"], state["sigma2_p"]
        if s2_o <= 0 or s2_p <= 0:
            return -np.inf
        g_o, g_p = state["gamma_o"], state["gamma_p"]
        n = len(g_o)
        eta_o = X @ state["beta_o"] + param.corr_cholesky(phi_o) @ g_o
        eta_p = X @ state["beta_p"] + param.corr_cholesky(phi_p) @ g_p
        lp += -0.5 * n * np.log(s2_o) - 0.5 * float(g_o @ g_o) / s2_o
        lp += -0.5 * n * np.log(s2_p) - 0.5 * float(g_p @ g_p) / s2_p
        lp += _invgamma_logpdf(s2_o, priors.sigma2_shape, priors.sigma2_rate)
        lp += _invgamma_logpdf(s2_p, priors.sigma2_shape, priors.sigma2_rate)
    else:
        d_o, d_p = state["delta_o"], state["delta_p"]
        tau_o, tau_p = state.get("tau_o", 1.0), state.get("tau_p", 1.0)
        if tau_o <= 0 or tau_p <= 0:
            return -np.inf
        eta_o = X @ state["beta_o"] + param.B_o @ d_o
        eta_p = X @ state["beta_p"] + param.B_p @ d_p
        if param.correlated:
            rho = state["rho"]
            lp += correlated_delta_logprior(d_o, d_p, tau_o, tau_p, rho, param.precision_o, param.precision_p)
            if not -1 < rho < 1:
                return -np.inf
        else:
            if len(d_o):
                lp += _delta_logprior(d_o, tau_o, param.precision_o)
            if len(d_p):
                lp += _delta_logprior(d_p, tau_p, param.precision_p)
        if len(d_o):
            lp += _gamma_logpdf(tau_o, priors.tau_shape, priors.tau_rate)
        if len(d_p):
            lp += _gamma_logpdf(tau_p, priors.tau_shape, priors.tau_rate)
    if family.uses_nugget:
        lp += _invgamma_logpdf(s2, priors.sigma2_eps_shape, priors.sigma2_eps_rate)
    if not np.isfinite(lp):
        return -np.inf
    return lp + ll(eta_o, eta_p, s2)


# ---------------------------------------------------------------------------
# initialization


def _init_betas(X, Z, family):
    k = X.shape[1]
    try:
        beta_o = fit_glm("logistic", X, binarize_occurrence(Z)).coef
    except (RuntimeError, ValueError):
        beta_o = np.zeros(k)
    pos = Z > 0
    try:
        kind = prevalence_glm_kind(family)
        y = Z[pos]
        beta_p = fit_glm(kind, X[pos], y).coef
    except (RuntimeError, ValueError):
        beta_p = np.zeros(k)
    return beta_o, beta_p


def _init_basis_coefs(X, Z, family, B_o, B_p):
    """Initialize (beta, delta) per process from augmented-design GLM fits.

    Starting the coefficient blocks at zero lets the first conjugate
    precision draw explode (rate ~ prior rate only), which then pins the
    coefficients near zero for the rest of a desk-length run; the maximum
    likelihood start keeps the precision scale data-informed from the
    first sweep.
    """
    k = X.shape[1]
    # a firm ridge keeps the start sane when the augmented design is nearly
    # saturated; the sampler refines from there
    ridge = 1e-2
    try:
        co = fit_glm("logistic", np.hstack([X, B_o]), binarize_occurrence(Z), ridge=ridge).coef
        beta_o, delta_o = co[:k], co[k:]
    except (RuntimeError, ValueError):
        beta_o, delta_o = _init_betas(X, Z, family)[0], np.zeros(B_o.shape[1])
    pos = Z > 0
    try:
        cp = fit_glm(prevalence_glm_kind(family), np.hstack([X, B_p])[pos], Z[pos], ridge=ridge).coef
        beta_p, delta_p = cp[:k], cp[k:]
    except (RuntimeError, ValueError):
        beta_p, delta_p = _init_betas(X, Z, family)[1], np.zeros(B_p.shape[1])
    return beta_o, beta_p, delta_o, delta_p


def _init_sigma2_eps(Z):
    pos = np.log(Z[Z > 0])
    if len(pos) < 2:
        return 1.0
    return max(float(pos.var(ddof=1)), 1e-3)


# ---------------------------------------------------------------------------
# fitting: basis parameterizations (PICAR, correlated PICAR, FRK)


def _fit_basis(X, Z, family, param, priors, cfg, link):
    rng = np.random.default_rng(cfg.seed)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    B_o, B_p = param.B_o, param.B_p
    p_o, p_p = B_o.shape[1], B_p.shape[1]
    rp_o, rp_p = param.precision_o, param.precision_p
    correlated = param.correlated
    ll_fn = _LogLik(family, Z, link)

    beta_o0, beta_p0, delta_o0, delta_p0 = _init_basis_coefs(X, Z, family, B_o, B_p)
    s = {
        "beta_o": beta_o0,
        "beta_p": beta_p0,
        "delta_o": delta_o0,
        "delta_p": delta_p0,
        "tau_o": 1.0,
        "tau_p": 1.0,
        "rho": 0.0,
        "sigma2_eps": _init_sigma2_eps(Z) if family.uses_nugget else None,
    }
    c = {
        "xb_o": X @ s["beta_o"],
        "xb_p": X @ s["beta_p"],
        "w_o": B_o @ s["delta_o"],
        "w_p": B_p @ s["delta_p"],
        "quad_o": rp_o.quad(s["delta_o"]) if p_o else 0.0,
        "quad_p": rp_p.quad(s["delta_p"]) if p_p else 0.0,
    }
    c["eta_o"] = c["xb_o"] + c["w_o"]
    c["eta_p"] = c["xb_p"] + c["w_p"]
    c["ll"] = ll_fn(c["eta_o"], c["eta_p"], s["sigma2_eps"])

    def corr_prior():
        return correlated_delta_logprior(
            s["delta_o"], s["delta_p"], s["tau_o"], s["tau_p"], s["rho"], rp_o, rp_p
        )

    c["corr"] = corr_prior() if correlated else 0.0
    if not np.isfinite(c["ll"]) or not np.isfinite(c["corr"]):
        raise ValueError("invalid initialization")

    blocks = []

    def add_beta(which):
        name = f"beta_{which}"

        def step(rng, _name=name, _which=which):
            b = blk
            cur = s[_name]
            prop = _propose_vector(b, cur, rng)
            xb_new = X @ prop
            eta_new = xb_new + c[f"w_{_which}"]
            if _which == "o":
                ll_new = ll_fn(eta_new, c["eta_p"], s["sigma2_eps"])
            else:
                ll_new = ll_fn(c["eta_o"], eta_new, s["sigma2_eps"])
            dlp = ll_new - c["ll"] + _beta_logprior(prop, priors) - _beta_logprior(cur, priors)
            if np.log(rng.random()) < dlp:
                s[_name] = prop
                c[f"xb_{_which}"] = xb_new
                c[f"eta_{_which}"] = eta_new
                c["ll"] = ll_new
                return True
            return False

        blk = _Block(
            name, k, step, lambda _name=name: s[_name],
            adapt=_Adapt(cfg.init_scale * 2.38 / np.sqrt(k), cfg.target_vector),
            cov=_RunningCov(k),
        )
        blocks.append(blk)

    def add_delta(which, p, rp):
        name = f"delta_{which}"
        B = B_o if which == "o" else B_p

        def step(rng, _name=name, _which=which, _B=B, _rp=rp):
            b = blk
            cur = s[_name]
            prop = _propose_vector(b, cur, rng)
            w_new = _B @ prop
            eta_new = c[f"xb_{_which}"] + w_new
            if _which == "o":
                ll_new = ll_fn(eta_new, c["eta_p"], s["sigma2_eps"])
            else:
                ll_new = ll_fn(c["eta_o"], eta_new, s["sigma2_eps"])
            if correlated:
                old = s[_name]
                s[_name] = prop
                corr_new = corr_prior()
                s[_name] = old
                dprior = corr_new - c["corr"]
            else:
                quad_new = _rp.quad(prop)
                dprior = -0.5 * s[f"tau_{_which}"] * (quad_new - c[f"quad_{_which}"])
            dlp = ll_new - c["ll"] + dprior
            if np.log(rng.random()) < dlp:
                s[_name] = prop
                c[f"w_{_which}"] = w_new
                c[f"eta_{_which}"] = eta_new
                c["ll"] = ll_new
                if correlated:
                    c["corr"] = corr_new
                else:
                    c[f"quad_{_which}"] = quad_new
                return True
            return False

        blk = _Block(
            name, p, step, lambda _name=name: s[_name],
            adapt=_Adapt(cfg.init_scale * 2.38 / np.sqrt(p), cfg.target_vector),
            cov=_RunningCov(p),
        )
        blocks.append(blk)

    add_beta("o")
    add_beta("p")
    if p_o:
        add_delta("o", p_o, rp_o)
    if p_p:
        add_delta("p", p_p, rp_p)

    if correlated:

        def step_rho(rng):
            b = rho_blk
            prop = s["rho"] + b.adapt.scale * rng.standard_normal()
            if not -1.0 < prop < 1.0:
                return False
            old = s["rho"]
            s["rho"] = prop
            corr_new = corr_prior()
            s["rho"] = old
            if np.log(rng.random()) < corr_new - c["corr"]:
                s["rho"] = prop
                c["corr"] = corr_new
                return True
            return False

        rho_blk = _Block("rho", 1, step_rho, lambda: np.array([s["rho"]]),
                         adapt=_Adapt(0.3 * cfg.init_scale, cfg.target_scalar))
        blocks.append(rho_blk)

    if family.uses_nugget:

        def step_s2(rng):
            b = s2_blk
            cur = s["sigma2_eps"]
            prop = cur * np.exp(b.adapt.scale * rng.standard_normal())
            ll_new = ll_fn(c["eta_o"], c["eta_p"], prop)
            dlp = (
                ll_new
                - c["ll"]
                + _invgamma_logpdf(prop, priors.sigma2_eps_shape, priors.sigma2_eps_rate)
                - _invgamma_logpdf(cur, priors.sigma2_eps_shape, priors.sigma2_eps_rate)
                + np.log(prop)
                - np.log(cur)
            )
            if np.log(rng.random()) < dlp:
                s["sigma2_eps"] = prop
                c["ll"] = ll_new
                return True
            return False

        s2_blk = _Block("sigma2_eps", 1, step_s2, lambda: np.array([s["sigma2_eps"]]),
                        adapt=_Adapt(0.5 * cfg.init_scale, cfg.target_scalar))
        blocks.append(s2_blk)

    def add_tau(which, p):
        name = f"tau_{which}"
        if not correlated:

            def step(rng, _name=name, _which=which, _p=p):
                shape, rate = tau_full_conditional(priors, c[f"quad_{_which}"], _p)
                s[_name] = rng.gamma(shape, 1.0 / rate)
                return None

            blocks.append(_Block(name, 1, step, lambda _name=name: np.array([s[_name]])))
        else:

            def step(rng, _name=name):
                b = tau_blk
                cur = s[_name]
                prop = cur * np.exp(b.adapt.scale * rng.standard_normal())
                old = s[_name]
                s[_name] = prop
                corr_new = corr_prior()
                s[_name] = old
                dlp = (
                    corr_new
                    - c["corr"]
                    + _gamma_logpdf(prop, priors.tau_shape, priors.tau_rate)
                    - _gamma_logpdf(cur, priors.tau_shape, priors.tau_rate)
                    + np.log(prop)
                    - np.log(cur)
                )
                if np.log(rng.random()) < dlp:
                    s[_name] = prop
                    c["corr"] = corr_new
                    return True
                return False

            tau_blk = _Block(name, 1, step, lambda _name=name: np.array([s[_name]]),
                             adapt=_Adapt(0.5 * cfg.init_scale, cfg.target_scalar))
            blocks.append(tau_blk)

    if p_o:
        add_tau("o", p_o)
    if p_p:
        add_tau("p", p_p)

    samples, seconds, scales, frozen_ok = _run_blocks(blocks, cfg, rng)
    return _assemble_chain(blocks, samples, seconds, scales, frozen_ok, cfg, param.method, family, link)


# ---------------------------------------------------------------------------
# fitting: gold standard


def _fit_gold(X, Z, sites, family, param, priors, cfg, link):
    rng = np.random.default_rng(cfg.seed)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    if sites is None or len(sites) != n:
        raise ValueError("gold standard requires one site per observation")
    ll_fn = _LogLik(family, Z, link)

    beta_o0, beta_p0 = _init_betas(X, Z, family)
    phi0 = 0.25 * priors.phi_max
    # gamma starts at a unit-variance prior draw: a zero start would collapse
    # the conjugate sigma2 update (rate = prior rate only) and trap the fields
    init_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xC0FFEE)))
    s = {
        "beta_o": beta_o0,
        "beta_p": beta_p0,
        "gamma_o": init_rng.standard_normal(n),
        "gamma_p": init_rng.standard_normal(n),
        "phi_o": phi0,
        "phi_p": phi0,
        "sigma2_o": 1.0,
        "sigma2_p": 1.0,
        "sigma2_eps": _init_sigma2_eps(Z) if family.uses_nugget else None,
    }
    c = {
        "xb_o": X @ s["beta_o"],
        "xb_p": X @ s["beta_p"],
        "L_o": param.corr_cholesky(phi0),
        "L_p": param.corr_cholesky(phi0),
    }
    c["w_o"] = c["L_o"] @ s["gamma_o"]
    c["w_p"] = c["L_p"] @ s["gamma_p"]
    c["eta_o"] = c["xb_o"] + c["w_o"]
    c["eta_p"] = c["xb_p"] + c["w_p"]
    c["ll"] = ll_fn(c["eta_o"], c["eta_p"], s["sigma2_eps"])
    if not np.isfinite(c["ll"]):
        raise ValueError("invalid initialization")

    blocks = []

    def add_beta(which):
        name = f"beta_{which}"

        def step(rng, _name=name, _which=which):
            b = blk
            cur = s[_name]
            prop = _propose_vector(b, cur, rng)
            xb_new = X @ prop
            eta_new = xb_new + c[f"w_{_which}"]
            if _which == "o":
                ll_new = ll_fn(eta_new, c["eta_p"], s["sigma2_eps"])
            else:
                ll_new = ll_fn(c["eta_o"], eta_new, s["sigma2_eps"])
            dlp = ll_new - c["ll"] + _beta_logprior(prop, priors) - _beta_logprior(cur, priors)
            if np.log(rng.random()) < dlp:
                s[_name] = prop
                c[f"xb_{_which}"] = xb_new
                c[f"eta_{_which}"] = eta_new
                c["ll"] = ll_new
                return True
            return False

        blk = _Block(name, k, step, lambda _name=name: s[_name],
                     adapt=_Adapt(cfg.init_scale * 2.38 / np.sqrt(k), cfg.target_vector),
                     cov=_RunningCov(k))
        blocks.append(blk)

    def add_gamma(which):
        name = f"gamma_{which}"

        def step(rng, _name=name, _which=which):
            b = blk
            cur = s[_name]
            prop = cur + b.adapt.scale * rng.standard_normal(n)
            w_new = c[f"L_{_which}"] @ prop
            eta_new = c[f"xb_{_which}"] + w_new
            if _which == "o":
                ll_new = ll_fn(eta_new, c["eta_p"], s["sigma2_eps"])
            else:
                ll_new = ll_fn(c["eta_o"], eta_new, s["sigma2_eps"])
            s2 = s[f"sigma2_{_which}"]
            dlp = ll_new - c["ll"] - 0.5 * (float(prop @ prop) - float(cur @ cur)) / s2
            if np.log(rng.random()) < dlp:
                s[_name] = prop
                c[f"w_{_which}"] = w_new
                c[f"eta_{_which}"] = eta_new
                c["ll"] = ll_new
                return True
            return False

        blk = _Block(name, n, step, lambda _name=name: s[_name],
                     adapt=_Adapt(cfg.init_scale * 2.38 / np.sqrt(n), cfg.target_vector))
        blocks.append(blk)

    def add_phi(which):
        name = f"phi_{which}"

        def step(rng, _name=name, _which=which):
            b = blk
            cur = s[_name]
            prop = cur + b.adapt.scale * rng.standard_normal()
            if not 0.0 < prop < priors.phi_max:
                return False
            L_new = param.corr_cholesky(prop)
            w_new = L_new @ s[f"gamma_{_which}"]
            eta_new = c[f"xb_{_which}"] + w_new
            if _which == "o":
                ll_new = ll_fn(eta_new, c["eta_p"], s["sigma2_eps"])
            else:
                ll_new = ll_fn(c["eta_o"], eta_new, s["sigma2_eps"])
            if np.log(rng.random()) < ll_new - c["ll"]:
                s[_name] = prop
                c[f"L_{_which}"] = L_new
                c[f"w_{_which}"] = w_new
                c[f"eta_{_which}"] = eta_new
                c["ll"] = ll_new
                return True
            return False

        blk = _Block(name, 1, step, lambda _name=name: np.array([s[_name]]),
                     adapt=_Adapt(0.1 * priors.phi_max * cfg.init_scale, cfg.target_scalar))
        blocks.append(blk)

    add_beta("o")
    add_beta("p")
    add_gamma("o")
    add_gamma("p")
    add_phi("o")
    add_phi("p")

    if family.uses_nugget:

        def step_s2(rng):
            b = s2_blk
            cur = s["sigma2_eps"]
            prop = cur * np.exp(b.adapt.scale * rng.standard_normal())
            ll_new = ll_fn(c["eta_o"], c["eta_p"], prop)
            dlp = (
                ll_new
                - c["ll"]
                + _invgamma_logpdf(prop, priors.sigma2_eps_shape, priors.sigma2_eps_rate)
                - _invgamma_logpdf(cur, priors.sigma2_eps_shape, priors.sigma2_eps_rate)
                + np.log(prop)
                - np.log(cur)
            )
            if np.log(rng.random()) < dlp:
                s["sigma2_eps"] = prop
                c["ll"] = ll_new
                return True
            return False

        s2_blk = _Block("sigma2_eps", 1, step_s2, lambda: np.array([s["sigma2_eps"]]),
                        adapt=_Adapt(0.5 * cfg.init_scale, cfg.target_scalar))
        blocks.append(s2_blk)

    def add_sigma2(which):
        name = f"sigma2_{which}"

        def step(rng, _name=name, _which=which):
            g = s[f"gamma_{_which}"]
            shape = priors.sigma2_shape + 0.5 * n
            rate = priors.sigma2_rate + 0.5 * float(g @ g)
            s[_name] = 1.0 / rng.gamma(shape, 1.0 / rate)
            return None

        blocks.append(_Block(name, 1, step, lambda _name=name: np.array([s[_name]])))

    add_sigma2("o")
    add_sigma2("p")

    samples, seconds, scales, frozen_ok = _run_blocks(blocks, cfg, rng)
    return _assemble_chain(blocks, samples, seconds, scales, frozen_ok, cfg, param.method, family, link)


def _assemble_chain(blocks, samples, seconds, scales, frozen_ok, cfg, method, family, link):
    accept = {
        b.name: (b.accepted / b.attempted if b.attempted else 1.0)
        for b in blocks
    }
    return Chain(
        names=_component_names(blocks),
        samples=samples,
        block_index=_block_index(blocks),
        accept_rates=accept,
        seconds=seconds,
        seed=cfg.seed,
        iterations=cfg.iterations,
        burnin=cfg.burnin,
        thin=cfg.thin,
        method=method,
        family_tag=family.tag,
        link=link,
        adaptation_frozen=frozen_ok,
        final_scales=scales,
    )


def fit(X, Z, family, param, priors=None, config=None, link="logit", sites=None):
    """Draw from the posterior of a spatial two-part model.

    Parameters
    ----------
    X, Z : ndarray
        Training covariates (n, k) and zero-inflated observations (n,).
    family : TwoPartFamily or str
    param : PicarZ, FixedRankKriging, or GoldStandard
    priors : PriorSpec
    config : SamplerConfig
    link : {'logit', 'probit'}
    sites : ndarray, optional
        Training locations; required by the gold standard.

    Blocks are updated in a fixed order (beta_o, beta_p, coefficient
    blocks, cross-correlation, nugget, precisions); precision blocks with
    conjugate Gamma full conditionals are Gibbs-sampled, everything else
    uses adaptive random walks.  A fixed seed yields a bitwise-identical
    chain.
    """
    if isinstance(family, str):
        family = family_from_tag(family)
    priors = priors or PriorSpec()
    config = config or SamplerConfig()
    Z = np.asarray(Z, dtype=float)
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("invalid initialization")
    if isinstance(param, GoldStandard):
        return _fit_gold(X, Z, sites if sites is not None else param.sites, family, param, priors, config, link)
    return _fit_basis(X, Z, family, param, priors, config, link)


# ---------------------------------------------------------------------------
# prediction


@dataclass
class PredictionSummary:
    """Posterior predictive summaries at validation sites."""

    mean: np.ndarray
    sd: np.ndarray
    pi_mean: np.ndarray
    pos_prob_mean: np.ndarray
    n_draws: int


def _draw_rows(n_draws, max_draws):
    if max_draws is None or max_draws >= n_draws:
        return np.arange(n_draws)
    return np.unique(np.linspace(0, n_draws - 1, max_draws).round().astype(int))


def predict(chain, family, X_cv, cv_design, link=None, max_draws=None):
    """Posterior predictive mean, sd, and occurrence summaries per site.

    For each retained draw the linear predictors are evaluated at the
    validation sites and pushed through the family's predictive mean; the
    summaries average over draws.
    """
    if isinstance(family, str):
        family = family_from_tag(family)
    link = link or chain.link or "logit"
    rows = _draw_rows(chain.n_draws, max_draws)
    n_cv = X_cv.shape[0]
    acc_mean = np.zeros(n_cv)
    acc_m2 = np.zeros(n_cv)
    acc_pi = np.zeros(n_cv)
    acc_pos = np.zeros(n_cv)
    sl = chain.block_index
    gold = isinstance(cv_design, _GoldCv)
    for t, r in enumerate(rows):
        row = chain.samples[r]
        beta_o = row[sl["beta_o"]]
        beta_p = row[sl["beta_p"]]
        if gold:
            w_o = cv_design.field(row[sl["phi_o"]][0], row[sl["gamma_o"]])
            w_p = cv_design.field(row[sl["phi_p"]][0], row[sl["gamma_p"]])
        else:
            w_o = cv_design.B_o @ row[sl["delta_o"]] if "delta_o" in sl else 0.0
            w_p = cv_design.B_p @ row[sl["delta_p"]] if "delta_p" in sl else 0.0
        eta_o = X_cv @ beta_o + w_o
        eta_p = X_cv @ beta_p + w_p
        pi = occurrence_prob(eta_o, link)
        tm = np.exp(eta_p) if family.is_count else eta_p
        s2 = row[sl["sigma2_eps"]][0] if "sigma2_eps" in sl else None
        m = predictive_mean(family, pi, tm, s2)
        d = m - acc_mean
        acc_mean += d / (t + 1)
        acc_m2 += d * (m - acc_mean)
        acc_pi += pi
        acc_pos += positivity_prob(family, pi, tm, s2)
    T = len(rows)
    sd = np.sqrt(acc_m2 / (T - 1)) if T > 1 else np.zeros(n_cv)
    return PredictionSummary(acc_mean, sd, acc_pi / T, acc_pos / T, T)


# ---------------------------------------------------------------------------
# generic adaptive sampler for simple targets


def sample_adaptive_rw(logpost, init, config=None):
    """Adaptive random-walk Metropolis on a user-supplied log-density.

    ``init`` maps block names to starting arrays; each block is updated
    with the same adaptive machinery the model samplers use.  Useful for
    validating the engine on closed-form targets.
    """
    cfg = config or SamplerConfig(iterations=5000)
    rng = np.random.default_rng(cfg.seed)
    state = {k: np.atleast_1d(np.asarray(v, dtype=float)).copy() for k, v in init.items()}
    current = {"lp": logpost(state)}
    if not np.isfinite(current["lp"]):
        raise ValueError("invalid initialization")
    blocks = []
    for name, v in state.items():
        dim = len(v)

        def step(rng, _name=name):
            b = ref[_name]
            cur = state[_name]
            prop = _propose_vector(b, cur, rng)
            state[_name] = prop
            lp_new = logpost(state)
            if np.log(rng.random()) < lp_new - current["lp"]:
                current["lp"] = lp_new
                return True
            state[_name] = cur
            return False

        blocks.append(
            _Block(name, dim, step, lambda _name=name: state[_name],
                   adapt=_Adapt(cfg.init_scale * 2.38 / np.sqrt(dim),
                                cfg.target_vector if dim > 1 else cfg.target_scalar),
                   cov=_RunningCov(dim))
        )
    ref = {b.name: b for b in blocks}
    samples, seconds, scales, frozen_ok = _run_blocks(blocks, cfg, rng)
    return Chain(
        names=_component_names(blocks),
        samples=samples,
        block_index=_block_index(blocks),
        accept_rates={b.name: b.accepted / max(b.attempted, 1) for b in blocks},
        seconds=seconds,
        seed=cfg.seed,
        iterations=cfg.iterations,
        burnin=cfg.burnin,
        thin=cfg.thin,
        method="generic",
        family_tag="",
        link="logit",
        adaptation_frozen=frozen_ok,
        final_scales=scales,
    )
