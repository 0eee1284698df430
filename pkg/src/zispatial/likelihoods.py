"""Two-part observation families for zero-inflated spatial data.

Four families are supported, combining hurdle vs. mixture zero structure
with count vs. semi-continuous responses:

==================  =========================  ==========================
tag                 zero branch                positive branch
==================  =========================  ==========================
hurdle-count        1 - pi                     pi * ZTPoisson(z; theta)
hurdle-lognormal    1 - pi                     pi * LogNormal(z; mu, s2)
mixture-poisson     (1-pi) + pi e^{-theta}     pi * Poisson(z; theta)
mixture-tobit       (1-pi) + pi Phi((g-mu)/s)  pi * Normal(z; mu, s2)
==================  =========================  ==========================

``pi`` is the probability that the latent occurrence indicator is one
(presence); the prevalence parameter is an intensity ``theta`` for count
families and a mean ``mu`` for semi-continuous ones, which carry an extra
nugget variance ``s2``.  ``g`` is the censoring threshold of the Tobit
branch.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, log_ndtr, ndtr

__all__ = [
    "TwoPartFamily",
    "HURDLE_COUNT",
    "HURDLE_LOGNORMAL",
    "MIXTURE_POISSON",
    "MIXTURE_TOBIT",
    "family_from_tag",
    "linear_predictor",
    "occurrence_prob",
    "loglik",
    "total_loglik",
    "predictive_mean",
    "positivity_prob",
]

_TAGS = ("hurdle-count", "hurdle-lognormal", "mixture-poisson", "mixture-tobit")

PROB_FLOOR = 1e-15


@dataclass(frozen=True)
class TwoPartFamily:
    """A two-part family tag plus the Tobit censoring threshold."""

    tag: str
    tobit_threshold: float = 0.0

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise ValueError(f"unknown family tag {self.tag!r}")
        if not np.isfinite(self.tobit_threshold):
            raise ValueError("tobit threshold must be finite")

    @property
    def is_count(self):
        return self.tag in ("hurdle-count", "mixture-poisson")

    @property
    def is_semicontinuous(self):
        return not self.is_count

    @property
    def is_hurdle(self):
        return self.tag in ("hurdle-count", "hurdle-lognormal")

    @property
    def uses_nugget(self):
        """Semi-continuous prevalence densities carry the nugget variance."""
        return self.is_semicontinuous


HURDLE_COUNT = TwoPartFamily("hurdle-count")
HURDLE_LOGNORMAL = TwoPartFamily("hurdle-lognormal")
MIXTURE_POISSON = TwoPartFamily("mixture-poisson")
MIXTURE_TOBIT = TwoPartFamily("mixture-tobit")


def family_from_tag(tag, tobit_threshold=0.0):
    return TwoPartFamily(tag, tobit_threshold if tag == "mixture-tobit" else 0.0)


def linear_predictor(X, beta, A, M, delta):
    """Evaluate ``X beta + A (M delta)`` at the observation sites.

    The basis expansion is applied as two matrix-vector products; the n x p
    product A @ M is never materialized here.
    """
    X = np.asarray(X)
    beta = np.asarray(beta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    M = M.vectors if hasattr(M, "vectors") else np.asarray(M)
    if X.shape[1] != beta.shape[0]:
        raise ValueError(f"covariates ({X.shape[1]}) and coefficients ({beta.shape[0]}) do not conform")
    if A.shape[0] != X.shape[0]:
        raise ValueError(f"projector rows ({A.shape[0]}) and covariate rows ({X.shape[0]}) differ")
    if A.shape[1] != M.shape[0] or M.shape[1] != delta.shape[0]:
        raise ValueError("projector, basis, and coefficient dimensions do not conform")
    return X @ beta + A @ (M @ delta)


def occurrence_prob(eta, link="logit"):
    """Map the occurrence linear predictor to a presence probability.

    Overflow-safe; the result is clamped inside (1e-15, 1 - 1e-15) so that
    downstream log terms stay finite at saturated predictors.
    """
    eta = np.asarray(eta, dtype=float)
    if link == "logit":
        # expit via logaddexp avoids overflow warnings at large |eta|
        p = np.exp(-np.logaddexp(0.0, -eta))
    elif link == "probit":
        p = ndtr(eta)
    else:
        raise ValueError(f"unknown link {link!r}")
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def _log1mexp(theta):
    """log(1 - exp(-theta)) for theta > 0, stable at both ends."""
    theta = np.asarray(theta, dtype=float)
    small = theta <= np.log(2.0)
    out = np.empty_like(theta)
    out[small] = np.log(-np.expm1(-theta[small]))
    out[~small] = np.log1p(-np.exp(-theta[~small]))
    return out


def _validate_obs(family, z):
    z = np.asarray(z, dtype=float)
    bad = z < 0
    if family.is_count:
        bad |= z != np.floor(z)
    elif family.tag == "mixture-tobit":
        bad |= (z > 0) & (z <= family.tobit_threshold)
    if np.any(bad):
        raise ValueError("observation inconsistent with family")
    return z


def _loglik_terms(family, z, pi, theta_or_mu, sigma2_eps):
    """Per-site log-likelihood terms; inputs are validated arrays."""
    z, pi, tm = np.broadcast_arrays(z, pi, theta_or_mu)
    z = np.asarray(z, dtype=float)
    logpi = np.log(pi)
    log1mpi = np.log1p(-pi)
    pos = z > 0
    out = np.empty(z.shape)

    if family.tag == "hurdle-count":
        out[~pos] = log1mpi[~pos]
        th = tm[pos]
        out[pos] = logpi[pos] + z[pos] * np.log(th) - th - gammaln(z[pos] + 1.0) - _log1mexp(th)
    elif family.tag == "hurdle-lognormal":
        out[~pos] = log1mpi[~pos]
        logz = np.log(z[pos])
        out[pos] = (
            logpi[pos]
            - logz
            - 0.5 * np.log(2.0 * np.pi * sigma2_eps)
            - (logz - tm[pos]) ** 2 / (2.0 * sigma2_eps)
        )
    elif family.tag == "mixture-poisson":
        out[~pos] = np.logaddexp(log1mpi[~pos], logpi[~pos] - tm[~pos])
        th = tm[pos]
        out[pos] = logpi[pos] + z[pos] * np.log(th) - th - gammaln(z[pos] + 1.0)
    else:  # mixture-tobit
        sd = np.sqrt(sigma2_eps)
        gamma = family.tobit_threshold
        out[~pos] = np.logaddexp(log1mpi[~pos], logpi[~pos] + log_ndtr((gamma - tm[~pos]) / sd))
        out[pos] = (
            logpi[pos]
            - 0.5 * np.log(2.0 * np.pi * sigma2_eps)
            - (z[pos] - tm[pos]) ** 2 / (2.0 * sigma2_eps)
        )
    return out


def loglik(family, z, pi, theta_or_mu, sigma2_eps=None):
    """Log-likelihood of one observation under a two-part family.

    ``pi`` is the presence probability P(O = 1); ``theta_or_mu`` is the
    prevalence intensity (count families, > 0) or mean (semi-continuous).
    ``sigma2_eps`` is required for the semi-continuous families.
    """
    if family.uses_nugget and (sigma2_eps is None or sigma2_eps <= 0):
        raise ValueError("semi-continuous families require sigma2_eps > 0")
    zv = _validate_obs(family, np.asarray(z))
    pi = np.asarray(pi, dtype=float)
    if np.any((pi <= 0) | (pi >= 1)):
        raise ValueError("pi must lie strictly inside (0, 1)")
    if family.is_count and np.any(np.asarray(theta_or_mu) <= 0):
        raise ValueError("count families require theta > 0")
    return float(_loglik_terms(family, zv, pi, theta_or_mu, sigma2_eps))


def total_loglik(family, z, pi, theta_or_mu, sigma2_eps=None):
    """Sum of per-site log-likelihoods (sites conditionally independent)."""
    if family.uses_nugget and (sigma2_eps is None or sigma2_eps <= 0):
        raise ValueError("semi-continuous families require sigma2_eps > 0")
    zv = _validate_obs(family, np.asarray(z))
    pi = np.asarray(pi, dtype=float)
    if np.any((pi <= 0) | (pi >= 1)):
        raise ValueError("pi must lie strictly inside (0, 1)")
    if family.is_count and np.any(np.asarray(theta_or_mu) <= 0):
        raise ValueError("count families require theta > 0")
    return float(_loglik_terms(family, zv, pi, theta_or_mu, sigma2_eps).sum())


def predictive_mean(family, pi, theta_or_mu, sigma2_eps=None):
    """E[Z] under the generative composition of occurrence and prevalence."""
    pi = np.asarray(pi, dtype=float)
    tm = np.asarray(theta_or_mu, dtype=float)
    if family.tag == "hurdle-count":
        return pi * tm / (-np.expm1(-tm))
    if family.tag == "hurdle-lognormal":
        return pi * np.exp(tm + sigma2_eps / 2.0)
    if family.tag == "mixture-poisson":
        return pi * tm
    sd = np.sqrt(sigma2_eps)
    a = (tm - family.tobit_threshold) / sd
    phi = np.exp(-0.5 * a * a) / np.sqrt(2.0 * np.pi)
    return pi * (tm * ndtr(a) + sd * phi)


def positivity_prob(family, pi, theta_or_mu, sigma2_eps=None):
    """P(Z > 0): the score used when classifying zero vs. nonzero sites."""
    pi = np.asarray(pi, dtype=float)
    tm = np.asarray(theta_or_mu, dtype=float)
    if family.is_hurdle:
        return pi + 0.0 * tm
    if family.tag == "mixture-poisson":
        return pi * (-np.expm1(-tm))
    sd = np.sqrt(sigma2_eps)
    return pi * ndtr((tm - family.tobit_threshold) / sd)
