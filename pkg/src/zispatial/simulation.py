"""Synthetic zero-inflated spatial data and comparator basis designs.

Latent occurrence and prevalence fields are drawn jointly from a
cross-correlated pair of Matérn Gaussian processes; observations are then
composed site by site from a Bernoulli occurrence indicator and the
family's prevalence distribution.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from scipy.stats import poisson

from .likelihoods import TwoPartFamily, family_from_tag, occurrence_prob

__all__ = [
    "MaternParams",
    "CrossGPConfig",
    "SyntheticDataset",
    "BisquareDesign",
    "matern_cov",
    "sample_cross_fields",
    "generate_dataset",
    "build_bisquare_design",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class MaternParams:
    """Matérn covariance parameters: smoothness, range, partial sill."""

    nu: float = 0.5
    phi: float = 0.2
    sigma2: float = 1.0

    def __post_init__(self):
        if self.nu not in (0.5, 1.5, 2.5):
            raise ValueError("smoothness nu must be one of 0.5, 1.5, 2.5")
        if self.phi <= 0 or self.sigma2 <= 0:
            raise ValueError("range and partial sill must be positive")


def matern_cov(h, params):
    """Matérn covariance at distance ``h`` (closed forms for half-integer nu)."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("distances must be nonnegative")
    s2, phi = params.sigma2, params.phi
    if params.nu == 0.5:
        return s2 * np.exp(-h / phi)
    if params.nu == 1.5:
        a = np.sqrt(3.0) * h / phi
        return s2 * (1.0 + a) * np.exp(-a)
    a = np.sqrt(5.0) * h / phi
    return s2 * (1.0 + a + a * a / 3.0) * np.exp(-a)


@dataclass(frozen=True)
class CrossGPConfig:
    """Matérn parameters per process plus the cross-correlation rho."""

    params_o: MaternParams = MaternParams()
    params_p: MaternParams = MaternParams()
    rho: float = 0.7

    def __post_init__(self):
        if not -1 < self.rho < 1:
            raise ValueError("cross-correlation must lie in (-1, 1)")


def _jitter_duplicates(sites, rng):
    """Perturb exact duplicate rows by 1e-9 so kernel matrices stay PD."""
    sites = np.array(sites, dtype=float)
    _, first = np.unique(sites, axis=0, return_index=True)
    dup = np.ones(len(sites), dtype=bool)
    dup[first] = False
    if dup.any():
        sites[dup] += rng.standard_normal((int(dup.sum()), 2)) * 1e-9
    return sites


def _matern_cholesky(sites, params):
    C = matern_cov(cdist(sites, sites), params)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        try:
            return np.linalg.cholesky(C + 1e-8 * params.sigma2 * np.eye(len(C)))
        except np.linalg.LinAlgError:
            raise ValueError("Matérn covariance is not positive definite") from None


def sample_cross_fields(sites, cfg, seed):
    """Draw correlated latent fields (W_o, W_p) at ``sites``.

    W_o = L_o z1 and W_p = L_p (rho z1 + sqrt(1-rho^2) z2) with L_o, L_p the
    Cholesky factors of the two Matérn covariance matrices and z1, z2 iid
    standard normal, so Cov(W_o, W_p) = rho L_o L_p'.
    """
    rng = np.random.default_rng(seed)
    sites = _jitter_duplicates(sites, rng)
    L_o = _matern_cholesky(sites, cfg.params_o)
    L_p = _matern_cholesky(sites, cfg.params_p)
    n = len(sites)
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    w_o = L_o @ z1
    w_p = L_p @ (cfg.rho * z1 + np.sqrt(1.0 - cfg.rho**2) * z2)
    return w_o, w_p


class _GridSpectralSampler:
    """Exact stationary-field sampler on a regular grid via circulant embedding.

    The grid covariance is embedded in a block-circulant torus whose FFT
    eigenvalues drive O(N log N) sampling; tiny negative eigenvalues from
    the embedding are clipped, larger ones trigger more padding.
    """

    def __init__(self, nx, ny, dx, dy, params):
        pad = 3
        while True:
            Nx, Ny = pad * nx, pad * ny
            ix = np.minimum(np.arange(Nx), Nx - np.arange(Nx)) * dx
            iy = np.minimum(np.arange(Ny), Ny - np.arange(Ny)) * dy
            h = np.sqrt(ix[:, None] ** 2 + iy[None, :] ** 2)
            lam = np.fft.fft2(matern_cov(h, params)).real
            if lam.min() > -1e-6 * lam.max():
                break
            pad *= 2
            if pad > 24:
                raise ValueError("circulant embedding failed to become positive")
        self.shape = (nx, ny)
        self.sqrt_lam = np.sqrt(np.clip(lam, 0.0, None))

    def sample(self, noise):
        """Map complex unit noise of embedding shape to a real grid field."""
        Nx, Ny = self.sqrt_lam.shape
        v = np.fft.ifft2(self.sqrt_lam * noise) * np.sqrt(Nx * Ny)
        return v.real[: self.shape[0], : self.shape[1]].ravel()


def _grid_cross_fields(nx, ny, dx, dy, cfg, rng):
    so = _GridSpectralSampler(nx, ny, dx, dy, cfg.params_o)
    sp = _GridSpectralSampler(nx, ny, dx, dy, cfg.params_p)
    if so.sqrt_lam.shape != sp.sqrt_lam.shape:
        # shared noise requires a common embedding size
        raise ValueError("grid embeddings of the two processes do not match")
    shape = so.sqrt_lam.shape
    # unit-variance real and imaginary parts (E|z|^2 = 2) make the real part
    # of the synthesized field carry exactly the target covariance
    z1 = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    z2 = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    w_o = so.sample(z1)
    w_p = sp.sample(cfg.rho * z1 + np.sqrt(1.0 - cfg.rho**2) * z2)
    return w_o, w_p


def _sample_ztp(rng, theta):
    """Zero-truncated Poisson draws by quantile inversion."""
    theta = np.asarray(theta, dtype=float)
    u = rng.random(theta.shape)
    q = np.exp(-theta) + u * (-np.expm1(-theta))
    z = poisson.ppf(np.minimum(q, 1.0 - 1e-16), theta)
    return np.maximum(z, 1.0)


COVARIATE_LAWS = {
    "standard-normal": lambda rng, n, k: rng.standard_normal((n, k)),
    "uniform-symmetric": lambda rng, n, k: 2.0 * rng.random((n, k)) - 1.0,
    "uniform01": lambda rng, n, k: rng.random((n, k)),
}


@dataclass
class SyntheticDataset:
    """Sites, covariates, latent fields, observations, and the split."""

    sites: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    idx_train: np.ndarray
    idx_cv: np.ndarray
    family: TwoPartFamily
    seed: int
    W_o: np.ndarray | None = None
    W_p: np.ndarray | None = None
    occurrence: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_train(self):
        return len(self.idx_train)

    @property
    def n_cv(self):
        return len(self.idx_cv)

    def train(self):
        i = self.idx_train
        return self.sites[i], self.X[i], self.Z[i]

    def validation(self):
        i = self.idx_cv
        return self.sites[i], self.X[i], self.Z[i]


def generate_dataset(
    family,
    n,
    n_cv,
    cfg,
    beta_o,
    beta_p,
    sigma2_eps=0.1,
    seed=0,
    layout="uniform",
    grid_shape=None,
    covariates=None,
):
    """Simulate a zero-inflated spatial dataset.

    Sites are uniform on the unit square (``layout='uniform'``) or a regular
    ``grid_shape`` grid with a random train/validation assignment
    (``layout='grid'``, which also switches the field sampler to exact
    circulant embedding so large grids stay tractable).  Covariates are iid
    standard normal; the occurrence surface is logit^{-1}(X beta_o + W_o)
    and the prevalence parameter exp(X beta_p + W_p) for count families or
    X beta_p + W_p (plus the nugget) for semi-continuous ones.
    """
    if isinstance(family, str):
        family = family_from_tag(family)
    beta_o = np.asarray(beta_o, dtype=float)
    beta_p = np.asarray(beta_p, dtype=float)
    if beta_o.shape != beta_p.shape:
        raise ValueError("occurrence and prevalence coefficient lengths differ")
    rng = np.random.default_rng(seed)
    N = n + n_cv

    if layout == "uniform":
        sites = rng.random((N, 2))
        w_o, w_p = sample_cross_fields(sites, cfg, rng)
        idx_train = np.arange(n)
        idx_cv = np.arange(n, N)
    elif layout == "grid":
        if grid_shape is None or grid_shape[0] * grid_shape[1] != N:
            raise ValueError("grid layout needs grid_shape with product n + n_cv")
        gx, gy = grid_shape
        xs = np.linspace(0.0, 1.0, gx)
        ys = np.linspace(0.0, 1.0, gy)
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        sites = np.column_stack([xx.ravel(), yy.ravel()])
        w_o, w_p = _grid_cross_fields(gx, gy, xs[1] - xs[0], ys[1] - ys[0], cfg, rng)
        perm = rng.permutation(N)
        idx_train = np.sort(perm[:n])
        idx_cv = np.sort(perm[n:])
    else:
        raise ValueError(f"unknown layout {layout!r}")

    k = len(beta_o)
    if covariates is None:
        covariates = "standard-normal"
    if isinstance(covariates, str):
        if covariates not in COVARIATE_LAWS:
            raise ValueError(f"unknown covariate law {covariates!r}")
        cov_label = covariates
        X = COVARIATE_LAWS[covariates](rng, N, k)
    else:
        cov_label = "user supplied"
        X = np.asarray(covariates, dtype=float)
        if X.shape != (N, k):
            raise ValueError(f"covariates must have shape ({N}, {k})")
    pi = occurrence_prob(X @ beta_o + w_o, "logit")
    occ = rng.random(N) < pi
    eta_p = X @ beta_p + w_p

    if family.tag == "hurdle-count":
        prev = _sample_ztp(rng, np.exp(eta_p))
    elif family.tag == "mixture-poisson":
        prev = rng.poisson(np.exp(eta_p)).astype(float)
    elif family.tag == "hurdle-lognormal":
        prev = np.exp(eta_p + np.sqrt(sigma2_eps) * rng.standard_normal(N))
    else:  # mixture-tobit
        pstar = eta_p + np.sqrt(sigma2_eps) * rng.standard_normal(N)
        prev = np.where(pstar > family.tobit_threshold, pstar, 0.0)

    Z = np.where(occ, prev, 0.0)
    meta = {
        "family": family.tag,
        "tobit_threshold": family.tobit_threshold,
        "n_train": n,
        "n_cv": n_cv,
        "beta_o": beta_o.tolist(),
        "beta_p": beta_p.tolist(),
        "matern_o": {"nu": cfg.params_o.nu, "phi": cfg.params_o.phi, "sigma2": cfg.params_o.sigma2},
        "matern_p": {"nu": cfg.params_p.nu, "phi": cfg.params_p.phi, "sigma2": cfg.params_p.sigma2},
        "rho": cfg.rho,
        "sigma2_eps": sigma2_eps if family.uses_nugget else None,
        "seed": int(seed) if np.isscalar(seed) else None,
        "layout": layout,
        "covariates": cov_label,
    }
    return SyntheticDataset(
        sites=sites,
        X=X,
        Z=Z,
        idx_train=idx_train,
        idx_cv=idx_cv,
        family=family,
        seed=int(seed) if np.isscalar(seed) else 0,
        W_o=w_o,
        W_p=w_p,
        occurrence=occ,
        meta=meta,
    )


@dataclass
class BisquareDesign:
    """Multiresolution bisquare basis on quad-tree knots.

    Three nested knot grids (2x2, 4x4, 8x8; 84 knots total) placed on the
    domain box expanded 15% per side; each resolution's aperture is 1.5
    times the shortest spacing between its knots.  ``matrix`` holds the
    basis evaluated at the sites the design was built from; ``evaluate``
    re-evaluates at new sites (e.g. validation locations).
    """

    knots: np.ndarray
    apertures: np.ndarray
    resolution_sizes: tuple
    matrix: np.ndarray

    def evaluate(self, sites):
        sites = np.asarray(sites, dtype=float)
        d = cdist(sites, self.knots)
        r = d / self.apertures[None, :]
        return np.where(r < 1.0, (1.0 - r**2) ** 2, 0.0)


def build_bisquare_design(sites, box=None):
    """Build the 84-column quad-tree bisquare design at ``sites``."""
    sites = np.asarray(sites, dtype=float)
    if box is None:
        box = (sites[:, 0].min(), sites[:, 0].max(), sites[:, 1].min(), sites[:, 1].max())
    xmin, xmax, ymin, ymax = box
    dx = 0.15 * (xmax - xmin)
    dy = 0.15 * (ymax - ymin)
    knots = []
    apertures = []
    sizes = (4, 16, 64)
    for r in (2, 4, 8):
        xs = np.linspace(xmin - dx, xmax + dx, r)
        ys = np.linspace(ymin - dy, ymax + dy, r)
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        knots.append(np.column_stack([xx.ravel(), yy.ravel()]))
        spacing = min(xs[1] - xs[0], ys[1] - ys[0])
        apertures.append(np.full(r * r, 1.5 * spacing))
    knots = np.vstack(knots)
    apertures = np.concatenate(apertures)
    design = BisquareDesign(knots, apertures, sizes, np.empty((0, len(knots))))
    design.matrix = design.evaluate(sites)
    return design


def save_dataset(ds, path):
    """Write the dataset CSV (x_coord, y_coord, z, x1..xk, split) plus metadata."""
    n_total = len(ds.Z)
    split = np.empty(n_total, dtype=object)
    split[ds.idx_train] = "train"
    split[ds.idx_cv] = "validate"
    cols = {"x_coord": ds.sites[:, 0], "y_coord": ds.sites[:, 1], "z": ds.Z}
    for j in range(ds.X.shape[1]):
        cols[f"x{j + 1}"] = ds.X[:, j]
    cols["split"] = split
    pd.DataFrame(cols).to_csv(path, index=False)
    with open(f"{path}.meta.json", "w", encoding="utf-8") as fh:
        json.dump(ds.meta, fh, indent=2)


def load_dataset(path, family=None):
    """Read a dataset CSV written by :func:`save_dataset`."""
    df = pd.read_csv(path)
    required = {"x_coord", "y_coord", "z", "split"}
    if not required.issubset(df.columns):
        raise ValueError(f"dataset file missing columns {sorted(required - set(df.columns))}")
    xcols = sorted((c for c in df.columns if c.startswith("x") and c[1:].isdigit()), key=lambda c: int(c[1:]))
    meta = {}
    try:
        with open(f"{path}.meta.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        pass
    if family is None:
        family = family_from_tag(meta.get("family", "hurdle-count"), meta.get("tobit_threshold", 0.0) or 0.0)
    elif isinstance(family, str):
        family = family_from_tag(family)
    split = df["split"].to_numpy()
    return SyntheticDataset(
        sites=df[["x_coord", "y_coord"]].to_numpy(),
        X=df[xcols].to_numpy() if xcols else np.empty((len(df), 0)),
        Z=df["z"].to_numpy(dtype=float),
        idx_train=np.flatnonzero(split == "train"),
        idx_cv=np.flatnonzero(split == "validate"),
        family=family,
        seed=meta.get("seed", 0) or 0,
        meta=meta,
    )
