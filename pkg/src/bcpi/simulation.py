"""Synthetic benchmarks: block-correlated Gaussian designs with known truth.

The generator draws rows from N(0, Sigma) where Sigma has intra-block
correlation ``rho_intra`` and inter-block correlation ``rho_inter``, places
sparse regression coefficients on the leading variables of the leading
groups, optionally adds pairwise interactions among the signal columns, and
scales the additive Gaussian noise so that sigma = ||signal||_2 / (SNR * sqrt(n)).
"""

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .errors import NotPositiveSemidefinite, ZeroSignal
from .types import Dataset, GroupSpec, derive_seed

DEFAULT_COEFFICIENT_POOL = (3.0, -3.0, 2.0, -2.0, 1.0, -1.0, 0.5, -0.5)

#: marker for "all pairs among the signal columns" in OutcomeConfig.interactions
SIGNAL_PAIRS = "signal-pairs"


@dataclass(frozen=True)
class BlockCovarianceConfig:
    """Shape of the block-structured correlation matrix."""

    n_blocks: int
    block_size: int
    rho_intra: float = 0.8
    rho_inter: float = 0.0

    def __post_init__(self):
        if self.n_blocks < 1 or self.block_size < 1:
            raise ValueError("n_blocks and block_size must be positive")
        for name in ("rho_intra", "rho_inter"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")

    @property
    def p(self):
        return self.n_blocks * self.block_size


@dataclass(frozen=True)
class OutcomeConfig:
    """How the outcome is assembled from the design.

    ``interactions`` may be None (pure linear model), the marker
    :data:`SIGNAL_PAIRS` (quadratic terms for every pair of signal columns),
    or an explicit sequence of column pairs (k, j) with k < j.
    """

    signal_groups: int
    signals_per_group: int = 1
    coefficient_pool: tuple = DEFAULT_COEFFICIENT_POOL
    snr: float = 2.0
    interactions: object = None

    def __post_init__(self):
        if self.signal_groups < 0 or self.signals_per_group < 0:
            raise ValueError("signal counts must be non-negative")
        if self.snr <= 0:
            raise ValueError("snr must be positive")
        if not self.coefficient_pool:
            raise ValueError("coefficient_pool must be non-empty")
        object.__setattr__(
            self, "coefficient_pool", tuple(float(c) for c in self.coefficient_pool)
        )
        inter = self.interactions
        if inter is not None and inter != SIGNAL_PAIRS:
            inter = tuple((int(k), int(j)) for k, j in inter)
            for k, j in inter:
                if not k < j:
                    raise ValueError(f"interaction pair ({k}, {j}) must have k < j")
            object.__setattr__(self, "interactions", inter)


@dataclass(frozen=True, eq=False)
class SimulatedTruth:
    """Ground truth of one simulated prediction task."""

    beta: np.ndarray
    important_groups: np.ndarray
    sigma: float = None
    quad_pairs: tuple = ()
    quad_coefs: tuple = ()

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        beta.setflags(write=False)
        important = np.array(self.important_groups, dtype=bool)
        important.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "important_groups", important)
        object.__setattr__(self, "quad_pairs", tuple(map(tuple, self.quad_pairs)))
        object.__setattr__(self, "quad_coefs", tuple(float(c) for c in self.quad_coefs))


def build_block_covariance(cfg):
    """Assemble the p x p block correlation matrix.

    Unit diagonal, ``rho_intra`` within a block, ``rho_inter`` across blocks.
    The result is exactly symmetric by construction.

    Raises
    ------
    NotPositiveSemidefinite
        When ``rho_inter > rho_intra``, which breaks positive semidefiniteness.
    """
    if cfg.rho_inter > cfg.rho_intra:
        raise NotPositiveSemidefinite(
            f"rho_inter={cfg.rho_inter} exceeds rho_intra={cfg.rho_intra}"
        )
    p = cfg.p
    sigma = np.full((p, p), cfg.rho_inter)
    for k in range(cfg.n_blocks):
        lo, hi = k * cfg.block_size, (k + 1) * cfg.block_size
        sigma[lo:hi, lo:hi] = cfg.rho_intra
    np.fill_diagonal(sigma, 1.0)
    return sigma


def sample_design(sigma_matrix, n, seed):
    """Draw n i.i.d. rows from N(0, Sigma) via the Cholesky factor."""
    sigma_matrix = np.asarray(sigma_matrix, dtype=float)
    try:
        chol = np.linalg.cholesky(sigma_matrix)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveSemidefinite(
            "covariance matrix has no Cholesky factor"
        ) from exc
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, sigma_matrix.shape[0]))
    return z @ chol.T


def _signal_columns(cfg, spec):
    cols = []
    for k in range(cfg.signal_groups):
        group = spec.groups[k]
        if cfg.signals_per_group > len(group):
            raise ValueError(
                f"signals_per_group={cfg.signals_per_group} exceeds the size "
                f"of group {k} ({len(group)})"
            )
        cols.extend(group[: cfg.signals_per_group])
    return cols


def draw_beta(cfg, spec, seed):
    """Place sparse coefficients on the leading variables of leading groups.

    The first ``signals_per_group`` columns of each of the first
    ``signal_groups`` groups get coefficients drawn i.i.d. uniformly from the
    pool; everything else stays zero. A group is marked important when it
    contains at least one nonzero main-effect or interaction column.
    """
    if cfg.signal_groups > spec.n_groups:
        raise ValueError(
            f"signal_groups={cfg.signal_groups} exceeds the {spec.n_groups} groups"
        )
    p = max((max(g) for g in spec.groups), default=-1) + 1
    rng = np.random.default_rng(derive_seed(seed, "coefficients"))
    beta = np.zeros(p)
    signal_cols = _signal_columns(cfg, spec)
    if signal_cols:
        beta[signal_cols] = rng.choice(cfg.coefficient_pool, size=len(signal_cols))

    if cfg.interactions is None:
        pairs = ()
    elif cfg.interactions == SIGNAL_PAIRS:
        pairs = tuple(itertools.combinations(sorted(signal_cols), 2))
    else:
        pairs = cfg.interactions
    coefs = tuple(rng.choice(cfg.coefficient_pool, size=len(pairs)).tolist())

    active = set(np.flatnonzero(beta))
    for (k, j), c in zip(pairs, coefs):
        if c != 0.0:
            active.update((k, j))
    important = np.array(
        [any(i in active for i in group) for group in spec.groups], dtype=bool
    )
    return SimulatedTruth(
        beta=beta, important_groups=important, quad_pairs=pairs, quad_coefs=coefs
    )


def quad_signal(x, pairs, coefs):
    """Sum of coef * x_k * x_j over the interaction pairs, per row."""
    out = np.zeros(x.shape[0])
    for (k, j), c in zip(pairs, coefs):
        out += c * x[:, k] * x[:, j]
    return out


def simulate_outcome(x, truth, cfg, seed, sigma=None):
    """Build y = signal + sigma * eps with SNR-scaled noise magnitude.

    The signal is ``x @ beta`` plus any quadratic interaction terms. When
    ``sigma`` is not given it is set to ||signal||_2 / (snr * sqrt(n)).

    Returns
    -------
    (y, sigma) : (ndarray, float)

    Raises
    ------
    ZeroSignal
        If SNR scaling is requested but the signal vector is identically zero;
        pass an explicit ``sigma`` for null models.
    """
    x = np.asarray(x, dtype=float)
    signal = x @ truth.beta
    if truth.quad_pairs:
        signal = signal + quad_signal(x, truth.quad_pairs, truth.quad_coefs)
    if sigma is None:
        norm = float(np.linalg.norm(signal))
        if norm == 0.0:
            raise ZeroSignal(
                "signal is identically zero; pass an explicit sigma instead of SNR scaling"
            )
        sigma = norm / (cfg.snr * np.sqrt(x.shape[0]))
    rng = np.random.default_rng(derive_seed(seed, "noise"))
    y = signal + sigma * rng.standard_normal(x.shape[0])
    return y, float(sigma)


def simulate_dataset(cov_cfg, out_cfg, n, seed, sigma=None):
    """One full draw: design, groups (one per block), coefficients, outcome.

    Returns
    -------
    (Dataset, GroupSpec, SimulatedTruth)
        The truth carries the realized noise magnitude.
    """
    spec = GroupSpec.contiguous_blocks(cov_cfg.n_blocks, cov_cfg.block_size)
    sigma_matrix = build_block_covariance(cov_cfg)
    x = sample_design(sigma_matrix, n, derive_seed(seed, "design"))
    truth = draw_beta(out_cfg, spec, seed)
    y, sigma_used = simulate_outcome(x, truth, out_cfg, seed, sigma=sigma)
    truth = replace(truth, sigma=sigma_used)
    return Dataset(x=x, y=y), spec, truth
