"""Cross-correlation objectives: Barlow Twins, Competitive Barlow Twins, VICReg terms.

Every function takes and returns :class:`~graphac.tensor.Value` objects so the
result can be differentiated. Plain arrays are accepted and treated as
constants.

Conventions
-----------
* ``C[i, j]`` correlates feature ``i`` of the first embedding (seat A) with
  feature ``j`` of the second (seat B).
* Cross-correlation is the exact Pearson correlation per feature pair, i.e.
  ``A_hat.T @ B_hat / (N - 1)`` where ``A_hat`` is centred and divided by the
  unbiased column std. Self-correlation diagonals are therefore exactly 1.
* Triangles are strict; the diagonal belongs to the invariance term.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Value


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    beta: float = 1.0
    lambda_cbt: float = 5e-3
    mu_cbt: float = 1.0
    # VICReg weights; the invariance/variance terms are off unless enabled
    lambda_v: float = 25.0
    mu_v: float = 25.0
    nu_v: float = 1.0
    use_vicreg_invariance: bool = False
    use_vicreg_variance: bool = False

    def __post_init__(self):
        for name in ("alpha", "beta", "lambda_cbt", "mu_cbt", "lambda_v", "mu_v", "nu_v"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"must be > 0, got {getattr(self, name)!r}", key_path=f"loss.{name}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", key_path="loss")
        return cls(**data)


def _check_pair(name, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")
    if a.shape[0] < 2:
        raise ContractError(f"{name}: need at least 2 rows, got {a.shape[0]}")


def batch_normalize(h, mode: str = "center-and-scale") -> Value:
    """Center columns over the batch, optionally dividing by the unbiased column std."""
    h = T.constant(h)
    if h.shape[0] < 2:
        raise ContractError(f"batch_normalize: need at least 2 rows, got {h.shape[0]}")
    centered = h - T.column_mean(h)
    if mode == "center":
        return centered
    if mode == "center-and-scale":
        return T.divide(centered, T.column_std(h))
    raise ContractError(f"batch_normalize: unknown mode {mode!r}")


def cross_correlation(h_a, h_b) -> Value:
    """d x d feature cross-correlation between two N x d embedding batches."""
    h_a, h_b = T.constant(h_a), T.constant(h_b)
    _check_pair("cross_correlation", h_a, h_b)
    n = h_a.shape[0]
    za = batch_normalize(h_a)
    zb = batch_normalize(h_b)
    return T.scale(T.matmul(T.transpose(za), zb), 1.0 / (n - 1))


def _masks(d):
    eye = np.eye(d)
    upper = np.triu(np.ones((d, d)), k=1)
    return eye, upper, upper.T.copy()


def invariance_term(c) -> Value:
    """Sum over i of (1 - C_ii)^2."""
    c = T.constant(c)
    if c.shape[0] != c.shape[1]:
        raise DimensionError(f"invariance_term: C must be square, got {c.shape}")
    eye = np.eye(c.shape[0])
    return T.sum_of_squares(T.subtract(eye, T.multiply(c, eye)))


def triangle_sums(c) -> tuple[Value, Value]:
    """(upper, lower): squared entries summed over the strict upper / lower triangle."""
    c = T.constant(c)
    if c.shape[0] != c.shape[1]:
        raise DimensionError(f"triangle_sums: C must be square, got {c.shape}")
    _, upper, lower = _masks(c.shape[0])
    return T.sum_of_squares(T.multiply(c, upper)), T.sum_of_squares(T.multiply(c, lower))


def barlow_twins_loss(c, lam: float = 5e-3) -> Value:
    c = T.constant(c)
    inv = invariance_term(c)
    d = c.shape[0]
    off = T.sum_of_squares(T.multiply(c, 1.0 - np.eye(d)))
    return T.add(inv, T.scale(off, lam))


def competitive_bt_losses(c, lam: float = 5e-3, mu: float = 1.0) -> tuple[Value, Value]:
    """Loss pair where seat A is charged the upper triangle and seat B the lower."""
    c = T.constant(c)
    inv = invariance_term(c)
    upper, lower = triangle_sums(c)
    loss_a = T.add(inv, T.scale(T.subtract(upper, T.scale(lower, mu)), lam))
    loss_b = T.add(inv, T.scale(T.subtract(lower, T.scale(upper, mu)), lam))
    return loss_a, loss_b


def covariance_term(h) -> Value:
    """Squared off-diagonal entries of the unbiased covariance matrix, divided by d."""
    h = T.constant(h)
    n, d = h.shape
    if n < 2:
        raise ContractError(f"covariance_term: need at least 2 rows, got {n}")
    centered = batch_normalize(h, "center")
    cov = T.scale(T.matmul(T.transpose(centered), centered), 1.0 / (n - 1))
    return T.scale(T.sum_of_squares(T.multiply(cov, 1.0 - np.eye(d))), 1.0 / d)


def vicreg_terms(h_a, h_b) -> tuple[Value, Value, Value]:
    """(invariance, variance, covariance) with variance/covariance summed over both inputs.

    invariance: mean over rows of the squared Euclidean distance.
    variance: mean over columns of max(0, 1 - std), per input.
    """
    h_a, h_b = T.constant(h_a), T.constant(h_b)
    _check_pair("vicreg_terms", h_a, h_b)
    n, d = h_a.shape
    inv = T.scale(T.sum_of_squares(T.subtract(h_a, h_b)), 1.0 / n)
    ones = np.ones((1, d))
    var = T.add(T.scale(T.sum(T.relu(T.subtract(ones, T.column_std(h_a)))), 1.0 / d),
                T.scale(T.sum(T.relu(T.subtract(ones, T.column_std(h_b)))), 1.0 / d))
    cov = T.add(covariance_term(h_a), covariance_term(h_b))
    return inv, var, cov


def vicreg_loss(h_a, h_b, config: LossConfig | None = None) -> Value:
    """Weighted VICReg objective: lambda_v * inv + mu_v * var + nu_v * cov."""
    config = config or LossConfig()
    inv, var, cov = vicreg_terms(h_a, h_b)
    return T.add(T.add(T.scale(inv, config.lambda_v), T.scale(var, config.mu_v)),
                 T.scale(cov, config.nu_v))


def graphac_losses(h_a, h_b, config: LossConfig | None = None):
    """Composite per-seat losses and a diagnostics dict.

    Returns ``(loss_a, loss_b, diagnostics)``; diagnostics holds the
    correlation matrix and the scalar components as floats.
    """
    config = config or LossConfig()
    h_a, h_b = T.constant(h_a), T.constant(h_b)
    _check_pair("graphac_losses", h_a, h_b)
    c = cross_correlation(h_a, h_b)
    inv = invariance_term(c)
    upper, lower = triangle_sums(c)
    lam, mu = config.lambda_cbt, config.mu_cbt
    cbt_a = T.add(inv, T.scale(T.subtract(upper, T.scale(lower, mu)), lam))
    cbt_b = T.add(inv, T.scale(T.subtract(lower, T.scale(upper, mu)), lam))
    cov = T.add(covariance_term(h_a), covariance_term(h_b))

    shared = T.scale(cov, config.beta)
    extras = {}
    if config.use_vicreg_invariance or config.use_vicreg_variance:
        v_inv, v_var, _ = vicreg_terms(h_a, h_b)
        if config.use_vicreg_invariance:
            shared = T.add(shared, T.scale(v_inv, config.lambda_v))
            extras["vicreg_invariance"] = v_inv.item()
        if config.use_vicreg_variance:
            shared = T.add(shared, T.scale(v_var, config.mu_v))
            extras["vicreg_variance"] = v_var.item()

    loss_a = T.add(T.scale(cbt_a, config.alpha), shared)
    loss_b = T.add(T.scale(cbt_b, config.alpha), shared)
    diagnostics = {
        "C": c.data.copy(),
        "inv_term": inv.item(),
        "upper_tri": upper.item(),
        "lower_tri": lower.item(),
        "cov_term": cov.item(),
        **extras,
    }
    return loss_a, loss_b, diagnostics
