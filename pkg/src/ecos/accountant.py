"""Renyi-DP accounting for the noised coverage-score query.

Provides the analytic Gaussian RDP curve, the exact Poisson-subsampled
Gaussian RDP at integer orders (binomial expansion), additive composition,
conversion to (epsilon, delta)-DP, and the closed-form asymptotic bound
epsilon = 24 g^2 / s^2 + 4 (g/s) sqrt(6 log(1/delta)) with its validity
conditions g <= min(0.1, s sqrt(log(1/delta)/6)) and s >= 2 sqrt(5).

The closed form and the linear RDP ceiling 24 g^2 a / s^2 describe the
unit-sensitivity subsampled Gaussian, i.e. s is the noise-to-sensitivity
ratio; pass sensitivity=1 (or sigma/sensitivity) when comparing against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import BoundValidityError, NonPrivateError, ValidationError

DEFAULT_DELTA = 1e-5
_GAUSSIAN_EXTRA_ORDERS = (1.25, 1.5, 1.75)
_MAX_ORDER = 16384


def default_orders(gamma: float = 1.0) -> np.ndarray:
    """Integer orders 2..256 plus a geometric tail up to 16384.

    The tail covers strongly subsampled or high-noise settings whose optimal
    conversion order is large. Pure-Gaussian curves (gamma == 1) also get a
    few fractional orders below 2; the exact subsampled formula is
    integer-order only.
    """
    orders = set(range(2, 257))
    a = 256.0
    while a < _MAX_ORDER:
        a *= 1.12
        orders.add(min(int(round(a)), _MAX_ORDER))
    grid = sorted(orders)
    if gamma == 1.0:
        return np.array(list(_GAUSSIAN_EXTRA_ORDERS) + grid, dtype=np.float64)
    return np.array(grid, dtype=np.float64)


@dataclass(eq=False)
class RdpCurve:
    """epsilon(alpha) over a grid of Renyi orders alpha > 1."""

    orders: np.ndarray
    eps_rdp: np.ndarray

    def __post_init__(self):
        self.orders = np.asarray(self.orders, dtype=np.float64)
        self.eps_rdp = np.asarray(self.eps_rdp, dtype=np.float64)
        if self.orders.ndim != 1 or self.orders.shape != self.eps_rdp.shape:
            raise ValidationError("orders and eps_rdp must be 1-d arrays of equal length")
        if self.orders.size == 0:
            raise ValidationError("curve must contain at least one order")
        if self.orders.min() <= 1:
            raise ValidationError("all orders must be > 1")
        if self.eps_rdp.min() < 0:
            raise ValidationError("eps(alpha) must be >= 0")


def gaussian_rdp(sigma: float, sensitivity: float, orders) -> RdpCurve:
    """Gaussian mechanism RDP: eps(alpha) = alpha * sensitivity^2 / (2 sigma^2)."""
    if sigma == 0:
        raise NonPrivateError("sigma == 0 has no finite RDP curve; mark the query non-private")
    if sigma < 0 or sensitivity <= 0:
        raise ValidationError("sigma and sensitivity must be positive")
    orders = np.asarray(orders, dtype=np.float64)
    return RdpCurve(orders=orders, eps_rdp=orders * sensitivity**2 / (2.0 * sigma**2))


def subsampled_gaussian_rdp(sigma: float, sensitivity: float, gamma: float, orders) -> RdpCurve:
    """Exact Poisson-subsampled Gaussian RDP at integer orders.

    Uses the binomial expansion of the sampled Gaussian mechanism:
        A(a) = (1-g)^(a-1) (1 + (a-1) g)
             + sum_{j=2..a} C(a,j) g^j (1-g)^(a-j) exp(j (j-1) d^2 / (2 s^2))
        eps(a) = log A(a) / (a - 1)
    where the first line folds the j = 0 and j = 1 terms together. gamma == 1
    reduces exactly to gaussian_rdp. Within the lemma validity range
    (gamma <= 0.1, sigma >= 2 sqrt(5), alpha <= sigma^2 log(1/gamma) / 2) the
    unit-sensitivity value never exceeds the 24 g^2 a / s^2 ceiling.
    """
    if sigma == 0:
        raise NonPrivateError("sigma == 0 has no finite RDP curve; mark the query non-private")
    if sigma < 0 or sensitivity <= 0:
        raise ValidationError("sigma and sensitivity must be positive")
    if not 0 < gamma <= 1:
        raise ValidationError("gamma must be in (0, 1]")
    if gamma == 1.0:
        return gaussian_rdp(sigma, sensitivity, orders)

    orders = np.asarray(orders, dtype=np.float64)
    if orders.size == 0:
        raise ValidationError("orders must be non-empty")
    if np.any(np.abs(orders - np.round(orders)) > 1e-9) or orders.min() < 2:
        raise ValidationError("exact subsampled mode requires integer orders >= 2")

    half_rho = sensitivity**2 / (2.0 * sigma**2)
    log_g = math.log(gamma)
    log_1mg = math.log1p(-gamma)
    eps = np.empty(orders.shape[0], dtype=np.float64)
    for i, a_f in enumerate(orders):
        a = int(round(a_f))
        j = np.arange(2, a + 1, dtype=np.float64)
        log_terms = (
            gammaln(a + 1.0)
            - gammaln(j + 1.0)
            - gammaln(a - j + 1.0)
            + j * log_g
            + (a - j) * log_1mg
            + j * (j - 1.0) * half_rho
        )
        lead = (a - 1.0) * log_1mg + math.log1p((a - 1.0) * gamma)
        total = logsumexp(np.concatenate(([lead], log_terms)))
        eps[i] = max(total / (a - 1.0), 0.0)
    return RdpCurve(orders=orders, eps_rdp=eps)


def lemma_rdp_bound(sigma: float, gamma: float, orders) -> np.ndarray:
    """The linear ceiling 24 g^2 a / s^2 for the unit-sensitivity subsampled Gaussian."""
    orders = np.asarray(orders, dtype=np.float64)
    return 24.0 * gamma**2 * orders / sigma**2


def lemma_order_cap(sigma: float, gamma: float) -> float:
    """Largest order the lemma's RDP ceiling is stated for: sigma^2 log(1/gamma) / 2."""
    if gamma >= 1:
        return 0.0
    return sigma**2 * math.log(1.0 / gamma) / 2.0


def rdp_to_dp(curve: RdpCurve, delta: float) -> tuple[float, float]:
    """Best (epsilon, order): min over alpha of eps(alpha) + log(1/delta)/(alpha-1)."""
    if not 0 < delta < 1:
        raise ValidationError("delta must be in (0, 1)")
    penalty = math.log(1.0 / delta) / (curve.orders - 1.0)
    candidates = curve.eps_rdp + penalty
    best = int(np.argmin(candidates))
    return float(candidates[best]), float(curve.orders[best])


def closed_form_bound(sigma: float, gamma: float, delta: float) -> float:
    """Closed-form (epsilon, delta)-DP cost of the subsampled Gaussian query.

    Valid for gamma <= min(0.1, sigma sqrt(log(1/delta)/6)) and
    sigma >= 2 sqrt(5); outside that range raises BoundValidityError.
    """
    if not 0 < delta < 1:
        raise ValidationError("delta must be in (0, 1)")
    if not 0 < gamma <= 1:
        raise ValidationError("gamma must be in (0, 1]")
    if sigma < 2.0 * math.sqrt(5.0):
        raise BoundValidityError(
            f"closed-form bound requires sigma >= 2*sqrt(5) ~ 4.4721, got {sigma}"
        )
    log_inv_delta = math.log(1.0 / delta)
    gamma_cap = min(0.1, sigma * math.sqrt(log_inv_delta / 6.0))
    if gamma > gamma_cap:
        raise BoundValidityError(
            f"closed-form bound requires gamma <= {gamma_cap:.6g}, got {gamma}"
        )
    return 24.0 * gamma**2 / sigma**2 + 4.0 * (gamma / sigma) * math.sqrt(6.0 * log_inv_delta)


@dataclass(eq=False)
class LedgerEntry:
    """One accounted mechanism invocation; curve is None for non-private markers."""

    mechanism: str
    sigma: float
    gamma: float
    sensitivity: float
    queries: int = 1
    curve: RdpCurve | None = None
    non_private: bool = False


@dataclass(eq=False)
class PrivacyLedger:
    """Accumulated RDP curves per query plus their entrywise composition."""

    entries: list[LedgerEntry] = field(default_factory=list)
    composed: RdpCurve | None = None

    @property
    def non_private(self) -> bool:
        return any(e.non_private for e in self.entries)

    def epsilon(self, delta: float) -> tuple[float | None, float | None]:
        """(epsilon, best order) of the composition; (None, None) when non-private or empty."""
        if self.non_private or self.composed is None:
            return None, None
        return rdp_to_dp(self.composed, delta)

    def to_dict(self, delta: float = DEFAULT_DELTA) -> dict:
        """JSON-ready ledger with full parameter provenance; field order is fixed."""
        eps, best_alpha = self.epsilon(delta)
        return {
            "non_private": self.non_private,
            "entries": [
                {
                    "mechanism": e.mechanism,
                    "sigma": e.sigma,
                    "gamma": e.gamma,
                    "sensitivity": e.sensitivity,
                    "queries": e.queries,
                    "non_private": e.non_private,
                    "orders": None if e.curve is None else [float(a) for a in e.curve.orders],
                    "eps_rdp": None if e.curve is None else [float(v) for v in e.curve.eps_rdp],
                }
                for e in self.entries
            ],
            "composed": None
            if self.composed is None
            else {
                "orders": [float(a) for a in self.composed.orders],
                "eps_rdp": [float(v) for v in self.composed.eps_rdp],
            },
            "delta": delta,
            "epsilon": eps,
            "best_alpha": best_alpha,
        }


def compose(ledger: PrivacyLedger, curve: RdpCurve, entry: LedgerEntry | None = None) -> PrivacyLedger:
    """Ledger with one more mechanism composed in (entrywise RDP sum per order)."""
    if entry is None:
        entry = LedgerEntry(mechanism="external", sigma=float("nan"), gamma=1.0, sensitivity=float("nan"), curve=curve)
    if ledger.composed is None:
        composed = RdpCurve(orders=curve.orders.copy(), eps_rdp=curve.eps_rdp.copy())
    else:
        if not np.array_equal(ledger.composed.orders, curve.orders):
            raise ValidationError("cannot compose curves on mismatched order grids")
        composed = RdpCurve(
            orders=ledger.composed.orders.copy(),
            eps_rdp=ledger.composed.eps_rdp + curve.eps_rdp,
        )
    return PrivacyLedger(entries=[*ledger.entries, entry], composed=composed)


def ledger_for_query(
    sigma: float,
    gamma: float,
    sensitivity: float,
    subsample_mode: str = "poisson",
) -> PrivacyLedger:
    """Ledger for the protocol's single scoring query.

    The scoring query is one Gaussian release of the count vector regardless
    of R, s, or the budget; sigma == 0 yields an explicit non-private marker
    rather than a number.
    """
    if sigma == 0:
        entry = LedgerEntry(
            mechanism="coverage_scores",
            sigma=0.0,
            gamma=float(gamma),
            sensitivity=float(sensitivity),
            non_private=True,
        )
        return PrivacyLedger(entries=[entry], composed=None)
    mechanism = "gaussian" if gamma == 1.0 else f"subsampled_gaussian[{subsample_mode}]"
    curve = subsampled_gaussian_rdp(sigma, sensitivity, gamma, default_orders(gamma))
    entry = LedgerEntry(
        mechanism=f"coverage_scores/{mechanism}",
        sigma=float(sigma),
        gamma=float(gamma),
        sensitivity=float(sensitivity),
        curve=curve,
    )
    return PrivacyLedger(entries=[entry], composed=RdpCurve(curve.orders.copy(), curve.eps_rdp.copy()))
