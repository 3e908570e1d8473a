"""NBTI threshold-voltage aging, process variation, and lifetime solving.

Threshold drift follows the long-term reaction-diffusion trend. Two forms are
available: a closed power law dVth(t) = kv * (alpha * t / 1s)^lambda, and the
explicit long-term RD expression
dVth(t) = (sqrt(kv^2 * alpha * t_data) / (1 - beta(t)^(1/(2*lambda))))^(2*lambda)
with a configurable beta(t). ON current uses an alpha-power saturation law;
a transistor fails when its ON current drops to ``failure_fraction`` of its
own unaged value (process variation shifts the reference too). Circuit
lifetime is the earliest site failure; the first-to-fail set collects every
site within a relative tolerance of that minimum.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng

__all__ = [
    "SECONDS_PER_YEAR", "AgingParams", "PvSample", "F2FSet", "AgingError",
    "delta_vth", "vth_at", "on_current_ratio", "site_lifetime",
    "site_lifetimes", "circuit_lifetime", "sample_pv", "default_kv",
]

log = logging.getLogger(__name__)

SECONDS_PER_YEAR = 365.25 * 86400.0
_T_REF = 1.0          # power-law reference time, seconds
_T_CAP = 1e30         # beyond this the model is declared non-bracketable
_REL_TOL = 1e-6


class AgingError(ValueError):
    """Raised for out-of-range model inputs and degenerate devices."""


def default_kv(lam: float) -> float:
    """Calibrate kv so the power law gives a 50 mV shift after 10 years at
    alpha = 0.5 (absolute lifetimes are calibration-dependent; only relative
    comparisons are meaningful)."""
    return 0.05 / (0.5 * 10.0 * SECONDS_PER_YEAR / _T_REF) ** lam


@dataclass
class AgingParams:
    """All model constants. Defaults target a 22nm-class device at 0.8 V."""

    vdd: float = 0.8
    vth_nominal: float = 0.45
    sigma_vth: float = 0.02
    lam: float = 1.0 / 6.0            # RD time exponent
    kv: float | None = None           # None -> calibrated via default_kv(lam)
    beta_model: str = "power_law"     # "power_law" | "rd_long_term"
    # rd_long_term: beta(t) = 1 - (b1 + b2*sqrt(t)) / (b4*sqrt(t))
    beta_params: tuple[float, float, float] = (7.1, 1.9e-6, 1.0)
    t_data: float = 1e-8
    current_exponent: float = 1.3
    failure_fraction: float = 0.5
    temperature_c: float = 25.0       # recorded only; the simplified law is isothermal
    f2f_tolerance: float = 0.01

    def __post_init__(self):
        if self.kv is None:
            self.kv = default_kv(self.lam)
        if not self.vdd > self.vth_nominal > 0:
            raise AgingError("need vdd > vth_nominal > 0")
        if not 0 < self.failure_fraction < 1:
            raise AgingError("failure_fraction must be in (0, 1)")
        if self.lam <= 0:
            raise AgingError("lambda must be positive")
        if self.sigma_vth < 0:
            raise AgingError("sigma_vth must be nonnegative")
        if self.beta_model not in ("power_law", "rd_long_term"):
            raise AgingError(f"unknown beta model {self.beta_model!r}")

    @property
    def overdrive(self) -> float:
        return self.vdd - self.vth_nominal


@dataclass
class PvSample:
    """One per-site draw of the process-variation threshold shift."""

    delta: np.ndarray   # volts, signed, one entry per site
    seed: int
    sigma: float

    @property
    def n_sites(self) -> int:
        return len(self.delta)


@dataclass(frozen=True)
class F2FSet:
    """Sites whose lifetime lies within ``tolerance`` of the circuit minimum."""

    sites: frozenset[int]
    tolerance: float

    def __contains__(self, idx: int) -> bool:
        return idx in self.sites

    def __len__(self) -> int:
        return len(self.sites)


def sample_pv(p: AgingParams, site_count: int, seed: int) -> PvSample:
    """Draw i.i.d. Gaussian threshold shifts, one per site."""
    if site_count < 1:
        raise AgingError("site_count must be >= 1")
    gen = make_rng(seed)
    delta = gen.standard_normal(site_count) * p.sigma_vth
    return PvSample(delta=delta, seed=seed, sigma=p.sigma_vth)


def _signed_power(x, e: float):
    return np.sign(x) * np.abs(x) ** e


def _beta(t, p: AgingParams):
    b1, b2, b4 = p.beta_params
    return 1.0 - (b1 + b2 * np.sqrt(t)) / (b4 * np.sqrt(t))


def delta_vth(alpha, t, p: AgingParams):
    """Threshold shift in volts at time t (seconds) under stress duty alpha.

    Both models return 0 at t = 0 and are nondecreasing in t and alpha.
    Accepts scalars or numpy arrays.
    """
    alpha_arr = np.asarray(alpha, dtype=np.float64)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(alpha_arr < 0) or np.any(alpha_arr > 1):
        raise AgingError("alpha must lie in [0, 1]")
    if np.any(t_arr < 0):
        raise AgingError("time must be nonnegative")
    if p.beta_model == "power_law":
        out = p.kv * (alpha_arr * t_arr / _T_REF) ** p.lam
    else:
        num = math.sqrt(p.kv ** 2 * p.t_data) * np.sqrt(alpha_arr)
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = 1.0 - _signed_power(_beta(t_arr, p), 1.0 / (2.0 * p.lam))
            out = np.where(t_arr > 0, (num / denom) ** (2.0 * p.lam), 0.0)
        out = np.where(alpha_arr > 0, out, 0.0)
    if np.ndim(alpha) == 0 and np.ndim(t) == 0:
        return float(out)
    return out


def vth_at(site: int, t: float, pv: PvSample, profile, p: AgingParams) -> float:
    """Threshold voltage of one site at time t: nominal + PV shift + aging shift."""
    if site < 0 or site >= pv.n_sites or site >= profile.n_sites:
        raise AgingError(f"site {site} not covered by pv sample / profile")
    return p.vth_nominal + float(pv.delta[site]) + delta_vth(float(profile.alpha[site]), t, p)


def on_current_ratio(vth_t: float, vth_0: float, p: AgingParams):
    """Aged-to-unaged ON-current ratio under an alpha-power saturation law."""
    vth_t = np.asarray(vth_t, dtype=np.float64)
    vth_0 = np.asarray(vth_0, dtype=np.float64)
    if np.any(vth_0 >= p.vdd):
        raise AgingError("degenerate device: unaged threshold at or above vdd")
    if np.any(vth_t < vth_0 - 1e-15):
        raise AgingError("aged threshold below unaged threshold")
    over = np.clip(p.vdd - vth_t, 0.0, None)
    ratio = (over / (p.vdd - vth_0)) ** p.current_exponent
    return float(ratio) if ratio.ndim == 0 else ratio


def _fail_shift(vth0_site, p: AgingParams):
    """Threshold shift at which the ON current reaches the failure fraction."""
    return (p.vdd - vth0_site) * (1.0 - p.failure_fraction ** (1.0 / p.current_exponent))


def site_lifetime(alpha: float, pv_delta: float, p: AgingParams) -> float:
    """Earliest time the site's ON current falls to the failure fraction.

    Found by bisection on a geometrically grown bracket, relative tolerance
    1e-6. Returns +inf for alpha = 0 or when the aging law saturates below the
    failure threshold (non-bracketable)."""
    if not 0.0 <= alpha <= 1.0:
        raise AgingError("alpha must lie in [0, 1]")
    vth0 = p.vth_nominal + pv_delta
    if vth0 >= p.vdd:
        raise AgingError("degenerate device: unaged threshold at or above vdd")
    if alpha == 0.0:
        return math.inf
    target = _fail_shift(vth0, p)

    def failed(t: float) -> bool:
        return delta_vth(alpha, t, p) >= target

    hi = 1.0
    while not failed(hi):
        hi *= 2.0
        if hi > _T_CAP:
            log.warning("site lifetime non-bracketable (alpha=%.4g): model saturates", alpha)
            return math.inf
    lo = 0.0 if hi == 1.0 else hi / 2.0
    while hi - lo > _REL_TOL * hi:
        mid = 0.5 * (lo + hi)
        if failed(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def site_lifetimes(alphas: np.ndarray, pv_delta: np.ndarray, p: AgingParams) -> np.ndarray:
    """Vectorized site lifetimes; agrees with site_lifetime within its tolerance.

    The power law inverts in closed form; the rd_long_term model is solved by
    bracketed bisection over the whole array at once.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    pv_delta = np.asarray(pv_delta, dtype=np.float64)
    if np.any(alphas < 0) or np.any(alphas > 1):
        raise AgingError("alpha must lie in [0, 1]")
    vth0 = p.vth_nominal + pv_delta
    if np.any(vth0 >= p.vdd):
        raise AgingError("degenerate device: unaged threshold at or above vdd")
    target = _fail_shift(vth0, p)
    out = np.full(alphas.shape, np.inf)
    live = alphas > 0
    if not np.any(live):
        return out
    if p.beta_model == "power_law":
        out[live] = (target[live] / p.kv) ** (1.0 / p.lam) * _T_REF / alphas[live]
        return out

    a, tg = alphas[live], target[live]
    hi = np.ones_like(a)
    for _ in range(120):
        need = (delta_vth(a, hi, p) < tg) & (hi <= _T_CAP)
        if not np.any(need):
            break
        hi[need] *= 2.0
    unbracketable = delta_vth(a, hi, p) < tg
    lo = np.where(hi == 1.0, 0.0, hi / 2.0)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f = delta_vth(a, mid, p) >= tg
        hi = np.where(f, mid, hi)
        lo = np.where(f, lo, mid)
    res = 0.5 * (lo + hi)
    res[unbracketable] = np.inf
    if np.any(unbracketable):
        log.warning("%d sites non-bracketable: aging law saturates below failure",
                    int(np.sum(unbracketable)))
    out[live] = res
    return out


def circuit_lifetime(profile, pv: PvSample, p: AgingParams) -> tuple[float, F2FSet]:
    """Circuit lifetime (earliest site failure) and the first-to-fail set."""
    if profile.n_sites == 0:
        raise AgingError("empty stress profile")
    if profile.n_sites != pv.n_sites:
        raise AgingError("profile and pv sample cover different site sets")
    lives = site_lifetimes(profile.alpha, pv.delta, p)
    t_min = float(np.min(lives))
    if math.isinf(t_min):
        members = np.flatnonzero(np.isinf(lives))
    else:
        members = np.flatnonzero(lives <= (1.0 + p.f2f_tolerance) * t_min)
    return t_min, F2FSet(sites=frozenset(members.tolist()), tolerance=p.f2f_tolerance)
