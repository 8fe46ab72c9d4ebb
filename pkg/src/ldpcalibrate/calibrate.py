"""Posterior-mean calibration of noisy frequency estimates.

The aggregator's output is modelled as ``f_hat = f + s`` with ``s`` a
zero-mean Gaussian of known variance and ``f`` drawn from a prior family
fitted to the estimates themselves. Each estimate is replaced by the mean
of ``Pr(f = k | f_hat)``, which minimises the conditional squared error.

All sums over the true frequency ``k`` run over the integer prior support
intersected with a window of ``truncation_sigmas`` noise standard
deviations around the observation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, sparse

from .exceptions import DegeneratePosteriorError, FitError, InvalidParameterError
from .normal import ndtri
from .protocols import FrequencyTable, ProtocolSpec

__all__ = [
    "POWERLAW", "GAUSSIAN", "DISCRETE",
    "NoiseModel", "PriorModel", "Posterior", "PredictiveModel", "CalibrationConfig",
    "noise_model_for", "gaussian_pdf", "prior_pmf", "discrete_prior", "powerlaw_mean",
    "fit_mean_variance", "fit_mle", "fit_prior", "log_likelihood",
    "predictive_pmf", "posterior", "calibrate_one", "calibrate_all",
    "significance_threshold", "zero_below_threshold",
]

POWERLAW = "powerlaw"
GAUSSIAN = "gaussian"
DISCRETE = "discrete"


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian estimation noise, variance in squared user counts."""

    variance: float
    mean: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise InvalidParameterError(f"noise variance must be > 0, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class CalibrationConfig:
    truncation_sigmas: float = 8.0
    pmf_tolerance: float = 1e-9
    gd_step: float = 0.01
    gd_max_iters: int = 2000
    gd_grad_tolerance: float = 1e-6
    root_bracket: tuple = (0.0, 20.0)
    root_tolerance: float = 1e-8
    sigma2_floor_ratio: float = 1e-6

    def __post_init__(self):
        if not (self.truncation_sigmas > 0 and self.gd_step > 0 and self.gd_max_iters >= 1
                and self.gd_grad_tolerance > 0 and self.root_tolerance > 0):
            raise InvalidParameterError("calibration settings must be positive")
        lo, hi = self.root_bracket
        if not 0 <= lo < hi:
            raise InvalidParameterError(f"bad root bracket {self.root_bracket}")


DEFAULT_CONFIG = CalibrationConfig()


@dataclass
class PriorModel:
    """Distribution of true frequencies on the integer grid ``k_min..k_max``."""

    family: str
    params: dict
    k_min: int
    k_max: int
    pmf: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.k_min, self.k_max + 1)

    def mean(self) -> float:
        return float(np.dot(self.support, self.pmf))

    def variance(self) -> float:
        k = self.support
        m = self.mean()
        return float(np.dot((k - m) ** 2, self.pmf))


@dataclass
class Posterior:
    support: np.ndarray
    probs: np.ndarray
    mean: float
    evidence: float


@dataclass
class PredictiveModel:
    support: np.ndarray
    pmf: np.ndarray


def noise_model_for(spec: ProtocolSpec, n: int, l: int = 1) -> NoiseModel:
    """Noise of the aggregator: ``l^2 n q*(1-q*) / (p*-q*)^2``."""
    if n < 1 or l < 1:
        raise InvalidParameterError(f"need n >= 1 and l >= 1, got n={n}, l={l}")
    var = n * spec.q_star * (1 - spec.q_star) / (spec.p_star - spec.q_star) ** 2
    return NoiseModel(l * l * var)


def gaussian_pdf(x, model: NoiseModel):
    z = (np.asarray(x, dtype=float) - model.mean) ** 2 / (2.0 * model.variance)
    out = np.exp(-z) / math.sqrt(2.0 * math.pi * model.variance)
    return float(out) if np.ndim(out) == 0 else out


def _normalise_log(logw):
    """pmf from log-weights using compensated summation."""
    finite = np.isfinite(logw)
    if not finite.any():
        raise InvalidParameterError("prior has no mass on its support")
    w = np.exp(logw - logw[finite].max())
    return w / math.fsum(w)


def _check_support(family, support):
    k_min, k_max = (int(s) for s in support)
    if k_max < k_min:
        raise InvalidParameterError(f"empty support {support}")
    if family == POWERLAW and k_min < 1:
        raise InvalidParameterError("power-law support must start at k >= 1")
    if k_min < 0:
        raise InvalidParameterError("support must be non-negative")
    return k_min, k_max


def prior_pmf(family: str, params: dict, support) -> PriorModel:
    """Normalised prior over ``support = (k_min, k_max)``."""
    k_min, k_max = _check_support(family, support)
    k = np.arange(k_min, k_max + 1, dtype=float)
    if family == POWERLAW:
        alpha = float(params["alpha"])
        if not (math.isfinite(alpha) and alpha >= 0):
            raise InvalidParameterError(f"alpha must be >= 0, got {alpha}")
        pmf = _normalise_log(-alpha * np.log(k))
        params = {"alpha": alpha}
    elif family == GAUSSIAN:
        mu, sigma2 = float(params["mu"]), float(params["sigma2"])
        if not (math.isfinite(mu) and sigma2 > 0 and math.isfinite(sigma2)):
            raise InvalidParameterError(f"bad Gaussian parameters mu={mu}, sigma2={sigma2}")
        pmf = _normalise_log(-((k - mu) ** 2) / (2.0 * sigma2))
        params = {"mu": mu, "sigma2": sigma2}
    else:
        raise InvalidParameterError(f"unknown prior family {family!r}")
    return PriorModel(family, params, k_min, k_max, pmf)


def discrete_prior(k_min: int, probs) -> PriorModel:
    """Arbitrary prior given explicitly on ``k_min, k_min+1, ...``."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0 or (probs < 0).any() or probs.sum() <= 0:
        raise InvalidParameterError("probs must be a non-empty non-negative vector")
    k_min = int(k_min)
    if k_min < 0:
        raise InvalidParameterError("support must be non-negative")
    return PriorModel(DISCRETE, {}, k_min, k_min + probs.size - 1, probs / math.fsum(probs))


def powerlaw_mean(alpha: float, k_min: int, k_max: int) -> float:
    k = np.arange(k_min, k_max + 1, dtype=float)
    logk = np.log(k)
    w = np.exp(-alpha * (logk - logk[0]))
    return float(np.sum(k * w) / np.sum(w))


def _default_support(family, estimates: FrequencyTable, support):
    if support is not None:
        return support
    return (1 if family == POWERLAW else 0, max(int(estimates.n), 1))


def _moments(estimates: FrequencyTable):
    f = np.asarray(estimates.values, dtype=float)
    if f.size < 2:
        raise InvalidParameterError("fitting needs at least two estimates")
    m = float(np.mean(f))
    return m, float(np.mean((f - m) ** 2))


def fit_mean_variance(estimates: FrequencyTable, noise: NoiseModel, family: str,
                      config: CalibrationConfig = DEFAULT_CONFIG, support=None) -> PriorModel:
    """Match the sample mean (and variance) of the estimates to the prior's."""
    mean_hat, var_hat = _moments(estimates)
    support = _default_support(family, estimates, support)
    diagnostics = {"method": "mv", "sample_mean": mean_hat, "sample_variance": var_hat,
                   "warnings": []}
    if family == GAUSSIAN:
        sigma2 = var_hat - noise.variance
        floor = config.sigma2_floor_ratio * noise.variance
        if sigma2 <= floor:
            msg = (f"sample variance {var_hat:.6g} does not exceed noise variance "
                   f"{noise.variance:.6g}; prior variance floored at {floor:.6g}")
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            diagnostics["warnings"].append(msg)
            sigma2 = floor
        prior = prior_pmf(GAUSSIAN, {"mu": mean_hat - noise.mean, "sigma2": sigma2}, support)
    elif family == POWERLAW:
        k_min, k_max = _check_support(POWERLAW, support)
        target = mean_hat - noise.mean
        lo, hi = config.root_bracket
        m_lo, m_hi = powerlaw_mean(lo, k_min, k_max), powerlaw_mean(hi, k_min, k_max)
        slack = 1e-12 * max(1.0, abs(target))
        if not m_hi - slack <= target <= m_lo + slack:
            raise FitError(f"target mean {target:.6g} outside the power-law range "
                           f"[{m_hi:.6g}, {m_lo:.6g}] for alpha in [{lo}, {hi}]")
        iters = 0
        while hi - lo > config.root_tolerance:
            mid = 0.5 * (lo + hi)
            if powerlaw_mean(mid, k_min, k_max) > target:
                lo = mid
            else:
                hi = mid
            iters += 1
        alpha = 0.5 * (lo + hi)
        diagnostics.update(iterations=iters,
                           residual=powerlaw_mean(alpha, k_min, k_max) - target)
        prior = prior_pmf(POWERLAW, {"alpha": alpha}, (k_min, k_max))
    else:
        raise InvalidParameterError(f"unknown prior family {family!r}")
    prior.diagnostics = diagnostics
    return prior


def _likelihood_matrix(f_hat, noise: NoiseModel, k_min, k_max, config):
    """Sparse ``p_s(f_hat_i - k)`` over each item's window (columns are ``k - k_min``)."""
    f_hat = np.asarray(f_hat, dtype=float)
    half = config.truncation_sigmas * noise.std
    lo = np.maximum(np.ceil(f_hat - half), k_min).astype(np.int64)
    hi = np.minimum(np.floor(f_hat + half), k_max).astype(np.int64)
    lengths = np.maximum(hi - lo + 1, 0)
    if (lengths == 0).any():
        bad = int(np.flatnonzero(lengths == 0)[0])
        raise FitError(f"item {bad + 1} (estimate {f_hat[bad]:.6g}) has no prior support "
                       "inside its truncation window")
    indptr = np.concatenate([[0], np.cumsum(lengths)])
    rows = np.repeat(np.arange(len(f_hat)), lengths)
    cols = np.arange(indptr[-1]) - np.repeat(indptr[:-1], lengths) + np.repeat(lo, lengths)
    vals = gaussian_pdf(f_hat[rows] - cols, noise)
    return sparse.csr_matrix((vals, cols - k_min, indptr), shape=(len(f_hat), k_max - k_min + 1))


class _Family:
    """Unconstrained parametrisation used by gradient ascent."""

    def __init__(self, family, k_min, k_max, scale=1.0, bounds=None):
        self.family = family
        self.k = np.arange(k_min, k_max + 1, dtype=float)
        self.k_min, self.k_max = k_min, k_max
        self.scale = scale
        self.bounds = bounds
        if family == POWERLAW:
            self.logk = np.log(self.k)

    def to_theta(self, params):
        if self.family == POWERLAW:
            return np.array([params["alpha"]])
        return np.array([params["mu"] / self.scale, 0.5 * math.log(params["sigma2"])])

    def to_params(self, theta):
        if self.family == POWERLAW:
            return {"alpha": float(theta[0])}
        return {"mu": float(theta[0] * self.scale), "sigma2": float(math.exp(2 * theta[1]))}

    def project(self, theta):
        if self.family == POWERLAW and self.bounds is not None:
            return np.clip(theta, *self.bounds)
        return theta

    def log_weights(self, theta):
        if self.family == POWERLAW:
            return -theta[0] * self.logk
        mu, sigma = theta[0] * self.scale, math.exp(theta[1])
        return -((self.k - mu) ** 2) / (2 * sigma * sigma)

    def stats(self, theta):
        """Derivatives of the unnormalised log-weights, one row per parameter."""
        if self.family == POWERLAW:
            return [-self.logk]
        mu, sigma = theta[0] * self.scale, math.exp(theta[1])
        r = (self.k - mu) / sigma
        return [r * self.scale / sigma, r * r]


def _objective(fam, phi, theta, with_grad=True):
    logw = fam.log_weights(theta)
    if not np.isfinite(logw).any():
        return -math.inf, None
    w = np.exp(logw - logw[np.isfinite(logw)].max())
    pmf = w / np.sum(w)
    lik = phi @ pmf
    with np.errstate(divide="ignore"):
        obj = float(np.sum(np.log(lik)))
    if not with_grad or not math.isfinite(obj):
        return obj, None
    grad = np.empty(len(theta))
    d = phi.shape[0]
    for j, t in enumerate(fam.stats(theta)):
        post = (phi @ (pmf * t)) / lik
        grad[j] = np.sum(post) - d * np.dot(pmf, t)
    return obj, grad


def log_likelihood(estimates: FrequencyTable, prior: PriorModel, noise: NoiseModel,
                   config: CalibrationConfig = DEFAULT_CONFIG) -> float:
    """``sum_i log sum_k p_f(k) p_s(f_hat_i - k)`` over the truncated windows."""
    phi = _likelihood_matrix(estimates.values, noise, prior.k_min, prior.k_max, config)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(phi @ prior.pmf)))


def fit_mle(estimates: FrequencyTable, noise: NoiseModel, family: str,
            config: CalibrationConfig = DEFAULT_CONFIG, support=None, init: dict | None = None) -> PriorModel:
    """Maximum-likelihood prior parameters by gradient ascent with backtracking.

    The ascent runs on the per-item average log-likelihood, which has the
    same maximiser as the summed objective but a gradient whose scale does
    not grow with ``d``. The step doubles after an accepted move and halves
    until the objective does not decrease.
    """
    support = _default_support(family, estimates, support)
    k_min, k_max = _check_support(family, support)
    f_hat = np.asarray(estimates.values, dtype=float)
    mean_hat, var_hat = _moments(estimates)
    if init is None:
        try:
            init = fit_mean_variance(estimates, noise, family, config, (k_min, k_max)).params
        except FitError:
            if family == POWERLAW:
                init = {"alpha": 2.0}
            else:
                init = {"mu": mean_hat, "sigma2": max(var_hat - noise.variance,
                                                      config.sigma2_floor_ratio * noise.variance)}
    fam = _Family(family, k_min, k_max, scale=math.sqrt(max(var_hat, noise.variance, 1.0)),
                  bounds=config.root_bracket)
    phi = _likelihood_matrix(f_hat, noise, k_min, k_max, config)
    d = len(f_hat)

    theta = fam.project(fam.to_theta(init))
    obj, grad = _objective(fam, phi, theta)
    if not math.isfinite(obj):
        raise FitError(f"log-likelihood is not finite at the initial parameters {init}")
    trace = [obj]
    step = config.gd_step
    converged = False
    iters = 0
    for iters in range(1, config.gd_max_iters + 1):
        g = grad / d
        if np.linalg.norm(g) < config.gd_grad_tolerance:
            converged = True
            break
        accepted = False
        while step > 1e-14:
            cand = fam.project(theta + step * g)
            if np.array_equal(cand, theta):
                break
            cand_obj, cand_grad = _objective(fam, phi, cand)
            if math.isfinite(cand_obj) and cand_obj >= obj:
                theta, obj, grad = cand, cand_obj, cand_grad
                accepted = True
                step *= 2.0
                break
            step *= 0.5
        if not accepted:
            # no ascent direction left at floating-point resolution, or pinned at a bound
            converged = True
            break
        trace.append(obj)
    prior = prior_pmf(family, fam.to_params(theta), (k_min, k_max))
    prior.diagnostics = {"method": "mle", "iterations": iters, "converged": converged,
                         "objective": obj, "objective_trace": trace,
                         "gradient_norm": float(np.linalg.norm(grad / d)),
                         "init": dict(init), "warnings": []}
    if not converged:
        msg = f"gradient ascent stopped after {config.gd_max_iters} iterations without converging"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        prior.diagnostics["warnings"].append(msg)
    return prior


def fit_prior(estimates: FrequencyTable, noise: NoiseModel, family: str, method: str = "mv",
              config: CalibrationConfig = DEFAULT_CONFIG, support=None) -> PriorModel:
    if method == "mv":
        return fit_mean_variance(estimates, noise, family, config, support)
    if method == "mle":
        return fit_mle(estimates, noise, family, config, support)
    raise InvalidParameterError(f"unknown fit method {method!r}")


def _log_pmf(prior: PriorModel):
    with np.errstate(divide="ignore"):
        return np.log(prior.pmf)


def predictive_pmf(prior: PriorModel, noise: NoiseModel,
                   config: CalibrationConfig = DEFAULT_CONFIG) -> PredictiveModel:
    """Distribution of the estimate: prior convolved with the truncated noise."""
    half = int(math.floor(config.truncation_sigmas * noise.std))
    kernel = gaussian_pdf(np.arange(-half, half + 1), noise)
    if prior.pmf.size * kernel.size > 1_000_000:
        pmf = np.clip(signal.fftconvolve(prior.pmf, kernel), 0.0, None)
    else:
        pmf = np.convolve(prior.pmf, kernel)
    grid = np.arange(prior.k_min - half, prior.k_max + half + 1)
    return PredictiveModel(grid, pmf / math.fsum(pmf))


def _window(f_hat, prior, noise, config):
    half = config.truncation_sigmas * noise.std
    lo = max(math.ceil(f_hat - half), prior.k_min)
    hi = min(math.floor(f_hat + half), prior.k_max)
    return lo, hi


def posterior(f_hat_i: float, prior: PriorModel, noise: NoiseModel,
              config: CalibrationConfig = DEFAULT_CONFIG) -> Posterior:
    """``Pr(f = k | f_hat)`` on the prior support inside the truncation window."""
    f_hat_i = float(f_hat_i)
    lo, hi = _window(f_hat_i, prior, noise, config)
    if hi < lo:
        raise DegeneratePosteriorError(f_hat_i)
    k = np.arange(lo, hi + 1)
    pmf = prior.pmf[lo - prior.k_min:hi - prior.k_min + 1]
    weights = gaussian_pdf(f_hat_i - k, noise) * pmf
    logw = -((f_hat_i - k) ** 2) / (2 * noise.variance) + _log_pmf(prior)[lo - prior.k_min:hi - prior.k_min + 1]
    finite = np.isfinite(logw)
    if not finite.any():
        raise DegeneratePosteriorError(f_hat_i)
    w = np.exp(logw - logw[finite].max())
    probs = w / math.fsum(w)
    keep = probs > 0
    k, probs = k[keep], probs[keep]
    return Posterior(k, probs, float(np.dot(k, probs)), float(math.fsum(weights)))


def calibrate_one(f_hat_i: float, prior: PriorModel, noise: NoiseModel,
                  config: CalibrationConfig = DEFAULT_CONFIG) -> float:
    return posterior(f_hat_i, prior, noise, config).mean


def calibrate_all(estimates: FrequencyTable, prior: PriorModel, noise: NoiseModel,
                  config: CalibrationConfig = DEFAULT_CONFIG, chunk_elements: int = 4_000_000) -> FrequencyTable:
    """Posterior mean for every item, vectorised in chunks of items."""
    if estimates.label != "estimated":
        raise InvalidParameterError(f"expected an estimated table, got label {estimates.label!r}")
    f_hat = np.asarray(estimates.values, dtype=float)
    half = config.truncation_sigmas * noise.std
    width = int(math.floor(2 * half)) + 2
    logpmf = _log_pmf(prior)
    out = np.empty_like(f_hat)
    rows = max(1, chunk_elements // width)
    offsets = np.arange(width)
    for start in range(0, len(f_hat), rows):
        fh = f_hat[start:start + rows]
        lo = np.maximum(np.ceil(fh - half), prior.k_min).astype(np.int64)
        hi = np.minimum(np.floor(fh + half), prior.k_max).astype(np.int64)
        k = lo[:, None] + offsets[None, :]
        valid = k <= hi[:, None]
        idx = np.clip(k - prior.k_min, 0, prior.pmf.size - 1)
        logw = np.where(valid, -((fh[:, None] - k) ** 2) / (2 * noise.variance) + logpmf[idx], -np.inf)
        top = logw.max(axis=1)
        bad = ~np.isfinite(top)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DegeneratePosteriorError(
                fh[i], f"item {start + i + 1}: posterior is degenerate at f_hat={fh[i]!r}")
        w = np.exp(logw - top[:, None])
        out[start:start + len(fh)] = np.sum(w * k, axis=1) / np.sum(w, axis=1)
    return FrequencyTable(out, estimates.n, "calibrated")


def significance_threshold(d: int, beta: float, variance: float) -> float:
    """``Phi^-1(1 - beta/d) * sqrt(variance)``."""
    if d < 1 or not 0 < beta < 1 or not variance > 0:
        raise InvalidParameterError(f"bad arguments d={d}, beta={beta}, variance={variance}")
    tail = beta / d
    if tail >= 1:
        raise InvalidParameterError(f"beta/d must be < 1, got {tail}")
    # upper quantile via symmetry keeps precision when beta/d is tiny
    return -ndtri(tail) * math.sqrt(variance)


def zero_below_threshold(estimates: FrequencyTable, threshold: float) -> FrequencyTable:
    values = np.where(estimates.values < threshold, 0.0, estimates.values)
    return FrequencyTable(values, estimates.n, estimates.label)
