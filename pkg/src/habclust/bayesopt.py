"""Gaussian-process surrogate search over the two pipeline hyper-parameters
(quantile threshold gamma, cluster count eta).

Each iteration evaluates two candidates: the expected-improvement argmax
and the current posterior-mean minimizer, so the design grows by two per
step. Inputs live on the unit square (eta relaxed to a continuous axis and
rounded at evaluation time); outputs are standardized inside the GP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import qmc

LENGTHSCALE_GRID = (0.05, 0.1, 0.2, 0.4, 0.8, 1.6)
NOISE_GRID = (1e-6, 1e-4, 1e-2)
BASE_JITTER = 1e-8


@dataclass(frozen=True)
class HyperParams:
    gamma: float
    eta: int

    def validate(self, bounds: "Bounds") -> None:
        if not (bounds.gamma_lo <= self.gamma <= bounds.gamma_hi):
            raise ValueError(f"gamma {self.gamma} outside {bounds.gamma_lo}..{bounds.gamma_hi}")
        if not (bounds.eta_min <= self.eta <= bounds.eta_max):
            raise ValueError(f"eta {self.eta} outside {bounds.eta_min}..{bounds.eta_max}")


@dataclass(frozen=True)
class Bounds:
    gamma_lo: float = 0.0
    gamma_hi: float = 1.0
    eta_min: int = 3
    eta_max: int = 7

    def scale(self, theta: HyperParams) -> np.ndarray:
        span_e = max(self.eta_max - self.eta_min, 1)
        return np.array(
            [
                (theta.gamma - self.gamma_lo) / (self.gamma_hi - self.gamma_lo),
                (theta.eta - self.eta_min) / span_e,
            ]
        )

    def unscale(self, x: np.ndarray) -> HyperParams:
        gamma = self.gamma_lo + float(x[0]) * (self.gamma_hi - self.gamma_lo)
        eta_real = self.eta_min + float(x[1]) * max(self.eta_max - self.eta_min, 1)
        eta = int(np.floor(eta_real + 0.5))
        eta = min(max(eta, self.eta_min), self.eta_max)
        gamma = min(max(gamma, self.gamma_lo), self.gamma_hi)
        return HyperParams(gamma=gamma, eta=eta)


# ---------------------------------------------------------------------------
# GP surrogate
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class GpModel:
    inputs: np.ndarray  # (J, 2) unit-square scaled
    outputs: np.ndarray  # (J,) standardized
    y_mean: float
    y_std: float
    lengthscale: float
    noise_var: float
    signal_var: float
    chol: np.ndarray
    alpha: np.ndarray


def _kernel(xa: np.ndarray, xb: np.ndarray, lengthscale: float, signal_var: float) -> np.ndarray:
    d2 = ((xa[:, None, :] - xb[None, :, :]) ** 2).sum(axis=2)
    return signal_var * np.exp(-d2 / (2.0 * lengthscale**2))


def _try_cholesky(k: np.ndarray) -> np.ndarray:
    jitter = BASE_JITTER
    while jitter <= 1e-2:
        try:
            return np.linalg.cholesky(k + jitter * np.eye(k.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 100.0
    raise np.linalg.LinAlgError("kernel factorization failed despite jitter escalation")


def _log_marginal(y: np.ndarray, chol: np.ndarray, alpha: np.ndarray) -> float:
    return float(
        -0.5 * y @ alpha - np.log(np.diag(chol)).sum() - 0.5 * y.shape[0] * math.log(2 * math.pi)
    )


def gp_fit(points: list[tuple[np.ndarray, float]], lengthscale: float | None = None,
           noise_var: float | None = None) -> GpModel:
    """Fit the surrogate; kernel hyper-parameters come from a fixed-grid
    marginal-likelihood search unless pinned explicitly."""
    if not points:
        raise ValueError("need at least one observation")
    x = np.asarray([p[0] for p in points], dtype=np.float64).reshape(len(points), -1)
    y_raw = np.asarray([p[1] for p in points], dtype=np.float64)
    if not np.all(np.isfinite(y_raw)):
        raise ValueError("non-finite loss observations")
    y_mean = float(y_raw.mean())
    y_std = float(y_raw.std())
    if y_std == 0.0:
        y_std = 1.0
    y = (y_raw - y_mean) / y_std

    ls_grid = LENGTHSCALE_GRID if lengthscale is None else (lengthscale,)
    nv_grid = NOISE_GRID if noise_var is None else (noise_var,)
    best = None
    for ls in ls_grid:
        k_base = _kernel(x, x, ls, 1.0)
        for nv in nv_grid:
            chol = _try_cholesky(k_base + nv * np.eye(x.shape[0]))
            alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
            lml = _log_marginal(y, chol, alpha)
            if best is None or lml > best[0]:
                best = (lml, ls, nv, chol, alpha)
    _, ls, nv, chol, alpha = best
    return GpModel(
        inputs=x, outputs=y, y_mean=y_mean, y_std=y_std,
        lengthscale=ls, noise_var=nv, signal_var=1.0, chol=chol, alpha=alpha,
    )


def gp_posterior(model: GpModel, theta_scaled) -> tuple[float, float]:
    """Posterior mean and stddev of the latent loss surface, in loss units."""
    mu, sigma = gp_posterior_batch(model, np.atleast_2d(np.asarray(theta_scaled, dtype=np.float64)))
    return float(mu[0]), float(sigma[0])


def gp_posterior_batch(model: GpModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k_star = _kernel(x, model.inputs, model.lengthscale, model.signal_var)
    mu_std = k_star @ model.alpha
    v = np.linalg.solve(model.chol, k_star.T)
    var_std = np.maximum(model.signal_var - (v * v).sum(axis=0), 0.0)
    return model.y_mean + model.y_std * mu_std, model.y_std * np.sqrt(var_std)


def expected_improvement(model: GpModel, theta_scaled, f_best: float) -> float:
    mu, sigma = gp_posterior(model, theta_scaled)
    return float(_ei_values(np.array([mu]), np.array([sigma]), f_best)[0])


def _ei_values(mu: np.ndarray, sigma: np.ndarray, f_best: float) -> np.ndarray:
    improve = f_best - mu
    out = np.maximum(improve, 0.0)
    positive = sigma > 0.0
    if positive.any():
        z = improve[positive] / sigma[positive]
        phi = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        out[positive] = improve[positive] * ndtr(z) + sigma[positive] * phi
    return out


# ---------------------------------------------------------------------------
# candidate proposals
# ---------------------------------------------------------------------------


def _candidate_set(bounds: Bounds, n_candidates: int, seed: int) -> np.ndarray:
    """Scrambled low-discrepancy points plus a gamma grid at every integer
    eta, all on the unit square."""
    sampler = qmc.Halton(d=2, scramble=True, seed=seed)
    quasi = sampler.random(n_candidates)
    span_e = max(bounds.eta_max - bounds.eta_min, 1)
    gammas = np.linspace(0.0, 1.0, 41)
    lattice = []
    for eta in range(bounds.eta_min, bounds.eta_max + 1):
        e_scaled = (eta - bounds.eta_min) / span_e
        lattice.append(np.column_stack([gammas, np.full_like(gammas, e_scaled)]))
    return np.vstack([quasi] + lattice)


def propose_ei(model: GpModel, bounds: Bounds, f_best: float, n_candidates: int = 2000,
               seed: int = 0) -> HyperParams:
    """Candidate with maximal expected improvement (lowest index on ties)."""
    cands = _candidate_set(bounds, n_candidates, seed)
    mu, sigma = gp_posterior_batch(model, cands)
    scores = _ei_values(mu, sigma, f_best)
    return bounds.unscale(cands[int(scores.argmax())])


def propose_surrogate_optimum(model: GpModel, bounds: Bounds, n_candidates: int = 2000,
                              seed: int = 0) -> HyperParams:
    """Candidate minimizing the posterior mean (lowest index on ties)."""
    cands = _candidate_set(bounds, n_candidates, seed)
    mu, _ = gp_posterior_batch(model, cands)
    return bounds.unscale(cands[int(mu.argmin())])


# ---------------------------------------------------------------------------
# optimization loop
# ---------------------------------------------------------------------------


@dataclass
class BoStep:
    index: int
    kind: str  # initial | ei_candidate | surrogate_optimum
    theta: HyperParams
    L_s: float
    L_p: float  # oriented p-value loss, the quantity inside L
    L: float
    ok: bool = True
    L_p_raw: float | None = None
    p_value: float | None = None


@dataclass
class BoTrace:
    steps: list[BoStep] = field(default_factory=list)
    best_so_far: list[float] = field(default_factory=list)

    @property
    def theta_star(self) -> HyperParams:
        best = min(range(len(self.steps)), key=lambda i: self.steps[i].L)
        return self.steps[best].theta

    @property
    def best_loss(self) -> float:
        return min(step.L for step in self.steps)

    def record(self, step: BoStep) -> None:
        self.steps.append(step)
        best = step.L if not self.best_so_far else min(self.best_so_far[-1], step.L)
        self.best_so_far.append(best)

    def to_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("step,kind,gamma,eta,L_s,L_p,L,best\n")
            for step, best in zip(self.steps, self.best_so_far):
                fh.write(
                    "%d,%s,%s,%d,%s,%s,%s,%s\n"
                    % (
                        step.index,
                        step.kind,
                        "%.17g" % step.theta.gamma,
                        step.theta.eta,
                        "%.17g" % step.L_s,
                        "%.17g" % step.L_p,
                        "%.17g" % step.L,
                        "%.17g" % best,
                    )
                )


def _normalize_result(result) -> tuple[float, float, float, float | None, float | None]:
    if isinstance(result, tuple):
        l_s, l_p, l_joint = result
        return float(l_s), float(l_p), float(l_joint), None, None
    return (
        float(result.L_s),
        float(result.L_p_oriented),
        float(result.L),
        float(result.L_p_raw),
        float(result.p_value),
    )


def bo_run(objective, bounds: Bounds, n_initial: int = 10, max_steps: int = 10,
           convergence: tuple[float, int] = (1e-3, 5), seed: int = 0,
           n_candidates: int = 2000, penalty_loss: float = 2.0) -> BoTrace:
    """Initial quasi-random design, then per iteration one EI candidate and
    one posterior-mean optimum, until the best loss stalls or max_steps
    iterations pass. Objective failures score penalty_loss and never crash
    the loop."""
    if n_initial < 2:
        raise ValueError("need at least 2 initial evaluations")
    epsilon, patience = convergence
    seeds = np.random.SeedSequence(seed).generate_state(1 + 2 * max(max_steps, 1))
    trace = BoTrace()
    evaluated: set[tuple[float, int]] = set()

    def run_point(theta: HyperParams, kind: str) -> None:
        idx = len(trace.steps)
        try:
            l_s, l_p, l_joint, l_raw, p_val = _normalize_result(objective(theta))
            if not math.isfinite(l_joint):
                raise ValueError("objective returned non-finite loss")
            trace.record(BoStep(idx, kind, theta, l_s, l_p, l_joint, True, l_raw, p_val))
        except Exception:
            trace.record(
                BoStep(idx, kind, theta, math.nan, math.nan, penalty_loss, False)
            )
        evaluated.add((theta.gamma, theta.eta))

    def dedup(theta: HyperParams) -> HyperParams:
        if (theta.gamma, theta.eta) not in evaluated:
            return theta
        etas = sorted(
            range(bounds.eta_min, bounds.eta_max + 1),
            key=lambda e: (abs(e - theta.eta), e),
        )
        for eta in etas:
            if (theta.gamma, eta) not in evaluated:
                return HyperParams(theta.gamma, eta)
        gamma = theta.gamma
        width = bounds.gamma_hi - bounds.gamma_lo
        for _ in range(100):
            gamma = bounds.gamma_lo + (gamma - bounds.gamma_lo + 1e-6 * width) % width
            if (gamma, theta.eta) not in evaluated:
                return HyperParams(gamma, theta.eta)
        return theta

    design = qmc.Halton(d=2, scramble=True, seed=int(seeds[0])).random(n_initial)
    for row in design:
        run_point(dedup(bounds.unscale(row)), "initial")

    best_prev = trace.best_so_far[-1]
    streak = 0
    for iteration in range(max_steps):
        observations = [(bounds.scale(s.theta), s.L) for s in trace.steps]
        model = gp_fit(observations)
        theta_ei = dedup(
            propose_ei(model, bounds, trace.best_so_far[-1], n_candidates, int(seeds[1 + 2 * iteration]))
        )
        run_point(theta_ei, "ei_candidate")

        observations = [(bounds.scale(s.theta), s.L) for s in trace.steps]
        model = gp_fit(observations)
        theta_so = dedup(
            propose_surrogate_optimum(model, bounds, n_candidates, int(seeds[2 + 2 * iteration]))
        )
        run_point(theta_so, "surrogate_optimum")

        best_now = trace.best_so_far[-1]
        streak = streak + 1 if best_prev - best_now < epsilon else 0
        best_prev = best_now
        if streak >= patience:
            break
    return trace
