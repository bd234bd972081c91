"""Greedy information-gain acquisition policies.

Two adaptive policies score next-frame line sets from an ensemble of
decoded posterior draws:

  * covariance: argmax over an explicit candidate list of the predicted
    observation covariance log-determinant log det(A S A^T + c I). The
    covariance over the M = n_r * l selected pixels has rank at most n_s,
    so the score is evaluated through the matching n_s x n_s determinant
    (per-line Gram blocks, summed per candidate) instead of an M x M
    factorization.
  * trace: the trace of the same covariance splits into independent
    per-line variance masses plus a constant noise term, so the argmax is
    a max-sum line subset under a neighbor-exclusion gap, solved exactly
    by dynamic programming.

Three content-blind baselines (equispaced, uniform, variable density) share
the same interface so the experiment harness can swap them in.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericalError, RejectedInputError
from .masks import (NoiseModel, ScanLineMask, equispaced_mask,
                    uniform_random_mask, variable_density_mask)

POLICY_NAMES = ("equispaced", "uniform", "variable_density",
                "covariance", "trace")


@dataclass(frozen=True)
class PosteriorEnsemble:
    """A small set of decoded posterior draws plus their pixelwise mean.

    samples: (n_s, n_r, n_gamma) float64
    mean:    (n_r, n_gamma) float64, consistent with samples to 1e-9
    """

    samples: np.ndarray
    mean: np.ndarray
    n_s: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        mean = np.asarray(self.mean, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "mean", mean)
        if samples.ndim != 3:
            raise RejectedInputError(
                f"ensemble samples must be (n_s, n_r, n_gamma), got "
                f"{samples.shape}")
        if self.n_s != samples.shape[0] or self.n_s < 1:
            raise RejectedInputError(
                f"n_s={self.n_s} does not match {samples.shape[0]} samples")
        if mean.shape != samples.shape[1:]:
            raise RejectedInputError("ensemble mean has the wrong shape")
        if not np.all(np.isfinite(samples)):
            raise RejectedInputError("ensemble contains non-finite values")
        if np.max(np.abs(samples.mean(axis=0) - mean)) > 1e-9:
            raise RejectedInputError(
                "ensemble mean is inconsistent with its samples")

    @classmethod
    def from_samples(cls, samples):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 3:
            raise RejectedInputError(
                f"ensemble samples must be (n_s, n_r, n_gamma), got "
                f"{samples.shape}")
        return cls(samples=samples, mean=samples.mean(axis=0),
                   n_s=samples.shape[0])

    @property
    def n_gamma(self):
        return self.samples.shape[2]

    def deviations(self):
        return self.samples - self.mean[None, :, :]


@dataclass(frozen=True)
class PolicyDecision:
    """One acquisition choice: the chosen mask, its objective value, which
    policy made it, and how many candidates were scored to get there (0 for
    policies that do not enumerate candidates)."""

    mask: ScanLineMask
    score: float
    policy_name: str
    candidates_examined: int

    def __post_init__(self):
        if not self.policy_name:
            raise RejectedInputError("policy_name must be non-empty")
        if self.candidates_examined < 0:
            raise RejectedInputError("candidates_examined must be >= 0")
        if not np.isfinite(self.score):
            raise RejectedInputError(
                f"decision score must be finite, got {self.score}")


def draw_ensemble(enc_out, model, n_s, rng):
    """Decode n_s reparameterized posterior draws into a PosteriorEnsemble.

    enc_out is the PosteriorParams of a single observation; eps noise comes
    from the supplied Generator so the draw is replayable.
    """
    if n_s < 1:
        raise RejectedInputError("ensemble size must be >= 1")
    samples = model.sample_posterior(enc_out, rng, n_s)
    return PosteriorEnsemble.from_samples(samples)


def line_variance_scores(ens):
    """Per-line predictive variance mass, excluding observation noise.

    score[j] = (1/n_s) * sum_{s, r} (samples[s, r, j] - mean[r, j])^2

    The trace of the predicted observation covariance over a line set A is
    then sum_{j in A} score[j] + |A| * n_r * noise_var.
    """
    dev = ens.deviations()
    return np.einsum("srj,srj->j", dev, dev) / ens.n_s


def empirical_observation_covariance(ens, mask, noise):
    """Dense predicted covariance of the masked observation.

    Stacks the masked pixels of each draw into M = n_r * len(mask) rows and
    returns (1/n_s) D D^T + noise.std^2 * I. This is the reference route;
    the covariance policy scores candidates through the equivalent
    low-rank determinant instead.
    """
    if mask.n_gamma != ens.n_gamma:
        raise RejectedInputError(
            f"mask over {mask.n_gamma} lines does not match ensemble "
            f"({ens.n_gamma})")
    dev = ens.deviations()[:, :, list(mask.lines)]
    d = dev.reshape(ens.n_s, -1)
    cov = d.T @ d / ens.n_s
    cov[np.diag_indices_from(cov)] += noise.std ** 2
    return cov


def logdet_psd(mat, jitter=1e-6):
    """log det of a symmetric PSD matrix, Cholesky-based.

    Adds jitter * I before factorizing. If the factorization fails and
    jitter is positive, the jitter is escalated a few times; with zero
    jitter a singular-but-PSD matrix yields -inf through an eigenvalue
    fallback. Asymmetric input is rejected; indefinite or non-finite input
    raises a numerical error.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise RejectedInputError(f"expected a square matrix, got {mat.shape}")
    if jitter < 0:
        raise RejectedInputError("jitter must be >= 0")
    if not np.all(np.isfinite(mat)):
        raise NumericalError("covariance contains non-finite values")
    asym = np.max(np.abs(mat - mat.T)) if mat.size else 0.0
    if asym > 1e-8:
        raise RejectedInputError(
            f"matrix is not symmetric (max |S - S^T| = {asym:.3e})")
    mat = 0.5 * (mat + mat.T)
    n = mat.shape[0]
    eye = np.eye(n)
    scales = [jitter, 10 * jitter, 100 * jitter, 1000 * jitter] if jitter > 0 \
        else [0.0]
    for s in scales:
        try:
            chol = np.linalg.cholesky(mat + s * eye)
            return float(2.0 * np.sum(np.log(np.diag(chol))))
        except np.linalg.LinAlgError:
            continue
    # Cholesky refused even with escalated jitter: decide between a
    # singular PSD matrix (-inf is the honest answer) and an indefinite one.
    eigs = np.linalg.eigvalsh(mat + scales[-1] * eye)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(eigs))))
    if eigs[0] < -tol:
        raise NumericalError(
            "matrix is not positive semidefinite",
            diagnostics={"min_eigenvalue": float(eigs[0])})
    if np.any(eigs <= tol):
        return float("-inf")
    return float(np.sum(np.log(eigs)))


def generate_candidates(rng, n_gamma, n_lines, count=10000):
    """Independent uniform-random candidate masks (duplicates allowed)."""
    if count < 1:
        raise RejectedInputError("candidate count must be >= 1")
    return [uniform_random_mask(rng, n_gamma, n_lines) for _ in range(count)]


def covariance_policy(ens, candidates, noise, rng=None, jitter=1e-6):
    """Pick the candidate mask maximizing the predicted observation
    covariance log-determinant; ties go to the first occurrence in
    candidate order.

    rng is accepted for interface symmetry with the stochastic baselines
    and is not consumed. The objective is finite only when
    noise.std^2 + jitter > 0 (otherwise the rank-deficient ensemble
    covariance is singular); an all -inf scoreboard raises.
    """
    if len(candidates) == 0:
        raise RejectedInputError("candidate list must not be empty")
    n_lines = len(candidates[0])
    for cand in candidates:
        if cand.n_gamma != ens.n_gamma:
            raise RejectedInputError(
                "candidate mask grid does not match the ensemble")
        if len(cand) != n_lines:
            raise RejectedInputError(
                "candidate masks must share one cardinality; log-dets over "
                "different dimensions are not comparable")
    scale = noise.std ** 2 + jitter
    if scale > 0:
        dev = ens.deviations()
        gram = kernels.line_gram(dev)
        cand_idx = np.stack([c.as_array() for c in candidates])
        n_r = ens.samples.shape[1]
        scores = kernels.candidate_gram_logdet(gram, cand_idx, scale, n_r)
    else:
        scores = np.array([
            logdet_psd(empirical_observation_covariance(ens, c, noise), 0.0)
            for c in candidates])
    best = int(np.argmax(scores))
    if not np.isfinite(scores[best]):
        raise NumericalError(
            "all candidate log-determinants are -inf; the objective needs "
            "noise_std or jitter > 0",
            diagnostics={"noise_std": noise.std, "jitter": jitter})
    return PolicyDecision(mask=candidates[best], score=float(scores[best]),
                          policy_name="covariance",
                          candidates_examined=len(candidates))


def trace_policy(scores, n_gamma, n_lines, exclusion_radius=1):
    """Pick the line set maximizing the summed variance scores subject to
    pairwise index gaps greater than exclusion_radius.

    Solved exactly (suffix dynamic program); among ties the
    lexicographically smallest set wins. Infeasible budgets are rejected
    up front: n_lines lines with gap > r need at least
    (n_lines - 1) * (r + 1) + 1 grid lines.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.shape[0] != n_gamma:
        raise RejectedInputError(
            f"scores must be a length-{n_gamma} vector, got {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise RejectedInputError("line scores must be finite")
    if exclusion_radius < 0:
        raise RejectedInputError("exclusion_radius must be >= 0")
    if n_lines < 1:
        raise RejectedInputError("line budget must be >= 1")
    need = (n_lines - 1) * (exclusion_radius + 1) + 1
    if need > n_gamma:
        raise RejectedInputError(
            f"cannot place {n_lines} lines with gap > {exclusion_radius} "
            f"on {n_gamma} lines")
    idx = kernels.select_max_sum_with_exclusion(scores, n_lines,
                                                exclusion_radius)
    if idx[0] < 0:
        raise RejectedInputError("line selection is infeasible")
    mask = ScanLineMask(tuple(int(i) for i in idx), n_gamma)
    return PolicyDecision(mask=mask, score=float(scores[idx].sum()),
                          policy_name="trace", candidates_examined=0)


@dataclass(frozen=True)
class PolicyConfig:
    """Knobs shared by the acquisition policies.

    n_lines: per-frame line budget.
    n_posterior_samples: ensemble size N_s for the adaptive policies.
    n_candidates: candidate draws per step for the covariance policy.
    noise_std: observation noise feeding the covariance objective.
    jitter: numerical floor added inside the log-det.
    exclusion_radius: neighbor gap for the trace policy.
    density_decay: falloff exponent of the variable-density baseline.
    """

    n_lines: int = 6
    n_posterior_samples: int = 3
    n_candidates: int = 10000
    noise_std: float = 0.02
    jitter: float = 1e-6
    exclusion_radius: int = 1
    density_decay: float = 6.0

    def __post_init__(self):
        if self.n_lines < 1:
            raise RejectedInputError("n_lines must be >= 1")
        if self.n_posterior_samples < 1:
            raise RejectedInputError("n_posterior_samples must be >= 1")
        if self.n_candidates < 1:
            raise RejectedInputError("n_candidates must be >= 1")
        if self.noise_std < 0:
            raise RejectedInputError("noise_std must be >= 0")
        if self.jitter < 0:
            raise RejectedInputError("jitter must be >= 0")
        if self.exclusion_radius < 0:
            raise RejectedInputError("exclusion_radius must be >= 0")
        if self.density_decay < 0:
            raise RejectedInputError("density_decay must be >= 0")


class Policy:
    """select(t, rng, ensemble) -> PolicyDecision for the frame after t.

    Static baselines ignore the ensemble; adaptive policies require it.
    """

    name = "base"
    needs_samples = False

    def __init__(self, n_gamma, cfg):
        self.n_gamma = n_gamma
        self.cfg = cfg

    def select(self, t, rng, ensemble=None):
        raise NotImplementedError

    def _static(self, mask):
        return PolicyDecision(mask=mask, score=0.0, policy_name=self.name,
                              candidates_examined=0)

    def _require(self, ensemble):
        if ensemble is None:
            raise RejectedInputError(
                f"policy '{self.name}' needs a posterior ensemble")
        if ensemble.n_gamma != self.n_gamma:
            raise RejectedInputError(
                "ensemble grid does not match the policy's n_gamma")
        return ensemble


class EquispacedPolicy(Policy):
    name = "equispaced"

    def select(self, t, rng, ensemble=None):
        return self._static(
            equispaced_mask(t, self.n_gamma, self.cfg.n_lines))


class UniformRandomPolicy(Policy):
    name = "uniform"

    def select(self, t, rng, ensemble=None):
        return self._static(
            uniform_random_mask(rng, self.n_gamma, self.cfg.n_lines))


class VariableDensityPolicy(Policy):
    name = "variable_density"

    def select(self, t, rng, ensemble=None):
        return self._static(
            variable_density_mask(rng, self.n_gamma, self.cfg.n_lines,
                                  self.cfg.density_decay))


class CovariancePolicy(Policy):
    name = "covariance"
    needs_samples = True

    def select(self, t, rng, ensemble=None):
        ens = self._require(ensemble)
        candidates = generate_candidates(rng, self.n_gamma,
                                         self.cfg.n_lines,
                                         self.cfg.n_candidates)
        return covariance_policy(ens, candidates,
                                 NoiseModel(self.cfg.noise_std), rng,
                                 jitter=self.cfg.jitter)


class TracePolicy(Policy):
    name = "trace"
    needs_samples = True

    def select(self, t, rng, ensemble=None):
        ens = self._require(ensemble)
        scores = line_variance_scores(ens)
        return trace_policy(scores, self.n_gamma, self.cfg.n_lines,
                            self.cfg.exclusion_radius)


_POLICIES = {cls.name: cls for cls in
             (EquispacedPolicy, UniformRandomPolicy, VariableDensityPolicy,
              CovariancePolicy, TracePolicy)}


def make_policy(name, n_gamma, cfg):
    if name not in _POLICIES:
        raise RejectedInputError(
            f"unknown policy '{name}'; expected one of {POLICY_NAMES}")
    return _POLICIES[name](n_gamma, cfg)
