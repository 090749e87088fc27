"""Structure and parameter learning by adaptive group regularization.

The fit minimizes the penalized negative log likelihood

    -loglik(beta) + k * sum_g lambda * w_g * ||beta_g||_2

where each group ``g`` is one coefficient row (child, own state, parent),
``k`` is the group-size multiplier (the covariate count by default) and
``w_g`` are per-group weights, typically 1 / ||unpenalized estimate|| so
that weakly supported dependencies are shrunk hardest.  Baseline rows carry
the always-present self dynamics and are not penalized.

The solver is the monotone variant of FISTA: accelerated proximal gradient
with backtracking on the smooth part and a fallback to the previous iterate
whenever the accelerated candidate would increase the objective, so the
objective trace is non-increasing.  Whole groups hit exact zeros through the
block soft-threshold prox, which is what makes the learned graph sparse.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .likelihood import _value_and_grad, build_designs
from .model import CoefficientTensor, Graph, structure_from_coefficients
from .simulate import Cohort


@dataclass
class PenaltyConfig:
    """Group penalty settings.

    ``weights`` holds one array per node, shaped ``(2, P_i + 1)``; entry
    ``[s, k]`` weights the row group ``(i, s, k)``.  ``None`` means all
    ones.  ``group_size_multiplier`` defaults to the covariate count at fit
    time.  Baseline rows (k = 0) are only penalized when
    ``penalize_baseline`` is set.
    """

    lam: float = 0.0
    weights: list | None = None
    group_size_multiplier: float | None = None
    penalize_baseline: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.weights is not None:
            for w in self.weights:
                if np.any(np.asarray(w) <= 0):
                    raise ValueError("group weights must be positive")


@dataclass
class FitOptions:
    max_iter: int = 5000
    tol: float = 1e-8
    irreversible: bool = True
    gmm_early_stop: bool = False
    gmm_seed: int = 0
    # plateau rule for the GMM shortcut: relative improvement below
    # plateau_tol for plateau_iters consecutive iterations
    plateau_tol: float = 1e-6
    plateau_iters: int = 50


@dataclass
class FitResult:
    coeffs: CoefficientTensor
    lambda_used: float
    objective_trace: np.ndarray
    nonzero_groups: int
    n_penalized_groups: int
    sparsity_ratio: float            # zeroed share of penalized groups
    graph: Graph                     # structure_from_coefficients(coeffs, 0)
    iterations: int
    converged: bool
    gmm_stopped: bool = False

    def diagnostics(self) -> dict:
        return {
            "lambda": self.lambda_used,
            "objective_trace": [float(v) for v in self.objective_trace],
            "nonzero_groups": self.nonzero_groups,
            "n_penalized_groups": self.n_penalized_groups,
            "sparsity_ratio": self.sparsity_ratio,
            "iterations": self.iterations,
            "converged": self.converged,
            "gmm_stopped": self.gmm_stopped,
            "learned_parents": [list(pa) for pa in self.graph.parents],
        }


def group_prox(v, threshold: float):
    """Block soft threshold: 0 if ||v|| <= threshold, else shrink toward 0."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    v = np.asarray(v, dtype=float)
    if threshold == 0.0:
        return v.copy()
    norm = float(np.linalg.norm(v))
    if norm <= threshold:
        return np.zeros_like(v)
    return v * (1.0 - threshold / norm)


def _penalized_groups(graph: Graph, irreversible: bool, penalize_baseline: bool) -> list:
    states = (0,) if irreversible else (0, 1)
    groups = []
    for i in range(graph.d):
        for s in states:
            k0 = 0 if penalize_baseline else 1
            for k in range(k0, graph.n_parents(i) + 1):
                groups.append((i, s, k))
    return groups


def _group_weight(penalty: PenaltyConfig, i: int, s: int, k: int) -> float:
    if penalty.weights is None:
        return 1.0
    return float(penalty.weights[i][s, k])


def penalized_objective(coeffs: CoefficientTensor, cohort: Cohort, graph: Graph,
                        penalty: PenaltyConfig, irreversible: bool = False) -> float:
    """Negative log likelihood plus the weighted group penalty."""
    from .likelihood import log_likelihood

    k_mult = penalty.group_size_multiplier if penalty.group_size_multiplier is not None else coeffs.m
    pen = 0.0
    if penalty.lam > 0:
        for i, s, k in _penalized_groups(graph, irreversible, penalty.penalize_baseline):
            pen += penalty.lam * _group_weight(penalty, i, s, k) * coeffs.group_norm(i, s, k)
    return -log_likelihood(coeffs, cohort, graph, irreversible) + k_mult * pen


class _Layout:
    """Flat-vector layout of the ragged coefficient tensor plus the slices
    of penalized groups."""

    def __init__(self, graph: Graph, m: int, penalty: PenaltyConfig, irreversible: bool):
        self.graph, self.m = graph, m
        self.offsets = []
        pos = 0
        for i in range(graph.d):
            self.offsets.append(pos)
            pos += 2 * (graph.n_parents(i) + 1) * m
        self.size = pos
        self.k_mult = penalty.group_size_multiplier if penalty.group_size_multiplier is not None else m
        self.groups = []
        for i, s, k in _penalized_groups(graph, irreversible, penalty.penalize_baseline):
            start = self.offsets[i] + (s * (graph.n_parents(i) + 1) + k) * m
            w = _group_weight(penalty, i, s, k)
            self.groups.append((slice(start, start + m), penalty.lam * w * self.k_mult))

    def tensor(self, vec) -> CoefficientTensor:
        return CoefficientTensor.from_vector(self.graph, self.m, vec)

    def penalty_value(self, vec) -> float:
        return sum(coef * float(np.linalg.norm(vec[sl]))
                   for sl, coef in self.groups if coef > 0)

    def prox(self, vec, step: float) -> np.ndarray:
        out = vec.copy()
        for sl, coef in self.groups:
            if coef > 0:
                out[sl] = group_prox(out[sl], step * coef)
        return out


def _make_smooth(designs, layout, cohort):
    """Smooth part f = -loglik as value / value-and-grad over flat vectors."""

    def value(vec):
        ll, _ = _value_and_grad(designs, layout.tensor(vec), cohort, want_grad=False)
        return -ll

    def value_grad(vec):
        ll, grads = _value_and_grad(designs, layout.tensor(vec), cohort, want_grad=True)
        return -ll, -np.concatenate([g.ravel() for g in grads])

    return value, value_grad


def _fista(designs, layout, cohort, opts: FitOptions, x0: np.ndarray):
    """Monotone FISTA with backtracking.  Returns (x, trace, iters,
    converged, gmm_stopped)."""
    f_value, f_value_grad = _make_smooth(designs, layout, cohort)
    x = x0.copy()
    y = x.copy()
    t_mom = 1.0
    L = 1.0
    fx = f_value(x)
    Fx = fx + layout.penalty_value(x)
    if not np.isfinite(Fx):
        raise FloatingPointError("non-finite objective at the starting point")
    trace = [Fx]
    plateau = 0
    small_steps = 0
    gmm_stopped = False
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        fy, gy = f_value_grad(y)
        L = max(L * 0.9, 1e-10)
        while True:
            step = 1.0 / L
            z = layout.prox(y - step * gy, step)
            dz = z - y
            fz = f_value(z)
            if np.isfinite(fz) and fz <= fy + gy @ dz + 0.5 * L * (dz @ dz) + 1e-12:
                break
            L *= 2.0
            if L > 1e18:
                raise FloatingPointError(
                    "line search failed: objective not finite or not smooth "
                    f"(iteration {it}, L={L:.3g})")
        Fz = fz + layout.penalty_value(z)
        if Fz <= Fx:
            accepted = True
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
            y = z + ((t_mom - 1.0) / t_new) * (z - x)
            x, F_prev = z, Fx
            Fx, t_mom = Fz, t_new
        else:
            # momentum overshot: restart so the next step is a plain
            # backtracked proximal gradient step from the incumbent
            accepted = False
            y = x.copy()
            F_prev = Fx
            t_mom = 1.0
        trace.append(Fx)
        rel = (F_prev - Fx) / max(1.0, abs(F_prev))
        # count only accepted steps: a rejected step changes nothing and
        # says nothing about convergence
        small_steps = small_steps + 1 if (accepted and rel < opts.tol) else 0
        if small_steps >= 3:
            converged = True
            break
        if opts.gmm_early_stop:
            plateau = plateau + 1 if rel < opts.plateau_tol else 0
            if plateau >= opts.plateau_iters:
                x = _gmm_zero_pass(x, designs, layout, cohort, opts)
                Fx = f_value(x) + layout.penalty_value(x)
                trace.append(Fx)
                gmm_stopped = True
                converged = True
                break
    return x, np.array(trace), it, converged, gmm_stopped


def _finish(x, layout, lam, trace, iters, converged, gmm_stopped) -> FitResult:
    coeffs = layout.tensor(x)
    norms = [float(np.linalg.norm(x[sl])) for sl, _ in layout.groups]
    nonzero = sum(1 for nv in norms if nv > 0)
    total = len(norms)
    return FitResult(
        coeffs=coeffs,
        lambda_used=lam,
        objective_trace=trace,
        nonzero_groups=nonzero,
        n_penalized_groups=total,
        sparsity_ratio=1.0 - nonzero / total if total else 0.0,
        graph=structure_from_coefficients(coeffs, 0.0),
        iterations=iters,
        converged=converged,
        gmm_stopped=gmm_stopped,
    )


def fista_fit(cohort: Cohort, graph: Graph, penalty: PenaltyConfig,
              opts: FitOptions | None = None,
              init: CoefficientTensor | None = None) -> FitResult:
    """Fit the penalized model at a fixed lambda.  Deterministic."""
    if cohort.n_subjects == 0:
        raise ValueError("cannot fit an empty cohort")
    opts = opts or FitOptions()
    designs = build_designs(cohort, graph, opts.irreversible)
    layout = _Layout(graph, cohort.m, penalty, opts.irreversible)
    x0 = init.to_vector() if init is not None else np.zeros(layout.size)
    x, trace, iters, converged, gmm_stopped = _fista(designs, layout, cohort, opts, x0)
    return _finish(x, layout, penalty.lam, trace, iters, converged, gmm_stopped)


def adaptive_weights(unpenalized: CoefficientTensor, floor: float = 1e-6) -> list:
    """Per-group weights 1 / max(||estimate||, floor) from an unpenalized
    fit; strongly supported dependencies get light shrinkage."""
    out = []
    for i in range(unpenalized.graph.d):
        b = unpenalized.beta[i]
        norms = np.linalg.norm(b, axis=2)
        out.append(1.0 / np.maximum(norms, floor))
    return out


def regularization_path(cohort: Cohort, graph: Graph, lambda_grid,
                        opts: FitOptions | None = None,
                        adaptive: bool = True,
                        weights: list | None = None,
                        penalty_template: PenaltyConfig | None = None) -> list:
    """One fit per lambda, ascending, each warm-started from the previous.

    With ``adaptive`` (and no explicit ``weights``), group weights come from
    the unpenalized fit: the grid's lambda = 0 entry if present, otherwise a
    dedicated lambda = 0 fit that is not part of the returned path.
    """
    grid = [float(v) for v in lambda_grid]
    if not grid:
        raise ValueError("lambda grid must be non-empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be sorted ascending")
    opts = opts or FitOptions()
    tmpl = penalty_template or PenaltyConfig()
    designs = build_designs(cohort, graph, opts.irreversible)
    layout_probe = _Layout(graph, cohort.m, tmpl, opts.irreversible)

    def run(lam, w, x0):
        pen = PenaltyConfig(lam=lam, weights=w,
                            group_size_multiplier=tmpl.group_size_multiplier,
                            penalize_baseline=tmpl.penalize_baseline)
        layout = _Layout(graph, cohort.m, pen, opts.irreversible)
        x, trace, iters, conv, gs = _fista(designs, layout, cohort, opts, x0)
        return _finish(x, layout, lam, trace, iters, conv, gs)

    results = []
    x0 = np.zeros(layout_probe.size)
    if adaptive and weights is None:
        fit0 = run(0.0, None, x0)
        weights = adaptive_weights(fit0.coeffs)
        if grid[0] == 0.0:
            results.append(fit0)
            grid = grid[1:]
        x0 = fit0.coeffs.to_vector()
    for lam in grid:
        fit = run(lam, weights, x0)
        results.append(fit)
        x0 = fit.coeffs.to_vector()
    return results


@dataclass
class CvResult:
    best_lambda: float
    curve: list                      # (lambda, mean held-out NLL per subject)
    folds: int
    seed: int


def cross_validate(cohort: Cohort, graph: Graph, lambda_grid, folds: int,
                   seed: int, opts: FitOptions | None = None,
                   adaptive: bool = True,
                   penalty_template: PenaltyConfig | None = None) -> CvResult:
    """Subject-level K-fold selection of lambda.

    Fold assignment shuffles subjects with the given seed; no subject is
    split across folds.  The score per lambda is the mean (over folds) of
    the held-out negative log likelihood per subject; the best lambda is
    the largest one attaining the minimum, preferring sparser models on
    ties.
    """
    from .likelihood import log_likelihood

    if folds < 2:
        raise ValueError("need at least 2 folds")
    n = cohort.n_subjects
    if folds > n:
        raise ValueError("more folds than subjects")
    opts = opts or FitOptions()
    grid = [float(v) for v in lambda_grid]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[perm] = np.arange(n) % folds
    errors = np.zeros((folds, len(grid)))
    for f in range(folds):
        train = cohort.subset(np.flatnonzero(fold_of != f))
        test = cohort.subset(np.flatnonzero(fold_of == f))
        path = regularization_path(train, graph, grid, opts, adaptive,
                                   penalty_template=penalty_template)
        for j, fit in enumerate(path):
            nll = -log_likelihood(fit.coeffs, test, graph, opts.irreversible)
            errors[f, j] = nll / test.n_subjects
    curve = [(lam, float(errors[:, j].mean())) for j, lam in enumerate(grid)]
    best_lambda, best_err = curve[0]
    for lam, err in curve[1:]:
        if err <= best_err:
            best_lambda, best_err = lam, err
    return CvResult(best_lambda=best_lambda, curve=curve, folds=folds, seed=seed)


def _kmeanspp_centers(values: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [values[int(rng.integers(values.size))]]
    for _ in range(1, k):
        d2 = np.min([(values - c) ** 2 for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(values[int(rng.integers(values.size))])
            continue
        centers.append(values[int(rng.choice(values.size, p=d2 / total))])
    return np.array(centers)


VAR_FLOOR = 1e-12


def _em_1d(values: np.ndarray, mu: np.ndarray, max_iter: int):
    """EM to convergence from the given centers; returns (ll, mu, var, w)."""
    n, k = values.size, mu.size
    var = np.full(k, max(values.var(), VAR_FLOOR))
    w = np.full(k, 1.0 / k)
    ll = ll_prev = -np.inf
    for _ in range(max_iter):
        logp = (np.log(w)[:, None]
                - 0.5 * (np.log(2 * np.pi * var)[:, None]
                         + (values[None, :] - mu[:, None]) ** 2 / var[:, None]))
        norm = logsumexp(logp, axis=0)
        ll = float(norm.sum())
        resp = np.exp(logp - norm[None, :])
        nk = resp.sum(axis=1)
        dead = nk < 1e-12
        nk = np.where(dead, 1e-12, nk)
        mu = np.where(dead, mu, resp @ values / nk)
        var = np.maximum((resp * (values[None, :] - mu[:, None]) ** 2).sum(axis=1) / nk,
                         VAR_FLOOR)
        w = nk / n
        w = w / w.sum()
        if abs(ll - ll_prev) < 1e-10 * max(1.0, abs(ll)):
            break
        ll_prev = ll
    return ll, mu, var, w


def fit_gmm(values, k_candidates=(2, 3), seed: int = 0, max_iter: int = 500,
            n_init: int = 8) -> list:
    """1-D Gaussian mixture by EM, component count chosen by BIC.

    Deterministic given the seed: each candidate k runs ``n_init`` k-means++
    initializations (seeds spawned from ``seed``) and keeps the best final
    likelihood, which protects against EM merging a tight near-zero cluster
    into a broad neighbor.  Variances are floored at 1e-12.  Returns
    (mean, variance, weight) triples sorted by mean.
    """
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    if n < 10:
        raise ValueError("need at least 10 values to fit a mixture")
    streams = np.random.SeedSequence(seed).spawn(n_init)
    best = None
    for k in sorted(set(int(k) for k in k_candidates)):
        if k < 1:
            raise ValueError("component counts must be >= 1")
        run_best = None
        for stream in streams:
            rng = np.random.default_rng(stream)
            ll, mu, var, w = _em_1d(values, _kmeanspp_centers(values, k, rng), max_iter)
            if run_best is None or ll > run_best[0]:
                run_best = (ll, mu, var, w)
        ll, mu, var, w = run_best
        bic = -2.0 * ll + (3 * k - 1) * math.log(n)
        if best is None or bic < best[0]:
            best = (bic, mu, var, w)
    _, mu, var, w = best
    order = np.argsort(mu)
    return [(float(mu[c]), float(var[c]), float(w[c])) for c in order]


def _gmm_zero_band(coeffs: CoefficientTensor, seed: int):
    """Find the near-zero mixture component over nonzero coefficients.
    Returns (lo, hi) or None when no credible near-zero cluster exists."""
    values = np.concatenate([b.ravel() for b in coeffs.beta])
    values = values[values != 0]
    if values.size < 10:
        warnings.warn("too few nonzero coefficients for mixture post-processing; no-op")
        return None
    comps = fit_gmm(values, seed=seed)
    mu, var, _ = min(comps, key=lambda c: abs(c[0]))
    sigma = math.sqrt(var)
    lo, hi = mu - 3.0 * sigma, mu + 3.0 * sigma
    # require a credible zero cluster: small mean relative to the overall
    # spread AND a band that actually covers zero, so a bimodal fit cannot
    # wipe out a legitimate nonzero cluster
    if abs(mu) > values.std() or not lo <= 0.0 <= hi:
        warnings.warn("no near-zero coefficient cluster found; no-op")
        return None
    return lo, hi


def _apply_band(vec: np.ndarray, band) -> tuple:
    lo, hi = band
    inside = (vec != 0) & (vec >= lo) & (vec <= hi)
    out = np.where(inside, 0.0, vec)
    return out, int(inside.sum())


def _one_prox_gradient_pass(x, designs, layout, cohort, opts) -> np.ndarray:
    """A single backtracked proximal gradient step (no momentum)."""
    f_value, f_value_grad = _make_smooth(designs, layout, cohort)
    fx, gx = f_value_grad(x)
    L = 1.0
    while True:
        step = 1.0 / L
        z = layout.prox(x - step * gx, step)
        dz = z - x
        fz = f_value(z)
        if np.isfinite(fz) and fz <= fx + gx @ dz + 0.5 * L * (dz @ dz) + 1e-12:
            return z
        L *= 2.0
        if L > 1e18:
            raise FloatingPointError("line search failed in post-processing pass")


def _gmm_zero_pass(x, designs, layout, cohort, opts) -> np.ndarray:
    band = _gmm_zero_band(layout.tensor(x), opts.gmm_seed)
    if band is None:
        return x
    x2, zeroed = _apply_band(x, band)
    if zeroed == 0:
        return x
    return _one_prox_gradient_pass(x2, designs, layout, cohort, opts)


def gmm_early_stop(coeffs: CoefficientTensor, cohort: Cohort, graph: Graph,
                   penalty: PenaltyConfig, opts: FitOptions | None = None) -> CoefficientTensor:
    """Zero the near-zero coefficient cluster and run one more solver pass.

    A 1-D mixture is fitted to the nonzero coefficient values; every value
    within 3 standard deviations of the component whose mean is closest to
    zero is set to exactly zero, then a single proximal gradient pass
    re-stabilizes the remaining coefficients.  No-op (with a warning) when
    no credible near-zero cluster exists, and a pure no-op when the band
    contains no values.
    """
    opts = opts or FitOptions()
    band = _gmm_zero_band(coeffs, opts.gmm_seed)
    if band is None:
        return coeffs.copy()
    x = coeffs.to_vector()
    x2, zeroed = _apply_band(x, band)
    if zeroed == 0:
        return coeffs.copy()
    designs = build_designs(cohort, graph, opts.irreversible)
    layout = _Layout(graph, cohort.m, penalty, opts.irreversible)
    x3 = _one_prox_gradient_pass(x2, designs, layout, cohort, opts)
    return layout.tensor(x3)
