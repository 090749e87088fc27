"""Joint-generator construction and matrix-exponential queries.

For exact queries the per-node flip intensities are amalgamated into the
generator of the joint process over all ``2**d`` binary configurations
(only single-bit flips have nonzero rate).  Transient distributions are
``p0 @ expm(Q t)``; the matrix exponential is scipy's Pade approximant with
scaling and squaring.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .model import ModelSpec, flip_rate_table
from .simulate import joint_index

JOINT_STATE_CAP = 20   # largest d for which the 2**d joint table is built


@dataclass(frozen=True)
class JointGenerator:
    """Generator matrix over joint states; bit ``i`` of a state index is
    node ``i``'s state.  Rates are per month."""

    q: np.ndarray
    d: int

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "q", q)
        n = 2 ** self.d
        if q.shape != (n, n):
            raise ValueError(f"generator must be {n} x {n} for d={self.d}")
        off = q.copy()
        np.fill_diagonal(off, 0.0)
        if off.min() < 0:
            raise ValueError("off-diagonal generator entries must be >= 0")
        if np.abs(q.sum(axis=1)).max() > 1e-12 * max(1.0, np.abs(q).max()):
            raise ValueError("generator rows must sum to zero")


def amalgamate(spec: ModelSpec, z) -> JointGenerator:
    """Joint generator for a subject with covariates ``z``."""
    if spec.d > JOINT_STATE_CAP:
        raise ValueError(f"joint table too large: d={spec.d} exceeds cap {JOINT_STATE_CAP}")
    rates = flip_rate_table(spec, z)
    n = 2 ** spec.d
    rows = np.arange(n)
    q = np.zeros((n, n))
    for i in range(spec.d):
        q[rows, rows ^ (1 << i)] = rates[:, i]
    q[rows, rows] = -rates.sum(axis=1)
    return JointGenerator(q=q, d=spec.d)


def _cleanup(p: np.ndarray) -> np.ndarray:
    worst = p.min()
    if worst < -1e-12:
        raise FloatingPointError(
            f"matrix exponential produced entry {worst:.3e}; generator may be ill-conditioned")
    p = np.where(p < 0, 0.0, p)
    return p / p.sum()


def transient_distribution(gen: JointGenerator, p0, t: float) -> np.ndarray:
    """Distribution over joint states after ``t`` months from ``p0``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (2 ** gen.d,):
        raise ValueError(f"p0 must have length {2 ** gen.d}")
    if abs(p0.sum() - 1.0) > 1e-9 or p0.min() < 0:
        raise ValueError("p0 must be a probability vector (sum 1 within 1e-9)")
    return _cleanup(p0 @ expm(gen.q * t))


def interval_distribution(gen: JointGenerator, p0, t: float, k: float) -> np.ndarray:
    """Distribution at ``t`` given the reference point ``k <= t``; equals the
    transient distribution over the elapsed interval ``t - k``."""
    if not 0 <= k <= t:
        raise ValueError("need t >= k >= 0")
    return transient_distribution(gen, p0, t - k)


def marginal_on_probabilities(p: np.ndarray, d: int) -> np.ndarray:
    """Per-node ON probability from a joint-state distribution."""
    idx = np.arange(2 ** d)
    return np.array([p[(idx >> i & 1) == 1].sum() for i in range(d)])


def point_mass(state, d: int) -> np.ndarray:
    p = np.zeros(2 ** d)
    p[joint_index(state)] = 1.0
    return p


@dataclass(frozen=True)
class RiskCurves:
    """Marginal ON-probability curves on a time grid (months).  ``probs``
    has one column per entry of ``nodes``."""

    times: np.ndarray
    nodes: tuple
    probs: np.ndarray

    def rows(self):
        """(time, node, probability) rows, time-major; plot-ready."""
        for r, t in enumerate(self.times):
            for c, node in enumerate(self.nodes):
                yield float(t), int(node), float(self.probs[r, c])


def emergence_trajectory(spec: ModelSpec, z, prior, horizon_months: float,
                         grid_step: float = 1.0) -> RiskCurves:
    """Risk curves for the conditions not present at baseline.

    ``prior`` lists the nodes ON at time 0; the joint distribution starts as
    a point mass there and is propagated along the grid by repeated
    application of the one-step propagator ``expm(Q * grid_step)``.
    """
    if horizon_months <= 0:
        raise ValueError("horizon must be positive")
    if grid_step <= 0:
        raise ValueError("grid step must be positive")
    prior = sorted(set(int(i) for i in prior))
    for i in prior:
        if not 0 <= i < spec.d:
            raise ValueError(f"prior node {i} out of range")
    baseline = np.zeros(spec.d, dtype=np.uint8)
    baseline[prior] = 1
    gen = amalgamate(spec, z)
    n_steps = int(np.floor(horizon_months / grid_step + 1e-9))
    times = np.arange(n_steps + 1) * grid_step
    step_prop = expm(gen.q * grid_step)
    nodes = tuple(i for i in range(spec.d) if i not in prior)
    probs = np.empty((n_steps + 1, len(nodes)))
    p = point_mass(baseline, spec.d)
    for r in range(n_steps + 1):
        marg = marginal_on_probabilities(p, spec.d)
        probs[r] = marg[list(nodes)]
        if r < n_steps:
            p = _cleanup(p @ step_prop)
    return RiskCurves(times=times, nodes=nodes, probs=probs)


def predict_onset(spec: ModelSpec, z, baseline, horizons_months) -> np.ndarray:
    """Marginal ON probability per node (rows) at each horizon (columns),
    starting from the given baseline state."""
    horizons = [float(h) for h in horizons_months]
    if any(h < 0 for h in horizons):
        raise ValueError("horizons must be >= 0")
    if any(b < a for a, b in zip(horizons, horizons[1:])):
        raise ValueError("horizons must be ascending")
    gen = amalgamate(spec, z)
    p0 = point_mass(baseline, spec.d)
    out = np.empty((spec.d, len(horizons)))
    for j, h in enumerate(horizons):
        p = transient_distribution(gen, p0, h)
        out[:, j] = marginal_on_probabilities(p, spec.d)
    return out
