"""Exact trajectory sampling and synthetic cohort generation.

The sampler is the competing-exponentials form of the Gillespie algorithm:
at every jump each node draws an exponential waiting time at its current
flip intensity, the minimum fires, and intensities are recomputed.  The same
engine, batched over joint-state indices, provides the Monte-Carlo oracle
for transient distributions.
"""

from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec, _check_covariates, flip_rate_table, intensity

# Recorded in cohort metadata so cohorts are reproducible across
# implementations of the same generator.
RNG_NAME = "numpy-pcg64/seedsequence-spawn"


@dataclass
class Trajectory:
    """One subject's observed history: initial state at ``t0`` plus the
    timestamped flips inside the observation window ``(t0, t_end]``."""

    subject_id: str
    t_end: float
    initial_state: np.ndarray
    events: list = field(default_factory=list)   # (time, node, new_state)
    t0: float = 0.0

    def __post_init__(self):
        self.initial_state = np.asarray(self.initial_state, dtype=np.uint8)
        if self.t_end <= self.t0:
            raise ValueError(f"{self.subject_id}: window must have positive length")
        d = self.initial_state.shape[0]
        cur = self.initial_state.copy()
        last = self.t0
        for time, node, new_state in self.events:
            if not self.t0 < time <= self.t_end:
                raise ValueError(f"{self.subject_id}: event at {time} outside window")
            if time <= last:
                raise ValueError(f"{self.subject_id}: event times must strictly increase")
            if not 0 <= node < d:
                raise ValueError(f"{self.subject_id}: event references unknown node {node}")
            if new_state not in (0, 1):
                raise ValueError(f"{self.subject_id}: event state must be 0 or 1")
            if cur[node] == new_state:
                raise ValueError(f"{self.subject_id}: event at {time} does not flip node {node}")
            cur[node] = new_state
            last = time

    @property
    def d(self) -> int:
        return self.initial_state.shape[0]

    def state_at(self, t: float) -> np.ndarray:
        """State vector at time ``t`` (events at exactly ``t`` included)."""
        s = self.initial_state.copy()
        for time, node, new_state in self.events:
            if time > t:
                break
            s[node] = new_state
        return s

    def onset_times(self) -> np.ndarray:
        """First time each node is ON: 0 for initially-ON nodes, inf if never."""
        t = np.where(self.initial_state == 1, 0.0, np.inf)
        for time, node, new_state in self.events:
            if new_state == 1 and t[node] == np.inf:
                t[node] = time
        return t


@dataclass
class Cohort:
    """Trajectories paired with per-subject covariate vectors (one row per
    subject, intercept in column 0)."""

    trajectories: list
    covariates: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.covariates = np.asarray(self.covariates, dtype=float)
        n = len(self.trajectories)
        if self.covariates.shape[0] != n:
            raise ValueError("one covariate vector per trajectory required")
        if n > 0:
            if self.covariates.ndim != 2:
                raise ValueError("covariates must be a 2-D matrix")
            if not np.all(np.isfinite(self.covariates)):
                raise ValueError("covariates contain non-finite entries")
            if not np.all(self.covariates[:, 0] == 1.0):
                raise ValueError("covariate column 0 must be the intercept (all 1.0)")
            ids = [tr.subject_id for tr in self.trajectories]
            if len(set(ids)) != n:
                raise ValueError("subject ids must be unique")

    @property
    def n_subjects(self) -> int:
        return len(self.trajectories)

    @property
    def m(self) -> int:
        return self.covariates.shape[1]

    @property
    def subject_ids(self) -> list:
        return [tr.subject_id for tr in self.trajectories]

    def subset(self, indices) -> "Cohort":
        indices = list(indices)
        return Cohort(
            trajectories=[self.trajectories[i] for i in indices],
            covariates=self.covariates[indices],
            meta=dict(self.meta),
        )


class CovariateSampler:
    """Sampler for exogenous covariates declared as config components.

    Each component is either ``{"name", "kind": "categorical", "levels",
    "probs"}`` or ``{"name", "kind": "uniform", "low", "high"}``.
    Categorical components are one-hot encoded with the first level dropped
    (reference coding); an intercept column is prepended, so the encoded
    length is ``1 + sum(len(levels) - 1) + #uniform``.
    """

    def __init__(self, components: list):
        if not components:
            raise ValueError("covariate sampler needs at least one component")
        self.components = components
        self.columns = ["intercept"]
        for comp in components:
            kind = comp.get("kind")
            name = comp.get("name", "covariate")
            if kind == "categorical":
                levels, probs = comp["levels"], comp["probs"]
                if len(levels) < 2:
                    raise ValueError(f"{name}: categorical needs >= 2 levels")
                if len(probs) != len(levels):
                    raise ValueError(f"{name}: probs must match levels")
                if abs(sum(probs) - 1.0) > 1e-9 or min(probs) < 0:
                    raise ValueError(f"{name}: probs must be a distribution")
                self.columns += [f"{name}={lv}" for lv in levels[1:]]
            elif kind == "uniform":
                if not comp["low"] < comp["high"]:
                    raise ValueError(f"{name}: need low < high")
                self.columns.append(name)
            else:
                raise ValueError(f"{name}: unknown component kind {kind!r}")

    @property
    def m(self) -> int:
        return len(self.columns)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        z = [1.0]
        for comp in self.components:
            if comp["kind"] == "categorical":
                k = len(comp["levels"])
                pick = rng.choice(k, p=comp["probs"])
                z += [1.0 if pick == lv else 0.0 for lv in range(1, k)]
            else:
                z.append(rng.uniform(comp["low"], comp["high"]))
        return np.array(z)


def sample_trajectory(spec: ModelSpec, z, initial, horizon: float, seed) -> Trajectory:
    """Simulate one subject exactly up to ``horizon`` months.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``; identical
    inputs give a bit-identical trajectory.  One standard-exponential block
    of size ``d`` is drawn per jump, in fixed node order.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    z = _check_covariates(z, spec.m)
    rng = np.random.default_rng(seed)
    state = np.asarray(initial, dtype=np.uint8).copy()
    d = spec.d
    events = []
    t = 0.0
    while True:
        rates = np.array([intensity(spec, i, state, z) for i in range(d)])
        if not rates.any():
            break
        draws = np.maximum(rng.standard_exponential(d), np.finfo(float).tiny)
        with np.errstate(divide="ignore"):
            waits = draws / rates
        i = int(np.argmin(waits))
        t_next = t + float(waits[i])
        if t_next > horizon:
            break
        if t_next <= t:  # degenerate zero draw; keep timestamps strict
            t_next = np.nextafter(t, np.inf)
        state[i] ^= 1
        events.append((t_next, i, int(state[i])))
        t = t_next
    return Trajectory(
        subject_id="s0",
        t_end=horizon,
        initial_state=np.asarray(initial, dtype=np.uint8),
        events=events,
    )


def simulate_cohort(spec: ModelSpec, covariate_sampler: CovariateSampler,
                    n: int, horizon: float, seed: int) -> Cohort:
    """Simulate ``n`` independent subjects starting with no conditions.

    Per-subject seeds are derived by ``SeedSequence(seed).spawn(n + 1)``:
    child 0 drives covariate draws, child ``p + 1`` drives subject ``p``.
    """
    if n < 1:
        raise ValueError("cohort size must be >= 1")
    if covariate_sampler.m != spec.m:
        raise ValueError(
            f"sampler encodes m={covariate_sampler.m} covariates, model expects {spec.m}")
    children = np.random.SeedSequence(seed).spawn(n + 1)
    cov_rng = np.random.default_rng(children[0])
    width = max(4, len(str(n - 1)))
    trajectories, covs = [], []
    initial = np.zeros(spec.d, dtype=np.uint8)
    for p in range(n):
        z = covariate_sampler.sample(cov_rng)
        tr = sample_trajectory(spec, z, initial, horizon, seed=children[p + 1])
        tr.subject_id = f"s{p:0{width}d}"
        trajectories.append(tr)
        covs.append(z)
    meta = {
        "horizon": float(horizon),
        "seed": int(seed),
        "rng": RNG_NAME,
        "d": spec.d,
        "m": spec.m,
        "covariate_columns": list(covariate_sampler.columns),
    }
    return Cohort(trajectories, np.array(covs), meta)


def joint_index(state) -> int:
    """Joint-state index with bit ``i`` holding node ``i``'s state."""
    return int(sum(int(b) << i for i, b in enumerate(state)))


def empirical_state_distribution(spec: ModelSpec, z, initial, t: float,
                                 n_samples: int, seed: int) -> np.ndarray:
    """Monte-Carlo estimate of the joint-state distribution at time ``t``.

    Runs ``n_samples`` exact simulations batched over joint-state indices
    (per-node exponential draws, minimum fires) and returns normalized
    counts over the ``2**d`` joint states.
    """
    if spec.d > 20:
        raise ValueError("joint table too large: d must be <= 20")
    if t < 0:
        raise ValueError("t must be >= 0")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    z = _check_covariates(z, spec.m)
    rates = flip_rate_table(spec, z)          # (2**d, d)
    rng = np.random.default_rng(seed)
    idx = np.full(n_samples, joint_index(initial), dtype=np.int64)
    if t > 0:
        now = np.zeros(n_samples)
        alive = np.ones(n_samples, dtype=bool)
        tiny = np.finfo(float).tiny
        while alive.any():
            sub = np.flatnonzero(alive)
            r = rates[idx[sub]]
            draws = np.maximum(rng.standard_exponential(r.shape), tiny)
            with np.errstate(divide="ignore"):
                waits = draws / r
            j = np.argmin(waits, axis=1)
            t_next = now[sub] + waits[np.arange(sub.size), j]
            fired = t_next <= t
            hit = sub[fired]
            idx[hit] ^= np.int64(1) << j[fired]
            now[hit] = t_next[fired]
            alive[sub[~fired]] = False
    counts = np.bincount(idx, minlength=2 ** spec.d)
    return counts / n_samples
