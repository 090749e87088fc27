"""Core types for functional continuous-time Bayesian networks over binary
state variables.

A model couples a directed graph (which conditions influence which) with a
log-linear parameterization of every flip intensity: the rate at which node
``i`` leaves its current state is ``exp(z . beta)`` where ``z`` is the
subject's covariate vector and ``beta`` sums a baseline coefficient row with
one extra row per parent that is currently ON.  Cycles between distinct nodes
are allowed; a node may not be its own parent (staying put is described by
the flip-out rate itself).  Time is measured in months throughout the
package.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Graph:
    """Parent structure: ``parents[i]`` is the ordered tuple of candidate
    parents of node ``i``.

    Parents are orderd because coefficient rows are indexed by position in
    this tuple (row ``k`` belongs to ``parents[i][k-1]``).
    """

    parents: tuple

    def __post_init__(self):
        norm = tuple(tuple(int(j) for j in pa) for pa in self.parents)
        object.__setattr__(self, "parents", norm)
        d = len(norm)
        if d < 1:
            raise ValueError("graph needs at least one node")
        for i, pa in enumerate(norm):
            if len(set(pa)) != len(pa):
                raise ValueError(f"duplicate parent for node {i}")
            for j in pa:
                if j == i:
                    raise ValueError(f"node {i} cannot be its own parent")
                if not 0 <= j < d:
                    raise ValueError(f"parent {j} of node {i} out of range")

    @property
    def d(self) -> int:
        return len(self.parents)

    def n_parents(self, i: int) -> int:
        return len(self.parents[i])

    def edges(self) -> list:
        """All directed edges as (parent, child) pairs, child-major order."""
        return [(j, i) for i, pa in enumerate(self.parents) for j in pa]

    @staticmethod
    def complete(d: int) -> "Graph":
        """Every node is a candidate parent of every other node."""
        return Graph(tuple(tuple(j for j in range(d) if j != i) for i in range(d)))

    @staticmethod
    def empty(d: int) -> "Graph":
        return Graph(tuple(() for _ in range(d)))


class CoefficientTensor:
    """Log-linear coefficients for every node, own state, and source row.

    ``beta[i]`` has shape ``(2, P_i + 1, m)``: axis 0 is the node's own
    state, axis 1 indexes the baseline row (0) followed by the node's
    candidate parents in graph order, axis 2 the covariates.  The slice
    ``beta[i][s, k, :]`` with ``k >= 1`` is the coefficient group attached to
    the directed dependency ``parents[i][k-1] -> i`` for own state ``s``;
    these groups are what structure learning can zero out.
    """

    __slots__ = ("graph", "m", "beta")

    def __init__(self, graph: Graph, m: int, beta=None):
        if m < 1:
            raise ValueError("need at least the intercept covariate (m >= 1)")
        self.graph = graph
        self.m = int(m)
        if beta is None:
            beta = [np.zeros((2, graph.n_parents(i) + 1, m)) for i in range(graph.d)]
        else:
            beta = [np.asarray(b, dtype=float) for b in beta]
            if len(beta) != graph.d:
                raise ValueError("coefficient list length does not match node count")
            for i, b in enumerate(beta):
                want = (2, graph.n_parents(i) + 1, m)
                if b.shape != want:
                    raise ValueError(f"node {i}: coefficient shape {b.shape}, expected {want}")
                if not np.all(np.isfinite(b)):
                    raise ValueError(f"node {i}: non-finite coefficient")
        self.beta = beta

    @classmethod
    def zeros(cls, graph: Graph, m: int) -> "CoefficientTensor":
        return cls(graph, m)

    def copy(self) -> "CoefficientTensor":
        return CoefficientTensor(self.graph, self.m, [b.copy() for b in self.beta])

    @property
    def n_params(self) -> int:
        return sum(b.size for b in self.beta)

    def group(self, i: int, s: int, k: int) -> np.ndarray:
        return self.beta[i][s, k]

    def group_norm(self, i: int, s: int, k: int) -> float:
        return float(np.linalg.norm(self.beta[i][s, k]))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([b.ravel() for b in self.beta])

    @classmethod
    def from_vector(cls, graph: Graph, m: int, vec) -> "CoefficientTensor":
        vec = np.asarray(vec, dtype=float)
        beta, pos = [], 0
        for i in range(graph.d):
            shape = (2, graph.n_parents(i) + 1, m)
            size = 2 * (graph.n_parents(i) + 1) * m
            beta.append(vec[pos:pos + size].reshape(shape).copy())
            pos += size
        if pos != vec.size:
            raise ValueError("vector length does not match coefficient layout")
        return cls(graph, m, beta)

    def allclose(self, other: "CoefficientTensor", **kw) -> bool:
        return all(np.allclose(a, b, **kw) for a, b in zip(self.beta, other.beta))


@dataclass(frozen=True)
class ModelSpec:
    """A fully specified model: graph, coefficients, and reversibility.

    With ``irreversible=True`` (the chronic-condition convention) the 1->0
    flip intensity is structurally zero: conditions persist once present.
    Instances are immutable after construction and safe to share across
    threads.
    """

    graph: Graph
    coeffs: CoefficientTensor
    irreversible: bool = True

    def __post_init__(self):
        if self.coeffs.graph.parents != self.graph.parents:
            raise ValueError("coefficient tensor was built for a different graph")

    @property
    def d(self) -> int:
        return self.graph.d

    @property
    def m(self) -> int:
        return self.coeffs.m


def _check_covariates(z, m: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (m,):
        raise ValueError(f"covariate vector has shape {z.shape}, model expects ({m},)")
    if not np.all(np.isfinite(z)):
        raise ValueError("covariate vector has non-finite entries")
    if z[0] != 1.0:
        raise ValueError("covariate vector must carry the intercept (z[0] == 1.0)")
    return z


def intensity(spec: ModelSpec, i: int, state, z) -> float:
    """Rate (per month) at which node ``i`` flips out of its current state.

    The log rate is the baseline row for the node's own state plus one row
    per parent that is ON in ``state``, each dotted with ``z``; parent
    effects therefore multiply on the rate scale.  Structurally zero (0.0)
    when the model is irreversible and the node is already ON.
    """
    if not 0 <= i < spec.d:
        raise IndexError(f"node index {i} out of range for {spec.d} nodes")
    z = _check_covariates(z, spec.m)
    s = int(state[i])
    if spec.irreversible and s == 1:
        return 0.0
    b = spec.coeffs.beta[i]
    eta = float(z @ b[s, 0])
    for k, j in enumerate(spec.graph.parents[i], start=1):
        if state[j]:
            eta += float(z @ b[s, k])
    return math.exp(eta)


def flip_rate_table(spec: ModelSpec, z) -> np.ndarray:
    """Flip intensities for every joint state, shape ``(2**d, d)``.

    Joint states are indexed with bit ``i`` of the row index holding node
    ``i``'s state.  Used by the exact sampler and by amalgamation; both see
    exactly the same rates as :func:`intensity`.
    """
    z = _check_covariates(z, spec.m)
    d = spec.d
    idx = np.arange(2 ** d)
    table = np.empty((2 ** d, d))
    for i in range(d):
        b = spec.coeffs.beta[i]
        pa = spec.graph.parents[i]
        p = len(pa)
        # per-row covariate contractions, then subset sums over parent configs
        zc = b @ z                      # (2, p + 1)
        eta_cfg = np.zeros((2, 2 ** p))
        for cfg in range(2 ** p):
            e = zc[:, 0].copy()
            for k in range(p):
                if cfg >> k & 1:
                    e += zc[:, k + 1]
            eta_cfg[:, cfg] = e
        s_i = idx >> i & 1
        cfg_i = np.zeros_like(idx)
        for k, j in enumerate(pa):
            cfg_i |= (idx >> j & 1) << k
        rates = np.exp(eta_cfg[s_i, cfg_i])
        if spec.irreversible:
            rates[s_i == 1] = 0.0
        table[:, i] = rates
    return table


def structure_from_coefficients(coeffs: CoefficientTensor, tol: float = 0.0) -> Graph:
    """Graph whose edges are the coefficient groups with any entry above
    ``tol`` in absolute value (either own state counts)."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    parents = []
    for i in range(coeffs.graph.d):
        pa = coeffs.graph.parents[i]
        keep = tuple(
            j for k, j in enumerate(pa, start=1)
            if np.abs(coeffs.beta[i][:, k, :]).max() > tol
        )
        parents.append(keep)
    return Graph(tuple(parents))


def model_to_dict(spec: ModelSpec) -> dict:
    return {
        "d": spec.d,
        "m": spec.m,
        "irreversible": spec.irreversible,
        "parents": [list(pa) for pa in spec.graph.parents],
        "beta": [b.tolist() for b in spec.coeffs.beta],
    }


def model_from_dict(doc: dict) -> ModelSpec:
    graph = Graph(tuple(tuple(pa) for pa in doc["parents"]))
    if graph.d != doc["d"]:
        raise ValueError("model document: parent list length disagrees with d")
    coeffs = CoefficientTensor(graph, int(doc["m"]), doc["beta"])
    return ModelSpec(graph=graph, coeffs=coeffs, irreversible=bool(doc["irreversible"]))


def model_to_json(spec: ModelSpec) -> str:
    """Serialize to the model JSON document (floats at 17 significant
    digits, so the round trip is bit exact)."""
    from .jsonutil import dump_json

    return dump_json(model_to_dict(spec))


def model_from_json(text: str) -> ModelSpec:
    from .jsonutil import load_json

    return model_from_dict(load_json(text))
