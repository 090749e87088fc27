"""Dwell-segment decomposition, sufficient statistics, and the log-linear
transition likelihood with its exact gradient.

Every subject/node timeline is cut wherever the node itself or one of its
parents flips; each piece is a :class:`Segment` with a dwell time and a flag
for whether it ended with the node's own flip.  A segment with summed
coefficient row ``b`` (baseline plus ON-parent rows) and covariates ``z``
contributes

    terminated * (z . b) - dwell * exp(z . b)

to the log likelihood, i.e. right-censored pieces (window end or a parent
flip) contribute only the survival term.  The function is concave in the
coefficients; the gradient adds ``(terminated - dwell * exp(z . b)) * z`` to
every participating row.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .model import CoefficientTensor, Graph
from .simulate import Cohort

# Guard for early optimizer iterations: the exponent is clamped here before
# exponentiation.  Occurrences are counted in `exp_clamp_count`.
ETA_MAX = 50.0

exp_clamp_count = 0


@dataclass(frozen=True)
class Segment:
    """One constant-conditions dwell piece of a subject/node timeline.

    ``subject`` is the subject's position in the cohort; ``parent_mask`` has
    bit ``k`` set when the node's ``k``-th declared parent was ON.
    ``terminated`` is False for pieces cut short by the window end or by a
    parent flip.
    """

    subject: int
    node: int
    state: int
    parent_mask: int
    dwell: float
    terminated: bool

    @property
    def on_parents(self) -> tuple:
        return tuple(k for k in range(self.parent_mask.bit_length())
                     if self.parent_mask >> k & 1)


@dataclass
class SufficientStats:
    """Dwell times ``T`` and flip-out counts ``M`` per node, own state, and
    parent configuration; arrays are shaped ``(2, 2**P_i)`` per node."""

    T: list
    M: list


def decompose_segments(cohort: Cohort, graph: Graph) -> list:
    """Cut every subject/node timeline into constant-conditions segments.

    A node's timeline is cut at each of its own flips and at each flip of
    one of its parents; other events do not cut it.  Dwell times over a
    subject sum to the window length for every node.
    """
    d = graph.d
    watchers = [[] for _ in range(d)]   # watchers[j]: nodes whose segments j cuts
    for i in range(d):
        watchers[i].append(i)
        for j in graph.parents[i]:
            watchers[j].append(i)
    pos = {j: {i: k for k, i in enumerate(graph.parents[j])} for j in range(d)}
    segments = []
    for p, tr in enumerate(cohort.trajectories):
        if tr.d != d:
            raise ValueError(f"{tr.subject_id}: trajectory has {tr.d} nodes, graph has {d}")
        cur = [int(v) for v in tr.initial_state]
        mask = [sum(cur[j] << k for k, j in enumerate(graph.parents[i])) for i in range(d)]
        last = [tr.t0] * d
        for time, node, new_state in tr.events:
            if not 0 <= node < d:
                raise ValueError(f"{tr.subject_id}: event references unknown node {node}")
            for i in watchers[node]:
                dt = time - last[i]
                if dt > 0:
                    segments.append(Segment(p, i, cur[i], mask[i], dt, i == node))
                last[i] = time
            cur[node] = int(new_state)
            for i in watchers[node]:
                if i != node:
                    k = pos[i][node]
                    mask[i] = mask[i] & ~(1 << k) | int(new_state) << k
        for i in range(d):
            dt = tr.t_end - last[i]
            if dt > 0:
                segments.append(Segment(p, i, cur[i], mask[i], dt, False))
    return segments


def sufficient_stats(segments: list, graph: Graph) -> SufficientStats:
    T = [np.zeros((2, 2 ** graph.n_parents(i))) for i in range(graph.d)]
    M = [np.zeros((2, 2 ** graph.n_parents(i)), dtype=np.int64) for i in range(graph.d)]
    for seg in segments:
        T[seg.node][seg.state, seg.parent_mask] += seg.dwell
        if seg.terminated:
            M[seg.node][seg.state, seg.parent_mask] += 1
    return SufficientStats(T=T, M=M)


def mle_intensities(stats: SufficientStats) -> list:
    """Closed-form rate estimates ``M / T`` per cell.

    Cells never visited (``T == 0``) are flagged undefined as NaN rather
    than raised; ``M == 0`` with positive dwell gives a zero rate.
    """
    out = []
    for T, M in zip(stats.T, stats.M):
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(T > 0, M / np.where(T > 0, T, 1.0), np.nan)
        out.append(q)
    return out


class _NodeDesign:
    """Vectorized view of one node's segments, grouped by (state, mask)."""

    __slots__ = ("node", "z", "t", "term", "subj", "slices", "combo_state", "combo_rows")

    def __init__(self, node, z, t, term, subj, slices, combo_state, combo_rows):
        self.node = node
        self.z = z
        self.t = t
        self.term = term
        self.subj = subj
        self.slices = slices
        self.combo_state = combo_state
        self.combo_rows = combo_rows


def build_designs(cohort: Cohort, graph: Graph, irreversible: bool = False,
                  segments: list | None = None) -> list:
    """Group segments per node by (own state, parent mask) for fast repeated
    likelihood evaluation.  With ``irreversible`` the ON-state segments are
    dropped: their flip rate is structurally zero, so they contribute
    nothing and their coefficients stay pinned at zero."""
    if segments is None:
        segments = decompose_segments(cohort, graph)
    Z = cohort.covariates
    designs = []
    for i in range(graph.d):
        segs = [s for s in segments if s.node == i and not (irreversible and s.state == 1)]
        segs.sort(key=lambda s: (s.state, s.parent_mask))
        n = len(segs)
        z = np.empty((n, Z.shape[1] if n else 0))
        t = np.empty(n)
        term = np.empty(n)
        subj = np.empty(n, dtype=np.int64)
        slices, combo_state, combo_rows = [], [], []
        prev_key, start = None, 0
        for r, s in enumerate(segs):
            z[r] = Z[s.subject]
            t[r] = s.dwell
            term[r] = 1.0 if s.terminated else 0.0
            subj[r] = s.subject
            key = (s.state, s.parent_mask)
            if key != prev_key:
                if prev_key is not None:
                    slices.append((start, r))
                start, prev_key = r, key
                combo_state.append(s.state)
                rows = [0] + [k + 1 for k in range(s.parent_mask.bit_length())
                              if s.parent_mask >> k & 1]
                combo_rows.append(np.array(rows))
        if prev_key is not None:
            slices.append((start, n))
        designs.append(_NodeDesign(i, z, t, term, subj, slices, combo_state, combo_rows))
    return designs


def _value_and_grad(designs: list, coeffs: CoefficientTensor, cohort: Cohort,
                    want_grad: bool):
    global exp_clamp_count
    ll = 0.0
    grads = [np.zeros_like(b) for b in coeffs.beta] if want_grad else None
    clamped = 0
    for des in designs:
        b = coeffs.beta[des.node]
        for (start, stop), s, rows in zip(des.slices, des.combo_state, des.combo_rows):
            w = b[s, rows].sum(axis=0)
            zc = des.z[start:stop]
            eta = zc @ w
            over = eta > ETA_MAX
            if over.any():
                clamped += int(over.sum())
                eta = np.minimum(eta, ETA_MAX)
            ex = np.exp(eta)
            tc, termc = des.t[start:stop], des.term[start:stop]
            with np.errstate(over="ignore", invalid="ignore"):
                contrib = termc * eta - tc * ex
            piece = float(contrib.sum())
            if not np.isfinite(piece):
                bad = int(np.flatnonzero(~np.isfinite(contrib))[0]) + start
                sid = cohort.trajectories[int(des.subj[bad])].subject_id
                raise FloatingPointError(
                    f"non-finite likelihood at subject {sid}, node {des.node}, "
                    f"segment row {bad}")
            ll += piece
            if want_grad:
                g = zc.T @ (termc - tc * ex)
                for k in rows:
                    grads[des.node][s, k] += g
    if clamped:
        exp_clamp_count += clamped
        # static message so the default filter reports it once; the running
        # total lives in exp_clamp_count
        warnings.warn("segment exponents clamped during likelihood evaluation",
                      RuntimeWarning)
    return ll, grads


def log_likelihood(coeffs: CoefficientTensor, cohort: Cohort, graph: Graph,
                   irreversible: bool = False) -> float:
    """Total log likelihood of the cohort's segments under ``coeffs``."""
    designs = build_designs(cohort, graph, irreversible)
    ll, _ = _value_and_grad(designs, coeffs, cohort, want_grad=False)
    return ll


def gradient(coeffs: CoefficientTensor, cohort: Cohort, graph: Graph,
             irreversible: bool = False) -> CoefficientTensor:
    """Exact gradient of :func:`log_likelihood`, same layout as ``coeffs``."""
    designs = build_designs(cohort, graph, irreversible)
    _, grads = _value_and_grad(designs, coeffs, cohort, want_grad=True)
    return CoefficientTensor(graph, coeffs.m, grads)
