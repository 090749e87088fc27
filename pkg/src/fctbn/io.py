"""File formats: event/covariate CSVs, metadata, covariate encoding, PCA
reduction, and DOT graph export.

Cohort on disk
--------------
``events.csv``      header ``subject_id,time,node,new_state``; one row per
                    flip, times strictly increasing per subject.  Rows with
                    ``time == 0`` declare conditions already present at
                    baseline (initial state), not events.
``covariates.csv``  header ``subject_id,z0,z1,...``; encoded covariates with
                    the intercept in ``z0``.  The subject roster and its
                    order come from this file, so event-free subjects are
                    still part of the cohort.
``metadata.json``   ``{"d", "m", "horizon", "seed", "rng", ...}``.

Floats are written with 17 significant digits, so a write/load round trip
reproduces every value bit-exactly.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .jsonutil import dump_json, load_json
from .model import Graph
from .simulate import Cohort, Trajectory

F17 = ".17g"


def _fmt(x: float) -> str:
    return format(float(x), F17)


@dataclass
class RawEvents:
    """Events of one subject as parsed from disk, before a horizon and node
    count are known."""

    subject_id: str
    initial_on: list
    events: list


def load_events(path) -> list:
    """Parse and validate an events CSV; malformed rows are reported with
    their line number."""
    out: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "time", "node", "new_state"]:
            raise ValueError(f"{path}: unexpected events header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            sid = row[0]
            try:
                time = float(row[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad time {row[1]!r}") from None
            try:
                node = int(row[2])
                if node < 0:
                    raise ValueError
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: unknown node label {row[2]!r} "
                    f"(subject {sid})") from None
            if row[3] not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: new_state must be 0 or 1 (subject {sid})")
            state = int(row[3])
            rec = out.setdefault(sid, RawEvents(sid, [], []))
            if time == 0.0:
                if state != 1:
                    raise ValueError(
                        f"{path}:{lineno}: baseline row must have new_state=1 (subject {sid})")
                rec.initial_on.append(node)
                continue
            if time < 0:
                raise ValueError(f"{path}:{lineno}: negative time (subject {sid})")
            if rec.events:
                last = rec.events[-1][0]
                if time < last:
                    raise ValueError(
                        f"{path}:{lineno}: decreasing time for subject {sid} "
                        f"({time} after {last})")
                if time == last:
                    raise ValueError(
                        f"{path}:{lineno}: duplicate timestamp {time} for subject {sid}")
            rec.events.append((time, node, state))
    return list(out.values())


def write_events(path, cohort: Cohort) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "time", "node", "new_state"])
        for tr in cohort.trajectories:
            for node in np.flatnonzero(tr.initial_state):
                writer.writerow([tr.subject_id, "0", str(int(node)), "1"])
            for time, node, state in tr.events:
                writer.writerow([tr.subject_id, _fmt(time), str(node), str(state)])


def write_covariates(path, cohort: Cohort) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id"] + [f"z{j}" for j in range(cohort.m)])
        for sid, z in zip(cohort.subject_ids, cohort.covariates):
            writer.writerow([sid] + [_fmt(v) for v in z])


def write_cohort(directory, cohort: Cohort) -> dict:
    """Write events.csv, covariates.csv and metadata.json; returns the file
    map (relative name -> absolute path)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {
        "events.csv": directory / "events.csv",
        "covariates.csv": directory / "covariates.csv",
        "metadata.json": directory / "metadata.json",
    }
    write_events(files["events.csv"], cohort)
    write_covariates(files["covariates.csv"], cohort)
    files["metadata.json"].write_text(dump_json(cohort.meta))
    return files


def read_cohort(directory) -> Cohort:
    """Load a cohort written by :func:`write_cohort`."""
    directory = Path(directory)
    meta = load_json((directory / "metadata.json").read_text())
    d, horizon = int(meta["d"]), float(meta["horizon"])
    raw = {rec.subject_id: rec for rec in load_events(directory / "events.csv")}
    ids, rows = [], []
    with open(directory / "covariates.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "subject_id":
            raise ValueError(f"{directory}/covariates.csv: unexpected header")
        for row in reader:
            if not row:
                continue
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    trajectories = []
    for sid in ids:
        rec = raw.pop(sid, None)
        initial = np.zeros(d, dtype=np.uint8)
        events = []
        if rec is not None:
            for node in rec.initial_on:
                if node >= d:
                    raise ValueError(f"subject {sid}: unknown node label {node}")
                initial[node] = 1
            events = rec.events
        trajectories.append(Trajectory(subject_id=sid, t_end=horizon,
                                       initial_state=initial, events=events))
    if raw:
        missing = sorted(raw)[0]
        raise ValueError(f"subject {missing} has events but no covariate row")
    return Cohort(trajectories, np.array(rows), dict(meta))


def load_covariates(path, encoding: dict):
    """Load a raw covariate CSV and encode it.

    ``encoding`` maps column name to ``{"kind": "numeric"}`` or
    ``{"kind": "categorical", "levels": [...]}``.  Categorical columns are
    one-hot encoded with the first level dropped, numeric columns pass
    through, and an intercept column is prepended.

    Returns (subject_ids, matrix, column_names).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "subject_id":
            raise ValueError(f"{path}: first column must be subject_id")
        cols = header[1:]
        for name in cols:
            if name not in encoding:
                raise ValueError(f"{path}: column {name!r} missing from the encoding spec")
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            ids.append(row[0])
            encoded = [1.0]
            for name, value in zip(cols, row[1:]):
                spec = encoding[name]
                if spec["kind"] == "numeric":
                    encoded.append(float(value))
                elif spec["kind"] == "categorical":
                    levels = spec["levels"]
                    if value not in levels:
                        raise ValueError(
                            f"{path}:{lineno}: unknown category {value!r} for {name!r}")
                    encoded += [1.0 if value == lv else 0.0 for lv in levels[1:]]
                else:
                    raise ValueError(f"{name!r}: unknown column kind {spec['kind']!r}")
            rows.append(encoded)
    names = ["intercept"]
    for name in cols:
        spec = encoding[name]
        if spec["kind"] == "numeric":
            names.append(name)
        else:
            names += [f"{name}={lv}" for lv in spec["levels"][1:]]
    return ids, np.array(rows), names


def attach_covariates(cohort_ids, loaded):
    """Reorder a loaded covariate matrix to match a subject roster; raises
    naming the first subject without a row."""
    ids, matrix, names = loaded
    index = {sid: r for r, sid in enumerate(ids)}
    rows = []
    for sid in cohort_ids:
        if sid not in index:
            raise ValueError(f"no covariate row for subject {sid}")
        rows.append(matrix[index[sid]])
    return np.array(rows), names


@dataclass
class PcaModel:
    """Column-centered principal components of the non-intercept covariates.

    ``loadings`` rows are orthonormal; the sign convention makes each row's
    largest-magnitude entry positive, so fits are reproducible across
    implementations.
    """

    means: np.ndarray
    loadings: np.ndarray
    explained_variance_ratio: np.ndarray

    def transform(self, matrix) -> np.ndarray:
        """Apply the reduction to a matrix with intercept column 0."""
        matrix = np.asarray(matrix, dtype=float)
        body = matrix[:, 1:]
        reduced = (body - self.means) @ self.loadings.T
        return np.hstack([matrix[:, :1], reduced])

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "loadings": self.loadings.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "PcaModel":
        return PcaModel(
            means=np.asarray(doc["means"], dtype=float),
            loadings=np.asarray(doc["loadings"], dtype=float),
            explained_variance_ratio=np.asarray(doc["explained_variance_ratio"], dtype=float),
        )


def pca_fit_transform(matrix, n_components: int):
    """Reduce the covariate matrix (intercept in column 0) to
    ``n_components`` principal axes via an eigendecomposition of the
    covariance; the intercept is excluded from the reduction and re-attached.

    Returns (PcaModel, reduced matrix with intercept re-attached).
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] < 2:
        raise ValueError("need a 2-D matrix with at least one covariate beside the intercept")
    if not np.all(matrix[:, 0] == 1.0):
        raise ValueError("column 0 must be the intercept (all 1.0)")
    body = matrix[:, 1:]
    p = body.shape[1]
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if n_components > p:
        raise ValueError(f"n_components={n_components} exceeds {p} covariate columns")
    means = body.mean(axis=0)
    centered = body - means
    cov = np.cov(centered, rowvar=False, ddof=1).reshape(p, p)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.maximum(evals[order], 0.0)
    loadings = evecs[:, order].T[:n_components].copy()
    for row in loadings:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    total = evals.sum()
    ratio = evals[:n_components] / total if total > 0 else np.zeros(n_components)
    model = PcaModel(means=means, loadings=loadings, explained_variance_ratio=ratio)
    return model, model.transform(matrix)


def export_graph_dot(graph: Graph, strengths: dict | None = None) -> str:
    """Render the graph in DOT format, edge thickness scaled by strength.

    ``strengths`` maps (parent, child) to a nonnegative value; missing edges
    default to 1.0.  Output is deterministic (sorted nodes and edges).
    """
    strengths = strengths or {}
    for value in strengths.values():
        if value < 0:
            raise ValueError("edge strengths must be >= 0")
    edges = sorted(graph.edges())
    s_of = {e: float(strengths.get(e, 1.0)) for e in edges}
    s_max = max(s_of.values(), default=0.0)
    lines = ["digraph conditions {"]
    for i in range(graph.d):
        lines.append(f"  n{i};")
    for j, i in edges:
        width = 0.5 + 4.5 * (s_of[(j, i)] / s_max) if s_max > 0 else 1.0
        lines.append(f'  n{j} -> n{i} [penwidth={width:.3f}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_risk_curves(path, curves) -> None:
    """Risk-curve CSV: ``time_months,node,probability``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_months", "node", "probability"])
        for t, node, prob in curves.rows():
            writer.writerow([_fmt(t), str(node), _fmt(prob)])


def write_onset_table(path, nodes, horizons, table) -> None:
    """Onset-probability CSV: ``node,horizon_months,probability``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "horizon_months", "probability"])
        for r, node in enumerate(nodes):
            for c, h in enumerate(horizons):
                writer.writerow([str(node), _fmt(h), _fmt(table[r, c])])


def write_auc_report(path, cells) -> None:
    """AUC CSV: ``node,horizon_months,auc,n_pos,n_neg`` (NaN for degenerate
    cells)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "horizon_months", "auc", "n_pos", "n_neg"])
        for cell in cells:
            auc = "nan" if np.isnan(cell.auc) else _fmt(cell.auc)
            writer.writerow([str(cell.node), _fmt(cell.horizon), auc,
                             str(cell.n_pos), str(cell.n_neg)])


def load_score_table(path) -> dict:
    """Load an external predictor's scores: ``subject_id,time_months,node,
    probability`` rows keyed by (subject, node, horizon)."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "time_months", "node", "probability"]:
            raise ValueError(f"{path}: unexpected score header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields")
            key = (row[0], int(row[2]), float(row[1]))
            if key in out:
                raise ValueError(f"{path}:{lineno}: duplicate score for {key}")
            out[key] = float(row[3])
    return out
