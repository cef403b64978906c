"""Problem-file (JSON) and trace (CSV) input/output.

Problem documents hold either {"mpc": {...}} or {"qp": {...}}.  Matrices are
row-major nested arrays or triplet objects {"nrows", "ncols", "triplets":
[[i, j, v], ...]}.  Floats round-trip bit-exactly: emission uses Python's
shortest repr (at most 17 significant digits) and JSON parsing is exact.
Unknown fields are rejected.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .mpc import MpcProblem, SparseQP, riccati_solve
from .sparse import SparseMatrix

_MPC_REQUIRED = {"A", "B", "C", "D", "c", "d", "Q", "R", "N", "x0"}
_MPC_OPTIONAL = {"P"}
_QP_KEYS = {"Q_triplets", "E_triplets", "zl", "zu"}
_TRIPLET_KEYS = {"nrows", "ncols", "triplets"}


def _as_int(node, name):
    if isinstance(node, bool) or not isinstance(node, int):
        raise ValueError(f"{name} must be an integer")
    return node


def _vector(node, name):
    if not isinstance(node, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in node):
        raise ValueError(f"{name} must be a flat list of numbers")
    return np.asarray(node, dtype=float)


def _triplet_parts(node, name):
    if set(node) != _TRIPLET_KEYS:
        raise ValueError(f"{name}: triplet object must have keys {sorted(_TRIPLET_KEYS)}")
    nrows = _as_int(node["nrows"], f"{name}.nrows")
    ncols = _as_int(node["ncols"], f"{name}.ncols")
    rows, cols, vals = [], [], []
    for entry in node["triplets"]:
        if not (isinstance(entry, list) and len(entry) == 3):
            raise ValueError(f"{name}: each triplet must be [i, j, v]")
        i = _as_int(entry[0], f"{name} row index")
        j = _as_int(entry[1], f"{name} column index")
        if not 0 <= i < nrows or not 0 <= j < ncols:
            raise ValueError(f"{name}: triplet index ({i}, {j}) out of range")
        v = entry[2]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError(f"{name}: triplet value must be a number")
        rows.append(i)
        cols.append(j)
        vals.append(float(v))
    return nrows, ncols, rows, cols, vals


def _dense_matrix(node, name):
    """Dense matrix from nested row-major lists or a triplet object."""
    if isinstance(node, dict):
        nrows, ncols, rows, cols, vals = _triplet_parts(node, name)
        mat = np.zeros((nrows, ncols))
        mat[rows, cols] = vals
        return mat
    if not isinstance(node, list) or not node or not all(isinstance(r, list) for r in node):
        raise ValueError(f"{name} must be a nested array or a triplet object")
    width = len(node[0])
    for row in node:
        if len(row) != width or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
            raise ValueError(f"{name} must be rectangular and numeric")
    return np.asarray(node, dtype=float)


def _sparse_matrix(node, name) -> SparseMatrix:
    if not isinstance(node, dict):
        raise ValueError(f"{name} must be a triplet object")
    nrows, ncols, rows, cols, vals = _triplet_parts(node, name)
    kept = [(i, j, v) for i, j, v in zip(rows, cols, vals) if v != 0.0]
    mat = SparseMatrix.from_triplets(
        nrows, ncols,
        [t[0] for t in kept], [t[1] for t in kept], [t[2] for t in kept])
    if mat.nnz != len(kept):
        raise ValueError(f"{name} contains duplicate triplet positions")
    return mat


def problem_from_dict(doc) -> MpcProblem | SparseQP:
    if not isinstance(doc, dict) or len(doc) != 1 or next(iter(doc)) not in ("mpc", "qp"):
        raise ValueError('problem document must hold exactly one of "mpc" or "qp"')
    if "mpc" in doc:
        body = doc["mpc"]
        if not isinstance(body, dict):
            raise ValueError("mpc section must be an object")
        keys = set(body)
        unknown = keys - _MPC_REQUIRED - _MPC_OPTIONAL
        if unknown:
            raise ValueError(f"unknown mpc fields: {sorted(unknown)}")
        missing = _MPC_REQUIRED - keys
        if missing:
            raise ValueError(f"missing mpc fields: {sorted(missing)}")
        mats = {k: _dense_matrix(body[k], k) for k in ("A", "B", "C", "D", "Q", "R")}
        if "P" in body:
            mats["P"] = _dense_matrix(body["P"], "P")
        else:
            mats["P"] = riccati_solve(mats["A"], mats["B"], mats["Q"], mats["R"])
        return MpcProblem(
            c=_vector(body["c"], "c"), d=_vector(body["d"], "d"),
            N=_as_int(body["N"], "N"), x0=_vector(body["x0"], "x0"), **mats)
    body = doc["qp"]
    if not isinstance(body, dict):
        raise ValueError("qp section must be an object")
    if set(body) != _QP_KEYS:
        raise ValueError(f"qp section must have exactly the keys {sorted(_QP_KEYS)}")
    return SparseQP(
        Q=_sparse_matrix(body["Q_triplets"], "Q_triplets"),
        E=_sparse_matrix(body["E_triplets"], "E_triplets"),
        zl=_vector(body["zl"], "zl"),
        zu=_vector(body["zu"], "zu"),
    )


def _sparse_to_node(m: SparseMatrix):
    coo = m.to_scipy().tocoo()  # column-major entry order
    return {
        "nrows": int(m.nrows),
        "ncols": int(m.ncols),
        "triplets": [[int(i), int(j), float(v)]
                     for i, j, v in zip(coo.row, coo.col, coo.data)],
    }


def problem_to_dict(p) -> dict:
    if isinstance(p, MpcProblem):
        return {"mpc": {
            "A": p.A.tolist(), "B": p.B.tolist(), "C": p.C.tolist(), "D": p.D.tolist(),
            "c": p.c.tolist(), "d": p.d.tolist(),
            "Q": p.Q.tolist(), "R": p.R.tolist(), "P": p.P.tolist(),
            "N": int(p.N), "x0": p.x0.tolist(),
        }}
    if isinstance(p, SparseQP):
        return {"qp": {
            "Q_triplets": _sparse_to_node(p.Q),
            "E_triplets": _sparse_to_node(p.E),
            "zl": p.zl.tolist(),
            "zu": p.zu.tolist(),
        }}
    raise TypeError(f"cannot serialize {type(p).__name__}")


def load_problem(path) -> MpcProblem | SparseQP:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed JSON in {path}: {exc}") from exc
    return problem_from_dict(doc)


def save_problem(path, p) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(problem_to_dict(p), fh, separators=(",", ":"))
        fh.write("\n")


def write_solve_trace(path, trace) -> None:
    """Solver trace CSV: iter,primal_res,dual_res,k_updated,elapsed_s."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "primal_res", "dual_res", "k_updated", "elapsed_s"])
        for rec in trace:
            writer.writerow([rec.iteration, repr(rec.primal_res), repr(rec.dual_res),
                             int(rec.k_updated), repr(rec.elapsed_s)])


def write_solution(path, result) -> None:
    """Solution JSON {y, lambda, status, iterations}."""
    doc = {
        "y": [float(v) for v in result.y],
        "lambda": [float(v) for v in result.lam],
        "status": result.status.value,
        "iterations": int(result.iterations),
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")
