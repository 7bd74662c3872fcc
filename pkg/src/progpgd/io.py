"""File formats: dense tensors, separated tensors and convergence reports."""
from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import numpy as np

from .tensor_core import DenseTensor, RankOneTensor, SeparatedTensor, TensorSpace

REPORT_COLUMNS = ["m", "symbol", "J", "J_decrease", "z_norm", "euler_residual", "sigma",
                  "sweeps", "wall_ms"]


def fmt(x) -> str:
    """17 significant digits, round-trips a float64 exactly."""
    if x is None:
        return ""
    return format(float(x), ".17g")


# dense tensors -------------------------------------------------------------

def _header(dims):
    return "dims: " + ",".join(str(n) for n in dims)


def _parse_header(line: str):
    line = line.strip()
    if not line.startswith("dims:"):
        raise ValueError(f"missing 'dims:' header, got {line[:40]!r}")
    return tuple(int(s) for s in line[5:].split(","))


def save_dense(path, t: DenseTensor, binary: bool = False):
    """Header line ``dims: n1,...,nd`` then the row-major values.

    Text files hold one value per line; binary files hold little-endian
    float64 after the header line.
    """
    path = Path(path)
    head = _header(t.space.dims) + "\n"
    if binary:
        with open(path, "wb") as fh:
            fh.write(head.encode())
            fh.write(np.asarray(t.values, dtype="<f8").tobytes())
    else:
        with open(path, "w") as fh:
            fh.write(head)
            fh.writelines(fmt(x) + "\n" for x in t.values)


def load_dense(path, space: TensorSpace | None = None, binary: bool | None = None) -> DenseTensor:
    """Inverse of :func:`save_dense`; ``binary`` defaults to ``path`` ending in ``.bin``."""
    path = Path(path)
    if binary is None:
        binary = path.suffix == ".bin"
    with open(path, "rb") as fh:
        dims = _parse_header(fh.readline().decode())
        rest = fh.read()
    n = int(np.prod(dims))
    if binary:
        values = np.frombuffer(rest, dtype="<f8")
    else:
        values = np.array([float(s) for s in rest.decode().replace(",", " ").split()])
    if values.size != n:
        raise ValueError(f"{path}: header announces {n} values, found {values.size}")
    if space is None:
        space = TensorSpace(dims)
    elif space.dims != dims:
        raise ValueError(f"{path}: dims {dims} do not match space {space.dims}")
    return DenseTensor(space, values)


def load_matrix_csv(path) -> np.ndarray:
    """Dense row-major matrix, one comma-separated row per line."""
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


# separated tensors ---------------------------------------------------------

def separated_to_dict(v: SeparatedTensor) -> dict:
    return {
        "dims": list(v.space.dims),
        "coeffs": [float(c) for c in v.coeffs],
        "factors": [[[float(x) for x in f] for f in t.factors] for t in v.terms],
    }


def separated_from_dict(data: dict, space: TensorSpace | None = None) -> SeparatedTensor:
    dims = tuple(data["dims"])
    if space is None:
        space = TensorSpace(dims)
    elif space.dims != dims:
        raise ValueError(f"dims {dims} do not match space {space.dims}")
    terms = [RankOneTensor([np.array(f, float) for f in fs]) for fs in data["factors"]]
    return SeparatedTensor(space, terms, data["coeffs"])


def save_separated(path, v: SeparatedTensor):
    Path(path).write_text(json.dumps(separated_to_dict(v)) + "\n")


def load_separated(path, space: TensorSpace | None = None) -> SeparatedTensor:
    return separated_from_dict(json.loads(Path(path).read_text()), space)


# reports -------------------------------------------------------------------

def report_to_csv(report, timings: bool = False) -> str:
    """CSV text with :data:`REPORT_COLUMNS`.

    ``wall_ms`` is left empty unless ``timings`` is set, which keeps the file
    byte-identical between runs of the same configuration.
    """
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in report.records:
        w.writerow([r.m, r.symbol, fmt(r.J_value), fmt(r.J_decrease), fmt(r.z_norm),
                    fmt(r.euler_residual), fmt(r.sigma), r.sweeps_used,
                    fmt(1000 * r.wall_time) if timings else ""])
    return buf.getvalue()


def read_report_csv(path) -> list:
    """Rows of a report CSV as dicts with numeric fields converted."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != REPORT_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            out = {"m": int(row["m"]), "symbol": row["symbol"], "sweeps": int(row["sweeps"])}
            for key in ("J", "J_decrease", "z_norm", "euler_residual", "sigma", "wall_ms"):
                out[key] = float(row[key]) if row[key] != "" else None
            rows.append(out)
    return rows


def verify_report_rows(rows, J0: float, s: float, alpha: float, slack: float = 1e-10,
                       als_max_sweeps: int | None = None) -> list:
    """Re-check the per-iteration invariants on rows read back from CSV.

    Returns a list of human-readable violations (empty when all hold).
    """
    problems = []
    Js = [J0] + [r["J"] for r in rows]
    scale = max(max(abs(x) for x in Js), Js[0] - Js[-1], 1e-300)
    for i, r in enumerate(rows):
        if r["m"] != i + 1:
            problems.append(f"row {i}: step index {r['m']} is not contiguous")
        if r["symbol"] not in ("c", "l", "r"):
            problems.append(f"row {i}: bad symbol {r['symbol']!r}")
        dec = Js[i] - Js[i + 1]
        if dec < -1e-12 * scale:
            problems.append(f"m={r['m']}: J increased by {-dec:.3e}")
        if dec < alpha / s * r["z_norm"] ** s - slack * scale:
            problems.append(f"m={r['m']}: decrease {dec:.3e} below (alpha/s)||z||^s")
        converged = als_max_sweeps is None or r["sweeps"] < als_max_sweeps
        if converged and r["euler_residual"] > 1e-6 * (1 + abs(r["J"])):
            problems.append(f"m={r['m']}: Euler residual {r['euler_residual']:.3e}")
    return problems
