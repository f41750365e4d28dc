"""Readers and writers for states, operators, field snapshots and reports."""

import csv
import json
from pathlib import Path

import numpy as np

from .inference import HermitianOperator, StateVector
from .pauli import PauliString

SCHEMA_VERSION = 1
CSV_FORMAT = "{:.17g}"


def _complex_entries(data, name):
    arr = np.asarray(data, dtype=float)
    if arr.shape[-1:] == (2,):
        return arr[..., 0] + 1j * arr[..., 1]
    raise ValueError(f"{name} entries must be [re, im] pairs, got shape {arr.shape}")


def _read(source):
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            return json.load(fh)
    return source


def load_state(source):
    """State from a JSON file or dict: ``{"amplitudes": [[re, im], ...], "basis": [...]}``.

    Amplitudes may also be plain reals.  The vector is normalised on load.
    """
    data = _read(source)
    amps = data["amplitudes"]
    arr = np.asarray(amps, dtype=float)
    values = arr if arr.ndim == 1 else _complex_entries(amps, "amplitudes")
    return StateVector.normalized(values, data.get("basis"))


def dump_state(state):
    return {
        "schema": SCHEMA_VERSION,
        "amplitudes": [[float(z.real), float(z.imag)] for z in state.amplitudes],
        "basis": list(state.basis),
    }


def load_operator(source):
    """Operator from ``{"matrix": [[[re, im], ...], ...]}`` or ``{"pauli": "ZX"}``."""
    data = _read(source)
    if "pauli" in data:
        return HermitianOperator(PauliString.parse(data["pauli"]).to_matrix())
    mat = data["matrix"]
    arr = np.asarray(mat, dtype=float)
    values = arr if arr.ndim == 2 else _complex_entries(mat, "matrix")
    return HermitianOperator(values)


def dump_operator(op):
    return {
        "schema": SCHEMA_VERSION,
        "matrix": [[[float(z.real), float(z.imag)] for z in row] for row in op.matrix],
    }


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return str(obj)


def dumps_report(report):
    payload = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    payload.setdefault("schema", SCHEMA_VERSION)
    return json.dumps(payload, sort_keys=True, indent=2, default=_jsonable) + "\n"


def write_json(path, report):
    path = Path(path)
    path.write_text(dumps_report(report))
    return path


def write_csv(path, header, rows):
    """CSV with every float at 17 significant digits (round-trip exact)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([CSV_FORMAT.format(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_snapshot(path, rho, phi, psi):
    """Field snapshot with columns x, rho, phi, re_psi, im_psi."""
    grid = rho.grid
    rows = zip(
        grid.x.tolist(),
        rho.values.tolist(),
        phi.values.tolist(),
        psi.values.real.tolist(),
        psi.values.imag.tolist(),
    )
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {SCHEMA_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "rho", "phi", "re_psi", "im_psi"])
        for row in rows:
            writer.writerow([CSV_FORMAT.format(v) for v in row])
    return path


def read_snapshot(path):
    with open(path) as fh:
        first = fh.readline().strip()
        if first != f"# schema: {SCHEMA_VERSION}":
            raise ValueError(f"unsupported snapshot header {first!r}")
        data = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(["x", "rho", "phi", "re_psi", "im_psi"])}
