"""Scenario configs (strict schemas) and the runners that execute them."""

import logging
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import contextuality as ctx
from . import evolution as ev
from . import inference as inf
from . import kernel as kern
from .io import load_operator, load_state, write_csv, write_json, write_snapshot
from .pauli import PauliString

logger = logging.getLogger(__name__)

OUTPUT_ENV = "EDLAB_OUTPUT_DIR"
DEFAULT_OUTPUT = "edlab-output"


class ConfigError(ValueError):
    """Invalid scenario config; ``path`` names the offending key."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---- shared blocks ---------------------------------------------------------


def _resolve_file(value, info):
    """Relative ``file`` entries are taken relative to the config file's directory."""
    if value is None:
        return value
    base = (info.context or {}).get("base")
    path = Path(value)
    if base is not None and not path.is_absolute():
        path = Path(base) / path
    if not path.is_file():
        raise ValueError(f"no such file: {path}")
    return str(path)


class DriftBlock(_Strict):
    kind: Literal["constant", "linear", "quadratic"] = "constant"
    value: float = 0.0
    k: Union[float, List[float]] = 0.0
    c: float = 1.0

    def build(self):
        if self.kind == "constant":
            return kern.Drift.constant(self.value)
        if self.kind == "linear":
            return kern.Drift.linear(self.k)
        return kern.Drift.quadratic(self.c)


class GridBlock(_Strict):
    x_min: float
    x_max: float
    n_points: int = Field(ge=8)

    @model_validator(mode="after")
    def _check(self):
        ev.Grid1D(self.x_min, self.x_max, self.n_points)
        return self


class PotentialBlock(_Strict):
    kind: Literal["free", "harmonic"] = "free"
    omega: float = Field(1.0, gt=0)
    center: float = 0.0


class PacketBlock(_Strict):
    center: float = 0.0
    sigma: float = Field(1.0, gt=0)
    momentum: float = 0.0


class StateBlock(_Strict):
    amplitudes: Optional[List[Union[float, Tuple[float, float]]]] = None
    file: Optional[str] = None
    random: Optional[int] = Field(None, ge=2)

    _file = field_validator("file")(_resolve_file)

    @model_validator(mode="after")
    def _one_source(self):
        given = [x is not None for x in (self.amplitudes, self.file, self.random)]
        if sum(given) != 1:
            raise ValueError("give exactly one of amplitudes, file, random")
        return self

    def build(self, rng):
        if self.random is not None:
            return inf.StateVector.random(self.random, rng)
        if self.file is not None:
            return load_state(self.file)
        return load_state({"amplitudes": [list(a) if isinstance(a, tuple) else a for a in self.amplitudes]})


class OperatorBlock(_Strict):
    pauli: Optional[str] = None
    matrix: Optional[list] = None
    file: Optional[str] = None

    _file = field_validator("file")(_resolve_file)

    @model_validator(mode="after")
    def _one_source(self):
        if sum(x is not None for x in (self.pauli, self.matrix, self.file)) != 1:
            raise ValueError("give exactly one of pauli, matrix, file")
        if self.pauli is not None:
            PauliString.parse(self.pauli)
        return self

    def build(self):
        if self.pauli is not None:
            return load_operator({"pauli": self.pauli})
        if self.file is not None:
            return load_operator(self.file)
        return load_operator({"matrix": self.matrix})


class TableBlock(_Strict):
    builtin: Optional[Literal["mermin", "star"]] = None
    text: Optional[str] = None
    file: Optional[str] = None

    _file = field_validator("file")(_resolve_file)

    @model_validator(mode="after")
    def _one_source(self):
        if sum(x is not None for x in (self.builtin, self.text, self.file)) > 1:
            raise ValueError("give at most one of builtin, text, file")
        return self

    def build(self):
        if self.text is not None:
            return ctx.load_table_text(self.text)
        if self.file is not None:
            return ctx.load_table_text(Path(self.file).read_text())
        return ctx.mermin_star() if self.builtin == "star" else ctx.mermin_square()


# ---- per-kind parameter blocks --------------------------------------------


class SampleParams(_Strict):
    """Kernel moments and ensemble spreading."""

    masses: List[float] = [1.0]
    eta: float = Field(1.0, gt=0)
    dt: float = Field(0.01, gt=0)
    dim: Literal[1, 2, 3] = 3
    drift: DriftBlock = DriftBlock()
    x: Optional[List[float]] = None
    n_samples: int = Field(100000, ge=100)
    ensemble_size: int = Field(1000, ge=1)
    ensemble_steps: int = Field(10, ge=0)

    @field_validator("masses")
    @classmethod
    def _positive(cls, v):
        if not v or any(m <= 0 for m in v):
            raise ValueError("masses must be a nonempty list of positive numbers")
        return v

    @model_validator(mode="after")
    def _coords(self):
        if self.x is not None and len(self.x) != self.dim * len(self.masses):
            raise ValueError(f"x needs {self.dim * len(self.masses)} coordinates")
        return self


class EvolveParams(_Strict):
    """(rho, Phi) evolution on a periodic grid."""

    grid: GridBlock
    mass: float = Field(1.0, gt=0)
    hbar: float = Field(1.0, gt=0)
    potential: PotentialBlock = PotentialBlock()
    initial: PacketBlock = PacketBlock()
    T: float = Field(1.0, ge=0)
    dt: Optional[float] = Field(None, gt=0)
    method: Literal["rk4", "symplectic_euler"] = "rk4"
    n_outputs: int = Field(10, ge=1)

    @field_validator("dt")
    @classmethod
    def _dt(cls, dt, info):
        d = info.data
        if dt is not None and all(k in d for k in ("grid", "mass", "hbar")):
            g = d["grid"]
            dx = (g.x_max - g.x_min) / g.n_points
            bound = ev.STABILITY_CONSTANT * d["mass"] * dx**2 / d["hbar"]
            if dt > bound:
                raise ValueError(f"dt={dt} exceeds the stability bound {bound:.6g}")
        return dt


class LikelihoodBlock(_Strict):
    kind: Literal["sharp", "uniform", "gaussian"] = "sharp"
    sigma: float = Field(0.1, gt=0)
    bin_edges: Optional[List[float]] = None


class MeasureParams(_Strict):
    """Pointer device, detection sampling and Bayesian inference of an observable."""

    state: StateBlock
    operator: OperatorBlock
    cell_positions: Optional[List[float]] = None
    scalars: Optional[List[float]] = None
    likelihood: LikelihoodBlock = LikelihoodBlock()
    prior: Literal["uniform", "born"] = "uniform"
    n_detections: int = Field(1000, ge=1)

    @model_validator(mode="after")
    def _bins(self):
        if self.likelihood.kind == "gaussian":
            if self.cell_positions is None or self.likelihood.bin_edges is None:
                raise ValueError("gaussian likelihood needs cell_positions and likelihood.bin_edges")
        return self


class WeakParams(_Strict):
    """Weak value of an operator between pre- and post-selected states."""

    pre: StateBlock
    post: StateBlock
    operator: OperatorBlock


class KSParams(_Strict):
    """Exhaustive valuation search and parity certificate."""

    table: TableBlock = TableBlock()


class HybridParams(_Strict):
    """Position valuations of every cell and context product."""

    table: TableBlock = TableBlock()
    x0: Optional[List[int]] = None


class ContextParams(_Strict):
    """Context selection: joint eigenbasis -> pointer device -> distribution."""

    table: TableBlock = TableBlock()
    state: StateBlock = StateBlock(random=4)
    contexts: Optional[List[int]] = None


PARAMS = {
    "sample": SampleParams,
    "evolve": EvolveParams,
    "compare": EvolveParams,
    "measure": MeasureParams,
    "weak": WeakParams,
    "ks": KSParams,
    "hybrid": HybridParams,
    "context": ContextParams,
}

DESCRIPTIONS = {
    "sample": "max-ent Gaussian transition kernel: Monte-Carlo check of the variance and drift constraints",
    "evolve": "Hamilton equations for (rho, Phi) with the ensemble Hamiltonian; field snapshots",
    "compare": "Schrodinger equivalence: (rho, Phi) flow against a split-step Fourier reference",
    "measure": "unitary pointer device, Bayesian detection update and inferred observable",
    "weak": "weak value <post|A|pre>/<post|pre>, flagged when it leaves the eigenvalue spectrum",
    "ks": "Peres-Mermin parity contradiction: exhaustive valuation search and sign certificate",
    "hybrid": "position valuations v_x of cells and context products; functional-relation check",
    "context": "context selection: device for one row/column, pointer probabilities vs projectors",
}


class ScenarioConfig(_Strict):
    scenario: Literal["sample", "evolve", "compare", "measure", "weak", "ks", "hybrid", "context"]
    seed: int = Field(0, ge=0, lt=2**64)
    output_dir: Optional[str] = None
    label: Optional[str] = None
    params: dict = {}


def _error_path(err, prefix=()):
    first = err.errors()[0]
    loc = ".".join(str(p) for p in prefix + tuple(first["loc"])) or "<root>"
    return loc, first["msg"]


def parse_config(data, base=None):
    """Validate a raw mapping; returns (ScenarioConfig, params model)."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(*_error_path(err)) from None
    try:
        params = PARAMS[cfg.scenario].model_validate(cfg.params or {}, context={"base": base})
    except ValidationError as err:
        raise ConfigError(*_error_path(err, ("params",))) from None
    return cfg, params


def load_config(path):
    import yaml

    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError("<file>", f"not valid YAML: {err}") from None
    return parse_config(data, base=Path(path).parent)


def builtin_config_path(kind):
    path = Path(__file__).parent / "scenarios" / f"{kind}.yaml"
    if not path.exists():
        raise ConfigError("scenario", f"no bundled example for {kind!r}")
    return path


def catalog():
    """Deterministic text listing of every scenario kind and its parameters."""
    lines = []
    for kind, model in PARAMS.items():
        lines.append(f"{kind}: {DESCRIPTIONS[kind]}")
        _describe(model, lines, "    ")
    return "\n".join(lines) + "\n"


def _describe(model, lines, indent):
    for name, fld in model.model_fields.items():
        tp = fld.annotation
        if isinstance(tp, type) and issubclass(tp, BaseModel):
            lines.append(f"{indent}{name}:")
            _describe(tp, lines, indent + "    ")
            continue
        default = "required" if fld.is_required() else f"default={fld.get_default(call_default_factory=True)!r}"
        lines.append(f"{indent}{name}: {_type_name(tp)} ({default})")


def _type_name(tp):
    if isinstance(tp, type):
        return tp.__name__
    return str(tp).replace("typing.", "")


# ---- runners ----------------------------------------------------------------


def _grid_spec(p):
    grid = ev.Grid1D(p.grid.x_min, p.grid.x_max, p.grid.n_points)
    if p.potential.kind == "harmonic":
        pot = ev.harmonic_potential(grid, p.mass, p.potential.omega, p.potential.center)
    else:
        pot = np.zeros(grid.n_points)
    spec = ev.HamiltonianSpec.with_hbar(p.mass, pot, p.hbar)
    rho, phi = ev.gaussian_packet(grid, p.initial.center, p.initial.sigma, p.initial.momentum, spec.hbar)
    return grid, spec, rho, phi


def run_sample(p, seed, out):
    params = kern.KernelParams(np.array(p.masses), p.eta, p.dt, p.drift.build())
    n = len(p.masses)
    coords = np.zeros(p.dim * n) if p.x is None else np.array(p.x)
    x = kern.Configuration(coords, n, p.dim)
    report = kern.verify_constraints(params, x, p.n_samples, seed)
    write_json(out / "moments.json", report)
    ensemble = [x] * p.ensemble_size
    final = kern.evolve_ensemble(params, ensemble, p.ensemble_steps, seed)
    header = [f"x{i}" for i in range(coords.size)]
    write_csv(out / "ensemble.csv", header, ([float(v) for v in m.coords] for m in final))
    spread = np.var([m.coords for m in final], axis=0, ddof=1)
    return f"sample: constraints {'pass' if report.passed else 'FAIL'}, kappa_prime={report.kappa_prime:.6g}, ensemble variance={spread.mean():.6g}"


def run_evolve(p, seed, out):
    grid, spec, rho, phi = _grid_spec(p)
    dt = p.dt or ev.stability_bound(grid, spec)
    n_steps = int(np.ceil(p.T / dt - 1e-9)) if p.T > 0 else 0
    dt = p.T / n_steps if n_steps else dt
    outputs = set(np.unique(np.round(np.linspace(0, n_steps, p.n_outputs + 1)).astype(int)).tolist())
    e0 = ev.ensemble_hamiltonian(rho, phi, spec)
    rows, max_norm = [], 0.0

    def snap(i):
        psi = ev.to_wavefunction(rho, phi, spec)
        write_snapshot(out / f"snapshot_{i:07d}.csv", rho, phi, psi)
        rows.append([i * dt, ev.ensemble_hamiltonian(rho, phi, spec), rho.mean(), rho.width()])

    snap(0)
    for i in range(1, n_steps + 1):
        rho, phi, stats = ev.hamilton_step(rho, phi, spec, dt, method=p.method, return_stats=True)
        max_norm = max(max_norm, abs(stats.renormalization))
        if i in outputs:
            snap(i)
    write_csv(out / "series.csv", ["t", "energy", "mean", "width"], rows)
    drift = abs(rows[-1][1] - e0) / max(abs(e0), 1e-300)
    write_json(
        out / "evolve.json",
        {"n_steps": n_steps, "dt": dt, "method": p.method, "energy_drift": drift, "norm_drift": max_norm},
    )
    return f"evolve: {n_steps} steps, relative energy drift={drift:.3e}, max norm drift={max_norm:.3e}"


def run_compare(p, seed, out):
    grid, spec, rho, phi = _grid_spec(p)
    dt = p.dt or ev.stability_bound(grid, spec)
    report = ev.evolve_compare(rho, phi, spec, p.T, dt, method=p.method, n_outputs=p.n_outputs)
    write_json(out / "compare.json", report)
    rows = zip(
        report.times, report.l2_distance, report.linf_distance, report.density_l2,
        report.width_ed, report.width_reference,
    )
    write_csv(
        out / "compare.csv",
        ["t", "l2_distance", "linf_distance", "density_l2", "width_ed", "width_reference"],
        ([float(v) for v in r] for r in rows),
    )
    r_ed, p_ed = report.final_ed
    write_snapshot(out / "final_ed.csv", r_ed, p_ed, ev.to_wavefunction(r_ed, p_ed, spec))
    return f"compare: max relative L2 distance={max(report.l2_distance):.3e}, final={report.l2_distance[-1]:.3e}"


def _likelihood(p, cells):
    lk = p.likelihood
    if lk.kind == "sharp":
        return inf.Likelihood.sharp(cells)
    if lk.kind == "uniform":
        return inf.Likelihood.uniform(cells)
    if len(p.cell_positions) != len(cells):
        raise ConfigError("params.cell_positions", f"need {len(cells)} positions")
    return inf.Likelihood.gaussian_binned(cells, p.cell_positions, lk.bin_edges, lk.sigma)


def run_measure(p, seed, out):
    rng = np.random.default_rng(seed)
    state = p.state.build(rng)
    op = p.operator.build()
    if op.dim != state.dim:
        raise ValueError(f"operator dimension {op.dim} does not match state dimension {state.dim}")
    cells = tuple(f"x{i}" for i in range(op.dim))
    device = inf.PointerDevice.for_operator(op, cells)
    scalars = np.array(p.scalars if p.scalars is not None else op.eigenvalues, dtype=float)
    if scalars.size != op.dim:
        raise ConfigError("params.scalars", f"need {op.dim} values")
    pointer = inf.apply_device(state, device)
    like = _likelihood(p, cells)
    hits = rng.choice(len(cells), size=p.n_detections, p=pointer.probabilities)
    detections = [like.outcomes[rng.choice(len(like.outcomes), p=like.table[:, h])] for h in hits]
    prior = pointer if p.prior == "born" else None
    report = inf.infer_observable(detections, device, scalars, like, prior=prior)
    expected = float(scalars @ pointer.probabilities)
    write_json(
        out / "measure.json",
        {
            "born": inf.born_probabilities(state, op).to_dict(),
            "pointer": pointer.to_dict(),
            "cell_posterior": report.cell_posterior.to_dict(),
            "inferred_value": report.value,
            "expected_value": expected,
            "n_detections": p.n_detections,
            "cell_positions": p.cell_positions,
        },
    )
    return f"measure: inferred value={report.value:.6g} (Born expectation {expected:.6g})"


def run_weak(p, seed, out):
    rng = np.random.default_rng(seed)
    pre, post = p.pre.build(rng), p.post.build(rng)
    op = p.operator.build()
    aw = inf.weak_value(pre, post, op)
    lo, hi = float(op.eigenvalues.min()), float(op.eigenvalues.max())
    outside = not (lo - 1e-12 <= aw.real <= hi + 1e-12) or abs(aw.imag) > 1e-12
    write_json(
        out / "weak.json",
        {
            "weak_value": [aw.real, aw.imag],
            "magnitude": abs(aw),
            "overlap": abs(np.vdot(post.amplitudes, pre.amplitudes)),
            "spectrum": [lo, hi],
            "outside_spectrum": outside,
        },
    )
    return f"weak: A_w={aw.real:.6g}{aw.imag:+.6g}i, |A_w|={abs(aw):.6g}, outside spectrum={outside}"


def run_ks(p, seed, out):
    table = p.table.build()
    search = ctx.valuation_search(table)
    payload = search.to_dict()
    payload["cells"] = [str(c) for c in table.cells]
    payload["grand_sign"] = int(np.prod(search.signs))
    try:
        payload["certificate"] = ctx.parity_certificate(table).to_dict()
    except ctx.NotAParityProofError as err:
        payload["certificate"] = {"verdict": "not a parity proof", "reason": str(err)}
    write_json(out / "ks.json", payload)
    return f"ks: satisfying: {len(search.satisfying)} of {search.n_assignments}, grand_sign: {payload['grand_sign']}"


def run_hybrid(p, seed, out):
    table = p.table.build()
    dim = 2**table.n_qubits
    xs = p.x0 if p.x0 is not None else list(range(dim))
    reports = [ctx.hybrid_check(table, x0) for x0 in xs]
    write_json(out / "hybrid.json", {"reports": [r.to_dict() for r in reports]})
    n_viol = min(len(r.violations) for r in reports)
    return f"hybrid: every x0 has >= {n_viol} violated contexts; min square product {min(r.square_product for r in reports):.3g}"


def run_context(p, seed, out):
    rng = np.random.default_rng(seed)
    table = p.table.build()
    state = p.state.build(rng)
    ks = p.contexts if p.contexts is not None else list(range(len(table.contexts)))
    results, worst = [], 0.0
    for k in ks:
        dist = ctx.context_selection_pipeline(state, table, k)
        oracle = projector_born(state, table, k)
        dev = max(abs(p_ - oracle.get(cell.values, 0.0)) for cell, p_ in dist.as_dict().items())
        worst = max(worst, dev)
        results.append(
            {
                "context": table.context_names[k],
                "cells": [str(c) for c in dist.labels],
                "probabilities": dist.probabilities.tolist(),
                "max_projector_deviation": dev,
            }
        )
    write_json(out / "context.json", {"results": results, "max_deviation": worst})
    return f"context: {len(ks)} contexts, max deviation from projector Born rule={worst:.3e}"


def projector_born(state, table, k):
    """Born probability of each joint eigenvalue tuple via prod_j (1 + s_j A_j)/2."""
    members = [c.to_matrix() for c in table.members(k)]
    d = members[0].shape[0]
    a = state.amplitudes
    out = {}
    for signs in np.ndindex(*(2,) * len(members)):
        s = tuple(1.0 if b == 0 else -1.0 for b in signs)
        proj = np.eye(d, dtype=complex)
        for sj, m in zip(s, members):
            proj = proj @ (np.eye(d) + sj * m) / 2
        prob = float(np.real(np.vdot(a, proj @ a)))
        if prob > 1e-15 or np.linalg.norm(proj) > 1e-12:
            out[s] = prob
    return out


RUNNERS = {
    "sample": run_sample,
    "evolve": run_evolve,
    "compare": run_compare,
    "measure": run_measure,
    "weak": run_weak,
    "ks": run_ks,
    "hybrid": run_hybrid,
    "context": run_context,
}


def output_directory(cfg, base=None):
    import os
    import time

    root = Path(base or cfg.output_dir or os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))
    label = cfg.label or time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    return root / cfg.scenario / label


def run(cfg, params, base=None):
    """Execute a validated scenario; returns (summary line, artifact directory)."""
    out = output_directory(cfg, base)
    out.mkdir(parents=True, exist_ok=True)
    summary = RUNNERS[cfg.scenario](params, cfg.seed, out)
    logger.info(summary)
    return summary, out
