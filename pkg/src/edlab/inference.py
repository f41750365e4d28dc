"""Finite-dimensional states, pointer devices and Bayesian detection updates.

A pointer device is a unitary that sends the eigenvectors |a_i> of an
observable onto distinct pointer cells x_i (computational basis vectors of
the same space).  Detecting the pointer position and updating with a
likelihood q(D|x) is how every non-position quantity gets inferred here.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_complex_vector, as_square_matrix

logger = logging.getLogger(__name__)

NORM_TOL = 1e-12
EIGEN_TOL = 1e-10
HERMITIAN_REJECT_TOL = 1e-8


class ImpossibleDataError(ValueError):
    """The observed outcome has zero probability under the prior."""


def phase_fix(vectors, tol=EIGEN_TOL):
    """Make the first non-negligible component of each column real and positive."""
    out = np.array(vectors, dtype=complex)
    for j in range(out.shape[1]):
        col = out[:, j]
        idx = np.flatnonzero(np.abs(col) > tol)
        if idx.size:
            c = col[idx[0]]
            out[:, j] = col * (abs(c) / c)
    return out


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    basis: tuple = None

    def __post_init__(self):
        amps = as_complex_vector(self.amplitudes, "amplitudes")
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state norm is {norm!r}, expected 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        basis = tuple(range(amps.size)) if self.basis is None else tuple(self.basis)
        if len(basis) != amps.size:
            raise ValueError(f"basis has {len(basis)} labels for {amps.size} amplitudes")
        object.__setattr__(self, "basis", basis)

    @classmethod
    def normalized(cls, amplitudes, basis=None):
        amps = np.asarray(amplitudes, dtype=complex)
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise ValueError("cannot normalise the zero vector")
        return cls(amps / norm, basis)

    @classmethod
    def random(cls, dim, rng):
        z = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        return cls.normalized(z)

    @property
    def dim(self):
        return self.amplitudes.size


class HermitianOperator:
    """Hermitian matrix with a cached, deterministically ordered eigenbasis.

    Input is symmetrised as (A + A^dagger)/2; deviations up to 1e-8 are
    logged, larger ones are rejected.  Eigenvalues ascend and each
    eigenvector has its first non-negligible component real positive.
    """

    def __init__(self, matrix):
        m = as_square_matrix(matrix, "operator")
        dev = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
        if dev > HERMITIAN_REJECT_TOL:
            raise ValueError(f"operator is not Hermitian (max deviation {dev:.3e})")
        if dev > 0:
            logger.debug("symmetrised operator, max Hermiticity deviation %.3e", dev)
        self.matrix = 0.5 * (m + m.conj().T)
        self.matrix.setflags(write=False)
        self.hermiticity_deviation = dev
        self._eig = None

    def __repr__(self):
        return f"HermitianOperator(dim={self.dim})"

    @property
    def dim(self):
        return self.matrix.shape[0]

    def _decompose(self):
        if self._eig is None:
            w, v = np.linalg.eigh(self.matrix)
            self._eig = (w, phase_fix(v))
        return self._eig

    @property
    def eigenvalues(self):
        return self._decompose()[0]

    @property
    def eigenvectors(self):
        return self._decompose()[1]

    def spectrum(self):
        """Distinct eigenvalues (merged within 1e-10) with their projectors."""
        w, v = self._decompose()
        groups = []
        for i, lam in enumerate(w):
            if groups and abs(lam - groups[-1][0]) <= EIGEN_TOL * max(1.0, abs(lam)):
                groups[-1][1].append(i)
            else:
                groups.append((lam, [i]))
        out = []
        for lam, idx in groups:
            vecs = v[:, idx]
            label = float(np.mean(w[idx]))
            out.append((label, vecs @ vecs.conj().T))
        return out

    def expectation(self, state):
        a = state.amplitudes
        return complex(np.vdot(a, self.matrix @ a))


@dataclass(frozen=True)
class DiscreteDistribution:
    labels: tuple
    probabilities: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size != len(labels):
            raise ValueError(f"{len(labels)} labels but probabilities of shape {p.shape}")
        if len(set(labels)) != len(labels):
            raise ValueError("support labels must be distinct")
        if np.any(p < -NORM_TOL):
            raise ValueError("probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, expected 1")
        p = np.clip(p, 0.0, None)
        p.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def from_dict(cls, mapping):
        return cls(tuple(mapping), np.array(list(mapping.values()), dtype=float))

    def as_dict(self):
        return dict(zip(self.labels, self.probabilities.tolist()))

    def __getitem__(self, label):
        return self.as_dict().get(label, 0.0)

    def mean(self, values=None):
        vals = np.asarray(self.labels if values is None else values, dtype=float)
        return float(vals @ self.probabilities)

    def marginal(self, axis):
        """Marginal of a distribution whose labels are tuples."""
        out = {}
        for lab, p in zip(self.labels, self.probabilities):
            out[lab[axis]] = out.get(lab[axis], 0.0) + p
        return DiscreteDistribution.from_dict(out)

    def to_dict(self):
        return {
            "labels": [list(l) if isinstance(l, tuple) else l for l in self.labels],
            "probabilities": self.probabilities.tolist(),
        }


@dataclass(frozen=True)
class PointerCell:
    """A pointer position, optionally carrying the eigenvalues it stands for."""

    index: int
    values: tuple = ()

    def __str__(self):
        if not self.values:
            return f"x{self.index}"
        vals = ",".join(f"{v:+g}" for v in self.values)
        return f"x{self.index}[{vals}]"


class PointerDevice:
    """Unitary mapping ``source_basis[:, i]`` to pointer cell ``pointer_cells[i]``.

    Pointer cells are the computational basis of the device space, so the
    unitary is the conjugate transpose of the source-basis matrix.
    """

    def __init__(self, source_basis, pointer_cells=None):
        basis = as_square_matrix(source_basis, "source_basis")
        d = basis.shape[0]
        cells = tuple(range(d)) if pointer_cells is None else tuple(pointer_cells)
        if len(cells) != d:
            raise ValueError(f"need {d} pointer cells, got {len(cells)}")
        if len(set(cells)) != d:
            raise ValueError("pointer cells must be pairwise distinct")
        unitary = basis.conj().T
        err = float(np.max(np.abs(unitary @ unitary.conj().T - np.eye(d))))
        if err > NORM_TOL * d:
            raise ValueError(f"source basis is not orthonormal (deviation {err:.3e})")
        self.source_basis = basis
        self.pointer_cells = cells
        self.unitary = unitary

    @classmethod
    def for_operator(cls, op, pointer_cells=None):
        return cls(op.eigenvectors, pointer_cells)

    @property
    def dim(self):
        return self.unitary.shape[0]

    def apply(self, state):
        if state.dim != self.dim:
            raise ValueError(f"state has dimension {state.dim}, device has {self.dim}")
        return self.unitary @ state.amplitudes


@dataclass(frozen=True)
class Likelihood:
    """Column-stochastic table q(D|x): rows are outcomes, columns pointer cells."""

    outcomes: tuple
    cells: tuple
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.shape != (len(self.outcomes), len(self.cells)):
            raise ValueError(
                f"table shape {t.shape} does not match {len(self.outcomes)} outcomes x {len(self.cells)} cells"
            )
        if np.any(t < 0):
            raise ValueError("likelihood entries must be nonnegative")
        sums = t.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > NORM_TOL):
            raise ValueError(f"likelihood columns must sum to 1, got {sums.tolist()}")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "cells", tuple(self.cells))

    @classmethod
    def sharp(cls, cells):
        cells = tuple(cells)
        return cls(cells, cells, np.eye(len(cells)))

    @classmethod
    def uniform(cls, cells, outcomes=None):
        cells = tuple(cells)
        outcomes = cells if outcomes is None else tuple(outcomes)
        return cls(outcomes, cells, np.full((len(outcomes), len(cells)), 1.0 / len(outcomes)))

    @classmethod
    def gaussian_binned(cls, cells, positions, bin_edges, sigma):
        """Detector with Gaussian blur ``sigma`` around each cell position,
        integrated over bins; tails beyond the outer edges join the end bins."""
        from math import erf, sqrt

        edges = np.asarray(bin_edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("bin_edges must be strictly increasing with at least two entries")
        if sigma <= 0:
            raise ValueError("sigma must be > 0")
        cdf = np.array(
            [[0.5 * (1 + erf((e - p) / (sqrt(2) * sigma))) for p in positions] for e in edges]
        )
        cdf[0, :] = 0.0
        cdf[-1, :] = 1.0
        table = np.diff(cdf, axis=0)
        outcomes = tuple(f"bin{i}" for i in range(edges.size - 1))
        return cls(outcomes, tuple(cells), table)

    def column(self, outcome):
        try:
            row = self.outcomes.index(outcome)
        except ValueError:
            raise KeyError(f"unknown detection outcome {outcome!r}") from None
        return self.table[row]


def born_probabilities(state, op):
    """Born distribution over the distinct eigenvalues of ``op``."""
    if state.dim != op.dim:
        raise ValueError(f"state has dimension {state.dim}, operator has {op.dim}")
    a = state.amplitudes
    labels, probs = [], []
    for lam, proj in op.spectrum():
        labels.append(lam)
        probs.append(float(np.real(np.vdot(a, proj @ a))))
    probs = np.clip(probs, 0.0, None)
    return DiscreteDistribution(tuple(labels), probs / probs.sum())


def source_basis_probabilities(state, device):
    """|<a_i|Psi>|^2 computed directly from the source basis (no unitary)."""
    if state.dim != device.dim:
        raise ValueError(f"state has dimension {state.dim}, device has {device.dim}")
    p = np.abs(device.source_basis.conj().T @ state.amplitudes) ** 2
    return DiscreteDistribution(device.pointer_cells, p / p.sum())


def apply_device(state, device):
    """Distribution over pointer cells after the device unitary acts."""
    out = device.apply(state)
    p = np.abs(out) ** 2
    return DiscreteDistribution(device.pointer_cells, p / p.sum())


def detection_update(prior, like, outcome):
    """Posterior over cells after observing ``outcome``: p(x) q(D|x) / q(D)."""
    q = _aligned_column(prior, like, outcome)
    joint = prior.probabilities * q
    evidence = joint.sum()
    if evidence <= 0:
        raise ImpossibleDataError(f"outcome {outcome!r} has zero probability under the prior")
    return DiscreteDistribution(prior.labels, joint / evidence)


def _aligned_column(prior, like, outcome):
    col = dict(zip(like.cells, like.column(outcome)))
    missing = [c for c in prior.labels if c not in col]
    if missing:
        raise ValueError(f"likelihood has no column for cells {missing}")
    return np.array([col[c] for c in prior.labels])


class PointerInference(BaseEstimator):
    """Infer an observable from pointer detections.

    Each detection is turned into a posterior over cells; ``cell_posterior_``
    is their average and ``value_`` the pooled posterior mean of the scalars
    attached to the cells.

    Parameters
    ----------
    likelihood : Likelihood
    scalars : sequence of float
        lambda_i attached to each cell, in ``likelihood.cells`` order.
    prior : DiscreteDistribution, optional
        Prior over cells (uniform if omitted).
    """

    def __init__(self, likelihood, scalars, prior=None):
        self.likelihood = likelihood
        self.scalars = scalars
        self.prior = prior

    def fit(self, detections, y=None):
        detections = list(detections)
        if not detections:
            raise ValueError("need at least one detection")
        cells = self.likelihood.cells
        scalars = np.asarray(self.scalars, dtype=float)
        if scalars.size != len(cells):
            raise ValueError(f"{scalars.size} scalars for {len(cells)} cells")
        prior = self.prior
        if prior is None:
            prior = DiscreteDistribution(cells, np.full(len(cells), 1.0 / len(cells)))
        value_of = dict(zip(cells, scalars))
        lam = np.array([value_of[c] for c in prior.labels])
        self.posteriors_ = [detection_update(prior, self.likelihood, d) for d in detections]
        stacked = np.array([p.probabilities for p in self.posteriors_])
        self.cell_posterior_ = DiscreteDistribution(prior.labels, stacked.mean(axis=0))
        self.detection_values_ = stacked @ lam
        self.value_ = float(self.detection_values_.mean())
        self.prior_ = prior
        return self

    def predict(self, detections=None):
        """Pooled estimate; with ``detections`` returns one estimate per detection."""
        check_is_fitted(self, "value_")
        if detections is None:
            return self.value_
        lam = np.array([dict(zip(self.likelihood.cells, self.scalars))[c] for c in self.prior_.labels])
        return np.array(
            [detection_update(self.prior_, self.likelihood, d).probabilities @ lam for d in detections]
        )


@dataclass
class InferenceReport:
    value: float
    cell_posterior: DiscreteDistribution
    posteriors: list = field(repr=False)

    def to_dict(self):
        return {
            "value": self.value,
            "cell_posterior": self.cell_posterior.to_dict(),
            "posteriors": [p.probabilities.tolist() for p in self.posteriors],
        }


def infer_observable(detections, device, scalars, like, prior=None):
    """Estimate sum_i lambda_i p(x_i) from a list of detection outcomes."""
    if tuple(like.cells) != tuple(device.pointer_cells):
        raise ValueError("likelihood cells must match the device's pointer cells")
    est = PointerInference(like, scalars, prior).fit(detections)
    return InferenceReport(est.value_, est.cell_posterior_, est.posteriors_)


def weak_value(pre, post, op):
    """<post|A|pre> / <post|pre>."""
    if not (pre.dim == post.dim == op.dim):
        raise ValueError("pre, post and operator dimensions differ")
    overlap = np.vdot(post.amplitudes, pre.amplitudes)
    if abs(overlap) <= 1e-12:
        raise ValueError(f"pre- and post-selected states are orthogonal (|overlap| = {abs(overlap):.3e})")
    return complex(np.vdot(post.amplitudes, op.matrix @ pre.amplitudes) / overlap)


def function_joint(p_a, f):
    """Joint P(a, b) = p(a) delta(b - f(a)) supported on pairs (a, f(a))."""
    labels = tuple((a, f(a)) for a in p_a.labels)
    return DiscreteDistribution(labels, p_a.probabilities.copy())


def overlap_distance(p1, p2):
    """Half the L1 distance; missing labels count as probability zero."""
    d1, d2 = p1.as_dict(), p2.as_dict()
    support = list(dict.fromkeys(list(p1.labels) + list(p2.labels)))
    return 0.5 * float(sum(abs(d1.get(s, 0.0) - d2.get(s, 0.0)) for s in support))


def independence_check(joint, tol=1e-10):
    """Compare a joint over pairs to the product of its marginals.

    Returns ``(independent, max_abs_deviation)``.
    """
    if not all(isinstance(l, tuple) and len(l) == 2 for l in joint.labels):
        raise ValueError("joint labels must be (x1, x2) pairs")
    m1, m2 = joint.marginal(0), joint.marginal(1)
    table = np.zeros((len(m1.labels), len(m2.labels)))
    i1 = {l: i for i, l in enumerate(m1.labels)}
    i2 = {l: i for i, l in enumerate(m2.labels)}
    for (a, b), p in zip(joint.labels, joint.probabilities):
        table[i1[a], i2[b]] = p
    dev = float(np.max(np.abs(table - np.outer(m1.probabilities, m2.probabilities))))
    return dev < tol, dev


def product_joint(p1, p2):
    labels = tuple((a, b) for a in p1.labels for b in p2.labels)
    return DiscreteDistribution(labels, np.outer(p1.probabilities, p2.probabilities).ravel())
