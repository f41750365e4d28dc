"""Observable tables, noncontextual valuations and position valuations.

A table is a set of Pauli observables (cells) grouped into contexts:
mutually commuting subsets whose ordered product is +/- identity.  For the
3x3 Peres-Mermin square the contexts are its rows and columns.
"""

import logging
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .inference import (
    EIGEN_TOL,
    HermitianOperator,
    PointerCell,
    PointerDevice,
    apply_device,
    phase_fix,
)
from .pauli import PauliString, pauli_commutes, pauli_mul

logger = logging.getLogger(__name__)

MAX_ENUMERATION_CELLS = 20


class NonCommutingContextError(ValueError):
    pass


class NotAParityProofError(ValueError):
    pass


@dataclass(frozen=True)
class ObservableTable:
    """Cells plus contexts (tuples of cell indices).

    ``keys`` name the cells; grid tables use 1-based (row, column) pairs so
    that key (i, j) is A^{ij}.
    """

    cells: tuple
    contexts: tuple
    context_names: tuple = None
    keys: tuple = None
    shape: tuple = None

    def __post_init__(self):
        cells = tuple(c if isinstance(c, PauliString) else PauliString.parse(c) for c in self.cells)
        if not cells:
            raise ValueError("table has no cells")
        n = cells[0].n_qubits
        if any(c.n_qubits != n for c in cells):
            raise ValueError("all cells must act on the same number of qubits")
        contexts = tuple(tuple(int(i) for i in ctx) for ctx in self.contexts)
        for ctx in contexts:
            if not ctx or any(not 0 <= i < len(cells) for i in ctx):
                raise ValueError(f"context {ctx} references unknown cells")
            if len(set(ctx)) != len(ctx):
                raise ValueError(f"context {ctx} repeats a cell")
        names = self.context_names or tuple(f"context {k + 1}" for k in range(len(contexts)))
        keys = self.keys or tuple(range(len(cells)))
        if len(names) != len(contexts) or len(keys) != len(cells):
            raise ValueError("context_names/keys do not match contexts/cells")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "contexts", contexts)
        object.__setattr__(self, "context_names", tuple(names))
        object.__setattr__(self, "keys", tuple(keys))

    @classmethod
    def from_grid(cls, rows):
        """Build a table whose contexts are the rows and columns of a grid.

        Rows (columns) are only contexts when they hold more than one cell.
        """
        grid = [[c if isinstance(c, PauliString) else PauliString.parse(c) for c in row] for row in rows]
        if not grid or any(len(r) != len(grid[0]) for r in grid):
            raise ValueError("grid rows must be nonempty and of equal length")
        r, c = len(grid), len(grid[0])
        cells = tuple(p for row in grid for p in row)
        keys = tuple((i + 1, j + 1) for i in range(r) for j in range(c))
        contexts, names = [], []
        if c > 1:
            for i in range(r):
                contexts.append(tuple(i * c + j for j in range(c)))
                names.append(f"row {i + 1}")
        if r > 1:
            for j in range(c):
                contexts.append(tuple(i * c + j for i in range(r)))
                names.append(f"column {j + 1}")
        return cls(cells, tuple(contexts), tuple(names), keys, (r, c))

    @property
    def n_qubits(self):
        return self.cells[0].n_qubits

    def cell(self, key):
        return self.cells[self.keys.index(key)]

    def members(self, k):
        return [self.cells[i] for i in self.contexts[k]]

    def membership_counts(self):
        counts = [0] * len(self.cells)
        for ctx in self.contexts:
            for i in ctx:
                counts[i] += 1
        return counts

    def commuting_contexts(self):
        """True per context when all its members pairwise commute."""
        out = []
        for k in range(len(self.contexts)):
            m = self.members(k)
            out.append(all(pauli_commutes(a, b) for i, a in enumerate(m) for b in m[i + 1 :]))
        return out

    def to_text(self):
        if self.shape is None:
            raise ValueError("only grid tables have a text form")
        r, c = self.shape
        return "\n".join(" ".join(str(self.cells[i * c + j]) for j in range(c)) for i in range(r)) + "\n"


def mermin_square():
    return ObservableTable.from_grid(
        [
            ["ZI", "IX", "ZX"],
            ["IZ", "XI", "XZ"],
            ["ZZ", "XX", "YY"],
        ]
    )


def mermin_star():
    """Three-qubit star: ten observables on five lines of four."""
    cells = ("XII", "IXI", "IIX", "YII", "IYI", "IIY", "XXX", "XYY", "YXY", "YYX")
    contexts = (
        (6, 7, 8, 9),
        (0, 1, 2, 6),
        (0, 4, 5, 7),
        (3, 1, 5, 8),
        (3, 4, 2, 9),
    )
    names = ("XXX-XYY-YXY-YYX", "X1-X2-X3", "X1-Y2-Y3", "Y1-X2-Y3", "Y1-Y2-X3")
    return ObservableTable(cells, contexts, names, cells)


@dataclass(frozen=True)
class ContextProduct:
    name: str
    product: PauliString
    sign: int


def context_products(table):
    """Ordered (left to right) product of each context, which must be +/- identity."""
    out = []
    for k, ok in enumerate(table.commuting_contexts()):
        name = table.context_names[k]
        if not ok:
            raise NonCommutingContextError(f"{name} contains non-commuting observables")
        prod = reduce(pauli_mul, table.members(k))
        if not prod.is_identity() or prod.phase % 2:
            raise ValueError(f"{name} multiplies to {prod}, not +/- identity")
        out.append(ContextProduct(name, prod, 1 if prod.phase == 0 else -1))
    return out


@dataclass(frozen=True)
class Valuation:
    assignment: dict

    def __getitem__(self, key):
        return self.assignment[key]

    def to_dict(self):
        return {_key_text(k): v for k, v in self.assignment.items()}


def _key_text(key):
    if isinstance(key, tuple):
        return "A" + "".join(str(k) for k in key)
    return str(key)


@dataclass
class ValuationSearchResult:
    n_assignments: int
    satisfying: list
    relaxed_counts: dict
    signs: list = field(default_factory=list)

    def to_dict(self):
        return {
            "n_assignments": self.n_assignments,
            "satisfying": len(self.satisfying),
            "valuations": [v.to_dict() for v in self.satisfying],
            "relaxed_counts": dict(self.relaxed_counts),
            "context_signs": list(self.signs),
        }


def all_assignments(n):
    """Every +/-1 vector of length n; row r encodes r in binary, cell 0 most significant."""
    bits = (np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)) & 1
    return (1 - 2 * bits).astype(np.int8)


def valuation_search(table):
    """Enumerate all 2**cells valuations against every context constraint.

    A valuation satisfies a context when the product of its members' values
    equals the sign of the context's operator product.  Also counts the
    solutions left when each single context constraint is dropped.
    """
    n = len(table.cells)
    if n > MAX_ENUMERATION_CELLS:
        raise ValueError(f"{n} cells exceed the enumeration bound of {MAX_ENUMERATION_CELLS}")
    signs = [cp.sign for cp in context_products(table)]
    values = all_assignments(n)
    ok = np.empty((values.shape[0], len(table.contexts)), dtype=bool)
    for k, ctx in enumerate(table.contexts):
        ok[:, k] = np.prod(values[:, list(ctx)], axis=1, dtype=np.int64) == signs[k]
    full = ok.all(axis=1)
    satisfying = [
        Valuation({key: int(v) for key, v in zip(table.keys, row)}) for row in values[full]
    ]
    relaxed = {}
    for k, name in enumerate(table.context_names):
        keep = np.delete(ok, k, axis=1)
        relaxed[name] = int(keep.all(axis=1).sum())
    return ValuationSearchResult(values.shape[0], satisfying, relaxed, signs)


@dataclass(frozen=True)
class ParityCertificate:
    context_sign_product: int
    square_product: int
    verdict: str
    negative_contexts: tuple

    def to_dict(self):
        return {
            "context_sign_product": self.context_sign_product,
            "square_product": self.square_product,
            "verdict": self.verdict,
            "negative_contexts": list(self.negative_contexts),
        }


def parity_certificate(table):
    """Sign argument: product of all context signs vs the forced value +1.

    When each cell sits in an even number of contexts, multiplying every
    context constraint gives prod v(cell)^even = +1, so a context sign
    product of -1 certifies that no noncontextual valuation exists.
    """
    odd = [table.keys[i] for i, c in enumerate(table.membership_counts()) if c % 2]
    if odd:
        raise NotAParityProofError(f"cells {odd} appear in an odd number of contexts")
    prods = context_products(table)
    sign = int(np.prod([p.sign for p in prods]))
    negative = tuple(p.name for p in prods if p.sign < 0)
    return ParityCertificate(sign, 1, "contradiction" if sign < 0 else "consistent", negative)


def _as_matrix(op):
    if isinstance(op, PauliString):
        return op.to_matrix()
    if isinstance(op, HermitianOperator):
        return op.matrix
    return np.asarray(op, dtype=complex)


def position_valuation(op, x0):
    """Diagonal matrix element <x0|A|x0> in the computational (position) basis."""
    m = _as_matrix(op)
    if not 0 <= x0 < m.shape[0]:
        raise IndexError(f"basis index {x0} out of range for dimension {m.shape[0]}")
    return float(np.real(m[x0, x0]))


@dataclass
class PositionValuationReport:
    x0: int
    cell_values: dict
    context_values: dict
    member_products: dict
    violations: list
    grand_context_product: float
    square_product: float
    verdict: str

    def to_dict(self):
        return {
            "x0": self.x0,
            "cell_values": {_key_text(k): v for k, v in self.cell_values.items()},
            "context_values": dict(self.context_values),
            "member_products": dict(self.member_products),
            "violations": list(self.violations),
            "grand_context_product": self.grand_context_product,
            "square_product": self.square_product,
            "verdict": self.verdict,
        }


def hybrid_check(table, x0, tol=1e-12):
    """Position valuations of every cell and of every context product.

    ``context_values`` hold v_x of the ordered matrix product of each
    context; ``member_products`` the product of the members' v_x.  A context
    is a violation when the two differ.  ``square_product`` is
    prod_cells v_x^2, the value the functional relation would force on the
    product of all context valuations.
    """
    if table.n_qubits > 3:
        raise ValueError("hybrid_check builds dense matrices and is limited to 3 qubits")
    mats = [c.to_matrix() for c in table.cells]
    cell_values = {k: position_valuation(m, x0) for k, m in zip(table.keys, mats)}
    context_values, member_products, violations = {}, {}, []
    for k, ctx in enumerate(table.contexts):
        name = table.context_names[k]
        prod_matrix = reduce(np.matmul, [mats[i] for i in ctx])
        v_ctx = position_valuation(prod_matrix, x0)
        v_members = float(np.prod([cell_values[table.keys[i]] for i in ctx]))
        context_values[name] = v_ctx
        member_products[name] = v_members
        if abs(v_ctx - v_members) > tol:
            violations.append(name)
    grand = float(np.prod(list(context_values.values())))
    square = float(np.prod([v * v for v in cell_values.values()]))
    verdict = "functional relation fails" if violations else "functional relation holds"
    return PositionValuationReport(
        x0, cell_values, context_values, member_products, violations, grand, square, verdict
    )


def joint_eigenbasis(matrices, tol=EIGEN_TOL):
    """Simultaneous eigenbasis of commuting Hermitian matrices.

    Refines eigenspaces one matrix at a time.  Returns the basis as columns
    and, per column, the tuple of eigenvalues of each matrix.
    """
    mats = [np.asarray(m, dtype=complex) for m in matrices]
    d = mats[0].shape[0]
    for i, a in enumerate(mats):
        for b in mats[i + 1 :]:
            if np.max(np.abs(a @ b - b @ a)) > 1e-10:
                raise NonCommutingContextError("matrices do not commute")
    blocks = [(np.eye(d, dtype=complex), ())]
    for m in mats:
        refined = []
        for basis, values in blocks:
            w, u = np.linalg.eigh(basis.conj().T @ m @ basis)
            start = 0
            for stop in range(1, len(w) + 1):
                if stop == len(w) or abs(w[stop] - w[start]) > tol * max(1.0, abs(w[start])):
                    lam = float(np.round(np.mean(w[start:stop]), 10)) + 0.0
                    refined.append((basis @ u[:, start:stop], values + (lam,)))
                    start = stop
        blocks = refined
    columns, labels = [], []
    for basis, values in blocks:
        for j in range(basis.shape[1]):
            columns.append(basis[:, j])
            labels.append(values)
    return phase_fix(np.array(columns).T), labels


def context_device(table, k):
    """Pointer device sending the joint eigenvectors of context ``k`` to cells."""
    if not table.commuting_contexts()[k]:
        raise NonCommutingContextError(f"{table.context_names[k]} contains non-commuting observables")
    basis, labels = joint_eigenbasis([c.to_matrix() for c in table.members(k)])
    cells = [PointerCell(i, vals) for i, vals in enumerate(labels)]
    return PointerDevice(basis, cells)


def context_selection_pipeline(state, table, k):
    """Pick context ``k``, map its joint eigenbasis to pointer cells, read the pointer.

    Returned labels are ``PointerCell`` objects carrying the members'
    eigenvalues as the inferable values.
    """
    return apply_device(state, context_device(table, k))


def load_table_text(text):
    """Parse the plain-text grid format.

    One row per line, cells separated by whitespace, ``|`` or ``,``; each
    cell is a Pauli word with an optional sign (``-YY``, ``+iXZ``).  ``#``
    starts a comment.
    """
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].replace("|", " ").replace(",", " ").strip()
        if line:
            rows.append(line.split())
    if not rows:
        raise ValueError("no table rows found")
    return ObservableTable.from_grid(rows)
