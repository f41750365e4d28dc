"""Phase-tracked Pauli strings.

A string is stored as a phase exponent k (overall factor i**k) plus a word
over I, X, Y, Z.  Multiplication is letterwise with XY = iZ, YZ = iX,
ZX = iY and the reversed orders picking up -i.
"""

from dataclasses import dataclass
from functools import reduce

import numpy as np

LETTERS = "IXYZ"

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

_CYCLIC = {("X", "Y"): "Z", ("Y", "Z"): "X", ("Z", "X"): "Y"}

_PHASE_TEXT = {0: "+", 1: "+i", 2: "-", 3: "-i"}


def _letter_product(a, b):
    """Return (phase exponent, letter) for the single-qubit product a*b."""
    if a == "I":
        return 0, b
    if b == "I":
        return 0, a
    if a == b:
        return 0, "I"
    if (a, b) in _CYCLIC:
        return 1, _CYCLIC[(a, b)]
    return 3, _CYCLIC[(b, a)]


@dataclass(frozen=True)
class PauliString:
    letters: str
    phase: int = 0

    def __post_init__(self):
        letters = self.letters.upper()
        if not letters or any(c not in LETTERS for c in letters):
            raise ValueError(f"invalid Pauli word {self.letters!r}")
        object.__setattr__(self, "letters", letters)
        object.__setattr__(self, "phase", int(self.phase) % 4)

    @classmethod
    def parse(cls, text):
        """Parse strings such as ``ZX``, ``-YY``, ``+iXZ`` or ``-i ZZ``."""
        s = text.strip().replace(" ", "")
        phase = 0
        if s.startswith("-"):
            phase, s = 2, s[1:]
        elif s.startswith("+"):
            s = s[1:]
        if s.startswith("i"):
            phase, s = phase + 1, s[1:]
        return cls(s, phase)

    @classmethod
    def identity(cls, n):
        return cls("I" * n)

    @property
    def n_qubits(self):
        return len(self.letters)

    @property
    def coefficient(self):
        return 1j**self.phase

    def is_identity(self):
        return set(self.letters) == {"I"}

    def __str__(self):
        prefix = _PHASE_TEXT[self.phase]
        return ("" if prefix == "+" else prefix) + self.letters

    def __mul__(self, other):
        return pauli_mul(self, other)

    def __neg__(self):
        return PauliString(self.letters, self.phase + 2)

    def to_matrix(self):
        mats = [_SINGLE[c] for c in self.letters]
        return self.coefficient * reduce(np.kron, mats)


def _check_lengths(p, q):
    if p.n_qubits != q.n_qubits:
        raise ValueError(f"length mismatch: {p} has {p.n_qubits} qubits, {q} has {q.n_qubits}")


def pauli_mul(p, q):
    _check_lengths(p, q)
    phase = p.phase + q.phase
    out = []
    for a, b in zip(p.letters, q.letters):
        k, c = _letter_product(a, b)
        phase += k
        out.append(c)
    return PauliString("".join(out), phase)


def pauli_commutes(p, q):
    """Two strings commute iff they anticommute on an even number of qubits."""
    _check_lengths(p, q)
    clashes = sum(1 for a, b in zip(p.letters, q.letters) if a != "I" and b != "I" and a != b)
    return clashes % 2 == 0


def product(strings):
    strings = list(strings)
    if not strings:
        raise ValueError("empty product")
    return reduce(pauli_mul, strings)
