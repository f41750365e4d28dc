import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edlab.contextuality import (
    NonCommutingContextError,
    NotAParityProofError,
    ObservableTable,
    all_assignments,
    context_device,
    context_products,
    context_selection_pipeline,
    hybrid_check,
    joint_eigenbasis,
    load_table_text,
    mermin_square,
    mermin_star,
    parity_certificate,
    position_valuation,
    valuation_search,
)
from edlab.inference import HermitianOperator, StateVector, born_probabilities
from edlab.pauli import PauliString, pauli_commutes, pauli_mul, product

P = PauliString.parse


# ---- Pauli algebra ----------------------------------------------------------


def test_identity_is_neutral():
    for word in ["ZX", "-iYY", "IZ"]:
        assert pauli_mul(P(word), PauliString.identity(2)) == P(word)
        assert pauli_mul(PauliString.identity(2), P(word)) == P(word)


def test_single_qubit_products():
    assert pauli_mul(P("X"), P("Y")) == P("iZ")
    assert pauli_mul(P("Y"), P("X")) == P("-iZ")
    assert pauli_mul(P("Z"), P("X")) == P("iY")


def test_zz_times_xx_is_minus_yy():
    assert pauli_mul(P("ZZ"), P("XX")) == P("-YY")
    np.testing.assert_allclose(
        P("ZZ").to_matrix() @ P("XX").to_matrix(), -P("YY").to_matrix(), atol=1e-12
    )


def test_commutation_examples():
    assert pauli_commutes(P("ZI"), P("IX"))
    assert not pauli_commutes(P("ZI"), P("XI"))
    assert pauli_commutes(P("XYZ"), P("XYZ"))


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        pauli_mul(P("X"), P("XX"))
    with pytest.raises(ValueError):
        pauli_commutes(P("X"), P("XX"))


def test_parse_and_str_round_trip():
    for text in ["ZX", "-YY", "+iXZ", "-iZZ"]:
        assert str(P(text)) == text
        assert P(str(P(text))) == P(text)
    assert P("+iXZ") == P("iXZ")
    with pytest.raises(ValueError):
        P("AB")


def _all_two_qubit(phases=(0, 1, 2, 3)):
    for a, b in itertools.product("IXYZ", repeat=2):
        for k in phases:
            yield PauliString(a + b, k)


def test_exhaustive_two_qubit_oracle():
    strings = list(_all_two_qubit())
    mats = {s: s.to_matrix() for s in strings}
    for p in strings:
        for q in strings:
            mp, mq = mats[p], mats[q]
            np.testing.assert_allclose(mats.get(p * q, (p * q).to_matrix()), mp @ mq, atol=1e-12)
            comm = np.linalg.norm(mp @ mq - mq @ mp)
            assert pauli_commutes(p, q) == (comm < 1e-12)


words3 = st.text(alphabet="IXYZ", min_size=3, max_size=3)


@given(words3, words3, st.integers(0, 3), st.integers(0, 3))
def test_homomorphism_three_qubits(a, b, j, k):
    p, q = PauliString(a, j), PauliString(b, k)
    np.testing.assert_allclose((p * q).to_matrix(), p.to_matrix() @ q.to_matrix(), atol=1e-12)


@given(words3, words3, words3)
def test_multiplication_associative(a, b, c):
    p, q, r = P(a), P(b), P(c)
    assert (p * q) * r == p * (q * r)


# ---- Mermin square ------------------------------------------------------------


def test_mermin_entries():
    t = mermin_square()
    assert t.cell((1, 1)) == P("ZI")
    assert t.cell((3, 3)) == P("YY")
    assert [str(c) for c in t.cells] == ["ZI", "IX", "ZX", "IZ", "XI", "XZ", "ZZ", "XX", "YY"]
    assert all(t.commuting_contexts())
    assert len(t.contexts) == 6


def test_context_products_signs():
    prods = context_products(mermin_square())
    by_name = {p.name: p for p in prods}
    assert by_name["row 1"].product == P("II")
    assert by_name["row 3"].product == P("-II")
    assert [p.sign for p in prods].count(-1) == 1
    grand = product(p.product for p in prods)
    assert grand == P("-II")


def test_context_products_match_matrix_chain():
    t = mermin_square()
    for cp, ctx in zip(context_products(t), t.contexts):
        chain = np.eye(4)
        for i in ctx:
            chain = chain @ t.cells[i].to_matrix()
        np.testing.assert_allclose(chain, cp.sign * np.eye(4), atol=1e-12)


def test_noncommuting_context_rejected():
    t = ObservableTable.from_grid([["ZI", "XI"], ["IZ", "IX"]])
    with pytest.raises(NonCommutingContextError):
        context_products(t)


def test_valuation_search_mermin():
    res = valuation_search(mermin_square())
    assert res.n_assignments == 512
    assert res.satisfying == []
    assert set(res.relaxed_counts) == {"row 1", "row 2", "row 3", "column 1", "column 2", "column 3"}
    assert all(n >= 1 for n in res.relaxed_counts.values())


def test_single_context_table_has_four_valuations():
    t = ObservableTable.from_grid([["ZI", "IZ", "ZZ"]])
    res = valuation_search(t)
    assert len(res.satisfying) == 4
    for v in res.satisfying:
        assert v[(1, 1)] * v[(1, 2)] * v[(1, 3)] == 1


def _brute_force(table):
    """Independent loop: contexts checked in reverse order, values from itertools."""
    signs = [cp.sign for cp in context_products(table)]
    found = []
    for values in itertools.product((1, -1), repeat=len(table.cells)):
        ok = True
        for k in reversed(range(len(table.contexts))):
            if np.prod([values[i] for i in table.contexts[k]]) != signs[k]:
                ok = False
                break
        if ok:
            found.append(values)
    return found


def _as_tuples(res, table):
    return sorted(tuple(v[key] for key in table.keys) for v in res.satisfying)


def test_valuation_search_equals_brute_force_on_row():
    t = ObservableTable.from_grid([["ZI", "IZ", "ZZ"], ["IZ", "ZI", "ZZ"], ["ZZ", "ZZ", "II"]])
    assert len(_brute_force(t)) > 0
    assert _as_tuples(valuation_search(t), t) == sorted(_brute_force(t))


def test_enumeration_bound():
    rows = [["ZIII"] * 3] * 7
    t = ObservableTable.from_grid(rows)
    with pytest.raises(ValueError, match="enumeration bound"):
        valuation_search(t)


def test_all_assignments_distinct():
    a = all_assignments(5)
    assert a.shape == (32, 5)
    assert len({tuple(r) for r in a}) == 32


def test_parity_certificate_mermin():
    cert = parity_certificate(mermin_square())
    assert (cert.context_sign_product, cert.square_product, cert.verdict) == (-1, 1, "contradiction")
    assert cert.negative_contexts == ("row 3",)


def test_parity_certificate_identity_table():
    t = ObservableTable.from_grid([["II"] * 3] * 3)
    cert = parity_certificate(t)
    assert (cert.context_sign_product, cert.square_product, cert.verdict) == (1, 1, "consistent")


def test_odd_membership_is_not_a_parity_proof():
    t = ObservableTable.from_grid([["ZI", "IZ", "ZZ"]])
    with pytest.raises(NotAParityProofError):
        parity_certificate(t)


def test_mermin_star():
    t = mermin_star()
    assert len(t.cells) == 10 and len(t.contexts) == 5
    assert all(c == 2 for c in t.membership_counts())
    cert = parity_certificate(t)
    assert cert.context_sign_product == -1
    assert cert.verdict == "contradiction"
    assert valuation_search(t).satisfying == []


# random parity-even tables: the square conjugated by local Cliffords and sign flips
_LOCAL = {"H": {"X": "Z", "Y": "-Y", "Z": "X", "I": "I"}, "S": {"X": "Y", "Y": "-X", "Z": "Z", "I": "I"}}


def _conjugate(cell, gates):
    sign = -1 if cell.phase == 2 else 1
    letters = []
    for letter, g in zip(cell.letters, gates):
        if g:
            out = _LOCAL[g][letter]
            if out.startswith("-"):
                sign, out = -sign, out[1:]
            letter = out
        letters.append(letter)
    return PauliString("".join(letters), 0 if sign > 0 else 2)


@st.composite
def parity_even_tables(draw):
    gates = draw(st.tuples(st.sampled_from([None, "H", "S"]), st.sampled_from([None, "H", "S"])))
    flips = draw(st.lists(st.booleans(), min_size=9, max_size=9))
    base = mermin_square()
    cells = []
    for cell, flip in zip(base.cells, flips):
        c = _conjugate(cell, gates)
        cells.append(-c if flip else c)
    rows = [[str(c) for c in cells[3 * i : 3 * i + 3]] for i in range(3)]
    return ObservableTable.from_grid(rows)


@settings(max_examples=10, deadline=None)
@given(parity_even_tables())
def test_contradiction_implies_no_valuation(table):
    # sign flips cancel pairwise (each cell in two contexts); conjugation keeps products
    cert = parity_certificate(table)
    res = valuation_search(table)
    assert cert.verdict == "contradiction"
    assert res.satisfying == []
    assert _as_tuples(res, table) == sorted(_brute_force(table))


def test_consistent_table_has_valuations():
    t = ObservableTable.from_grid([["ZI", "IZ", "ZZ"], ["IZ", "ZI", "ZZ"], ["ZZ", "ZZ", "II"]])
    cert = parity_certificate(t)
    assert cert.verdict == "consistent"
    assert len(valuation_search(t).satisfying) > 0


# ---- position valuations ------------------------------------------------------


def test_position_valuation_examples():
    assert position_valuation(P("ZI"), 0) == 1.0
    for x0 in range(4):
        assert position_valuation(P("XX"), x0) == 0.0
    diag = np.diag([0.5, -2.0, 3.0])
    assert position_valuation(HermitianOperator(diag), 2) == 3.0
    with pytest.raises(IndexError):
        position_valuation(P("ZI"), 4)


@pytest.mark.parametrize("x0", range(4))
def test_hybrid_check_mermin(x0):
    t = mermin_square()
    rep = hybrid_check(t, x0)
    assert set(rep.cell_values.values()) <= {-1.0, 0.0, 1.0}
    assert len(rep.violations) >= 1
    assert rep.square_product >= 0
    assert rep.grand_context_product == -1.0
    signs = {cp.name: cp.sign for cp in context_products(t)}
    for name, value in rep.context_values.items():
        assert value == signs[name]
    assert rep.verdict == "functional relation fails"


def test_hybrid_check_diagonal_table_keeps_relation():
    t = ObservableTable.from_grid([["ZI", "IZ", "ZZ"]])
    for x0 in range(4):
        assert hybrid_check(t, x0).violations == []


# ---- context selection ----------------------------------------------------------


def test_joint_eigenbasis_diagonalizes():
    t = mermin_square()
    for k in range(6):
        mats = [c.to_matrix() for c in t.members(k)]
        basis, labels = joint_eigenbasis(mats)
        np.testing.assert_allclose(basis.conj().T @ basis, np.eye(4), atol=1e-12)
        for j, m in enumerate(mats):
            np.testing.assert_allclose(
                basis.conj().T @ m @ basis, np.diag([lab[j] for lab in labels]), atol=1e-10
            )


def test_joint_eigenbasis_rejects_noncommuting():
    with pytest.raises(NonCommutingContextError):
        joint_eigenbasis([P("ZI").to_matrix(), P("XI").to_matrix()])


def test_pipeline_eigenstate_gives_point_mass():
    t = mermin_square()
    device = context_device(t, 0)
    state = StateVector(device.source_basis[:, 2])
    dist = context_selection_pipeline(state, t, 0)
    assert dist.probabilities[2] == pytest.approx(1.0, abs=1e-12)
    assert dist.probabilities.sum() == pytest.approx(1.0, abs=1e-12)


def _projector_born(state, members, values):
    d = members[0].shape[0]
    proj = np.eye(d, dtype=complex)
    for s, m in zip(values, members):
        proj = proj @ (np.eye(d) + s * m) / 2
    a = state.amplitudes
    return float(np.real(np.vdot(a, proj @ a)))


def test_pipeline_bell_state_row3():
    t = mermin_square()
    k = t.context_names.index("row 3")
    bell = StateVector(np.array([1, 0, 0, 1]) / np.sqrt(2))
    dist = context_selection_pipeline(bell, t, k)
    members = [c.to_matrix() for c in t.members(k)]
    for cell, p in dist.as_dict().items():
        assert p == pytest.approx(_projector_born(bell, members, cell.values), abs=1e-12)


def test_pipeline_marginals_match_member_born():
    rng = np.random.default_rng(5)
    t = mermin_square()
    state = StateVector.random(4, rng)
    for k in range(6):
        dist = context_selection_pipeline(state, t, k)
        for j, cell in enumerate(t.members(k)):
            marg = {}
            for c, p in dist.as_dict().items():
                marg[c.values[j]] = marg.get(c.values[j], 0.0) + p
            born = born_probabilities(state, HermitianOperator(cell.to_matrix())).as_dict()
            for lam, p in born.items():
                assert marg.get(lam, 0.0) == pytest.approx(p, abs=1e-12)


def test_pipeline_rejects_noncommuting_context():
    t = ObservableTable.from_grid([["ZI", "XI"], ["IZ", "IX"]])
    with pytest.raises(NonCommutingContextError):
        context_selection_pipeline(StateVector(np.eye(4)[0]), t, 0)


# ---- text format ------------------------------------------------------------------


def test_load_table_text():
    text = """
    # the square
    ZI | IX | ZX
    IZ , XI , XZ
    ZZ   XX   -YY   # signed cell
    """
    t = load_table_text(text)
    assert t.cell((3, 3)) == P("-YY")
    # one flipped cell moves the -II from row 3 to column 3, parity unchanged
    cert = parity_certificate(t)
    assert cert.verdict == "contradiction"
    assert cert.negative_contexts == ("column 3",)
    assert load_table_text(mermin_square().to_text()).cells == mermin_square().cells


def test_load_table_text_errors():
    with pytest.raises(ValueError):
        load_table_text("# nothing\n")
    with pytest.raises(ValueError):
        load_table_text("ZI QQ\n")
