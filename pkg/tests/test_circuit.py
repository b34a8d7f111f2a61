import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmwalk.circuit import (
    CNOT,
    H,
    U1,
    U2,
    WIRE_ORDER,
    CircuitError,
    CircuitSpec,
    Depolarizing,
    Erasure,
    GeneralKraus,
    GeneralSuperop,
    KrausNormalizationError,
    TraceOut,
    depolarizing_kraus,
    erasure_kraus,
    format_circuit,
    kraus_to_superop,
    load_circuit,
    parse_circuit,
    validate,
)
from dmwalk.oracle import apply_gate, apply_superop


def random_dm(rng, d=2):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def kraus_apply(kraus, rho):
    return sum(k @ rho @ k.conj().T for k in kraus)


def wire_vec(rho):
    return np.array([rho[a, b] for a, b in WIRE_ORDER])


class TestParse:
    def test_depol_line(self):
        spec = parse_circuit("qubits 1\nmode dm\nchannel depol 0 p=0.3")
        assert spec.n_qubits == 1
        assert spec.mode == "dm"
        assert spec.ops == (Depolarizing(0, 0.3),)

    def test_bell(self):
        spec = parse_circuit("qubits 2\nmode dm\ngate h 0\ngate cnot 0 1")
        assert spec.ops == (H(0), CNOT(0, 1))

    def test_powers_are_reduced(self):
        spec = parse_circuit("qubits 1\ngate u1 0 pow=9\ngate u2 0 pow=6")
        assert spec.ops == (U1(0, 1), U2(0, 2))

    def test_comments_and_blank_lines(self):
        spec = parse_circuit("# header\n\nqubits 1  # one qubit\nmode dm\n\n  gate h 0 # hadamard\n")
        assert spec.ops == (H(0),)

    def test_qubit_out_of_range(self):
        with pytest.raises(CircuitError, match="qubit index out of range") as err:
            parse_circuit("qubits 2\ngate u1 5")
        assert err.value.line == 2
        assert err.value.column == 9

    def test_channel_in_pure_mode(self):
        with pytest.raises(CircuitError, match="channel in pure mode"):
            parse_circuit("qubits 1\nchannel erase 0")

    def test_unknown_gate(self):
        with pytest.raises(CircuitError, match="unknown gate") as err:
            parse_circuit("qubits 1\ngate t 0")
        assert (err.value.line, err.value.column) == (2, 6)

    def test_syntax_error_reports_token(self):
        with pytest.raises(CircuitError) as err:
            parse_circuit("qubits 1\nmode dm\nchannel depol 0 q=0.2")
        assert err.value.line == 3

    def test_missing_qubits(self):
        with pytest.raises(CircuitError, match="missing 'qubits'"):
            parse_circuit("mode dm\n")

    def test_kraus_file(self, tmp_path):
        ops = [np.sqrt(0.5) * np.eye(2), np.sqrt(0.5) * np.diag([1, -1])]
        data = [[[[float(z.real), float(z.imag)] for z in row] for row in k] for k in ops]
        (tmp_path / "dephase.json").write_text(json.dumps(data))
        (tmp_path / "c.qw").write_text("qubits 1\nmode dm\nchannel kraus 0 file=dephase.json\n")
        spec = load_circuit(tmp_path / "c.qw")
        assert isinstance(spec.ops[0], GeneralKraus)
        np.testing.assert_allclose(spec.ops[0].operators[1], ops[1])

    def test_kraus_normalization_violation(self):
        data = json.dumps([[[[1, 0], [0, 0]], [[0, 0], [np.sqrt(0.5), 0]]]], separators=(",", ":"))
        with pytest.raises(CircuitError, match="Kraus normalization violated"):
            parse_circuit(f"qubits 1\nmode dm\nchannel kraus 0 data={data}")

    def test_trace_out_must_be_trailing(self):
        with pytest.raises(CircuitError, match="operations after trace_out"):
            parse_circuit("qubits 2\nmode dm\ntrace_out 1\ngate h 0")

    def test_too_many_qubits(self):
        with pytest.raises(CircuitError, match="exceeds maximum"):
            parse_circuit("qubits 5\n")


class TestValidate:
    def test_valid_bell(self):
        assert validate(CircuitSpec(2, "dm", (H(0), CNOT(0, 1)))) == []

    def test_p_out_of_range(self):
        diags = validate(CircuitSpec(1, "dm", (Depolarizing(0, 1.5),)))
        assert any("p out of range" in d for d in diags)

    def test_kraus_normalization(self):
        # sum K^dag K = diag(1, 0.5)
        op = GeneralKraus(0, (np.diag([1.0, np.sqrt(0.5)]),))
        diags = validate(CircuitSpec(1, "dm", (op,)))
        assert any("Kraus normalization violated" in d for d in diags)

    def test_channel_in_pure(self):
        assert any("channel in pure mode" in d for d in validate(CircuitSpec(1, "pure", (Erasure(0),))))

    def test_index_range(self):
        assert any("out of range" in d for d in validate(CircuitSpec(1, "dm", (U1(3),))))


class TestSuperop:
    def test_identity(self):
        np.testing.assert_allclose(kraus_to_superop([np.eye(2)]), np.eye(4), atol=1e-15)

    def test_erasure_first_row(self):
        o = kraus_to_superop(erasure_kraus())
        expected = np.zeros((4, 4))
        expected[0] = [1, 1, 0, 0]
        np.testing.assert_allclose(o, expected, atol=1e-15)

    def test_depolarizing_entries(self):
        # oracle: apply the Kraus list to each matrix unit by hand
        p = 0.3
        kraus = [np.sqrt(1 - p) * np.eye(2)] + [
            np.sqrt(p / 3) * m
            for m in (np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.array([[1, 0], [0, -1]]))
        ]
        expected = np.zeros((4, 4), dtype=complex)
        for col, (a, b) in enumerate(WIRE_ORDER):
            unit = np.zeros((2, 2))
            unit[a, b] = 1
            expected[:, col] = wire_vec(kraus_apply(kraus, unit))
        o = kraus_to_superop(depolarizing_kraus(p))
        np.testing.assert_allclose(o, expected, atol=1e-14)
        np.testing.assert_allclose(o[:2, :2], [[0.8, 0.2], [0.2, 0.8]], atol=1e-14)
        np.testing.assert_allclose([o[2, 2], o[3, 3]], [1 - 4 * p / 3] * 2, atol=1e-14)

    def test_normalization_error(self):
        with pytest.raises(KrausNormalizationError):
            kraus_to_superop([np.diag([1.0, np.sqrt(0.5)])])

    def test_trace_preserving_on_random_states(self):
        rng = np.random.default_rng(3)
        o = kraus_to_superop(depolarizing_kraus(0.42))
        for _ in range(100):
            rho = random_dm(rng)
            out = o @ wire_vec(rho)
            assert abs(out[0] + out[1] - np.trace(rho)) < 1e-10

    def test_unitary_matches_oracle_gate(self):
        rng = np.random.default_rng(4)
        for gate in (H(0), U1(0, 3), U2(0, 1)):
            o = kraus_to_superop([gate.matrix()])
            for col, (a, b) in enumerate(WIRE_ORDER):
                unit = np.zeros((2, 2), dtype=complex)
                unit[a, b] = 1
                np.testing.assert_allclose(o[:, col], wire_vec(apply_gate(unit, gate, 1)), atol=1e-12)
        rho = random_dm(rng)
        o = kraus_to_superop([H(0).matrix()])
        np.testing.assert_allclose(apply_superop(rho, o, 0, 1), apply_gate(rho, H(0), 1), atol=1e-12)


# -- round trip ---------------------------------------------------------------

@st.composite
def circuits(draw):
    n = draw(st.integers(1, 3))
    mode = draw(st.sampled_from(["pure", "dm"]))
    q = st.integers(0, n - 1)
    gate = st.one_of(
        st.builds(U1, q, st.integers(0, 7)),
        st.builds(U2, q, st.integers(0, 3)),
        st.builds(H, q),
    )
    if n > 1:
        pair = st.lists(q, min_size=2, max_size=2, unique=True).map(lambda p: CNOT(*p))
        gate = st.one_of(gate, pair)
    choices = [gate]
    if mode == "dm":
        depol = st.builds(Depolarizing, q, st.floats(0, 1, allow_nan=False))
        mix = st.floats(0, 1, allow_nan=False).map(
            lambda p: (np.sqrt(p) * np.eye(2), np.sqrt(1 - p) * np.diag([1, -1]))
        )
        kraus = st.builds(GeneralKraus, q, mix)
        superop = st.builds(GeneralSuperop, q, st.just(kraus_to_superop(erasure_kraus())))
        choices += [depol, st.builds(Erasure, q), kraus, superop]
    ops = draw(st.lists(st.one_of(*choices), max_size=8))
    name = draw(st.sampled_from(["", "demo", "noisy-run"]))
    return CircuitSpec(n, mode, tuple(ops), name)


class TestRoundTrip:
    @settings(max_examples=200, deadline=None)
    @given(circuits())
    def test_parse_format_identity(self, spec):
        assert parse_circuit(format_circuit(spec)) == spec

    def test_trace_out_round_trip(self):
        spec = CircuitSpec(2, "dm", (H(0), TraceOut(1)))
        assert parse_circuit(format_circuit(spec)) == spec
