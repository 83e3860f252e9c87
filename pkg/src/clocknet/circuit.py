"""Dense state-vector simulator used as an exact oracle at small qubit counts.

Qubit ``q`` is axis ``q`` of the ``[2] * n`` reshaped amplitude tensor, i.e.
qubit 0 is the most significant bit of the basis index.  In the entangling
protocol clock qubits are numbered node-major (``node * n + i``) and the
``2(K-1)`` center ancillas ``a_2..a_K, b_2..b_K`` are appended after them.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_CAP = 20
NORM_TOL = 1e-12

_SQ2 = 1 / math.sqrt(2)
_H = np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class BadQubitIndex(IndexError):
    pass


class TooManyQubits(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    name: str
    param: float = 0.0

    @property
    def arity(self) -> int:
        return 2 if self.name == "CNOT" else 1

    def matrix(self) -> np.ndarray:
        if self.name == "H":
            return _H
        if self.name == "X":
            return _X
        if self.name == "Z":
            return _Z
        if self.name == "PHASE":
            return np.array([[1, 0], [0, np.exp(1j * self.param)]], dtype=complex)
        raise ValueError(f"{self.name} has no single-qubit matrix")


H = Gate("H")
X = Gate("X")
Z = Gate("Z")
CNOT = Gate("CNOT")


def PhaseRot(chi: float) -> Gate:
    """diag(1, e^{i chi})"""
    return Gate("PHASE", float(chi))


class PureState:
    def __init__(self, amplitudes, cap: int = DEFAULT_CAP):
        amps = np.asarray(amplitudes, dtype=complex).ravel()
        n = int(round(math.log2(amps.size))) if amps.size else -1
        if n < 0 or 2**n != amps.size:
            raise ValueError("amplitude vector length must be a power of two")
        if n > cap:
            raise TooManyQubits(f"{n} qubits exceeds cap {cap}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1) > 1e-9:
            raise ValueError(f"state not normalized (norm {norm})")
        self.amplitudes = amps
        self.num_qubits = n
        self.cap = cap

    @classmethod
    def zeros(cls, n: int, cap: int = DEFAULT_CAP) -> "PureState":
        if n > cap:
            raise TooManyQubits(f"{n} qubits exceeds cap {cap}")
        amps = np.zeros(2**n, dtype=complex)
        amps[0] = 1
        return cls(amps, cap)

    def copy(self) -> "PureState":
        return PureState(self.amplitudes.copy(), self.cap)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def fidelity(self, other: "PureState | np.ndarray") -> float:
        b = other.amplitudes if isinstance(other, PureState) else np.asarray(other, dtype=complex)
        return float(abs(np.vdot(self.amplitudes, b)) ** 2)

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape([2] * self.num_qubits)

    def __repr__(self) -> str:
        return f"PureState(num_qubits={self.num_qubits})"


def ghz_state(n: int, chi: float = 0.0) -> PureState:
    """[|0...0> + e^{i chi}|1...1>]/sqrt(2)"""
    amps = np.zeros(2**n, dtype=complex)
    amps[0] = _SQ2
    amps[-1] += _SQ2 * np.exp(1j * chi)
    return PureState(amps)


def _check(state: PureState, qubits: Sequence[int]) -> None:
    if len(set(qubits)) != len(qubits):
        raise BadQubitIndex(f"qubit indices must be distinct: {qubits}")
    for q in qubits:
        if not 0 <= q < state.num_qubits:
            raise BadQubitIndex(f"qubit {q} out of range for {state.num_qubits} qubits")


def apply_gate(state: PureState, gate: Gate, qubits: int | Sequence[int]) -> PureState:
    qs = [qubits] if isinstance(qubits, (int, np.integer)) else list(qubits)
    if len(qs) != gate.arity:
        raise BadQubitIndex(f"{gate.name} acts on {gate.arity} qubit(s), got {qs}")
    _check(state, qs)
    t = state.tensor()
    if gate.name == "CNOT":
        c, tgt = qs
        out = t.copy()
        sel = [slice(None)] * state.num_qubits
        sel[c] = 1
        sub = out[tuple(sel)]
        axis = tgt - (1 if tgt > c else 0)
        out[tuple(sel)] = np.flip(sub, axis=axis)
    else:
        q = qs[0]
        out = np.moveaxis(np.tensordot(gate.matrix(), t, axes=([1], [q])), 0, q)
    return PureState(out.reshape(-1), state.cap)


def evolve_phases(state: PureState, per_qubit_phase: Sequence[float]) -> PureState:
    """Apply the product of diag(1, e^{i phi_q}) over all qubits."""
    phases = np.asarray(per_qubit_phase, dtype=float)
    if phases.size != state.num_qubits:
        raise ValueError("need one phase per qubit")
    bits = _bit_table(state.num_qubits)
    total = bits @ phases
    return PureState(state.amplitudes * np.exp(1j * total), state.cap)


def _bit_table(n: int) -> np.ndarray:
    idx = np.arange(2**n)
    return ((idx[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1).astype(float)


def _sample_index(probs: np.ndarray, rng: np.random.Generator, shots=None):
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    u = rng.random(shots)
    return np.minimum(np.searchsorted(cdf, u, side="right"), probs.size - 1)


def measure_x_parity(state: PureState, rng: np.random.Generator) -> tuple[int, tuple[int, ...]]:
    """Measure every qubit in the x basis; returns (parity, per-qubit +-1 outcomes)."""
    parities, outcomes = _x_basis_samples(state, rng, 1)
    return int(parities[0]), tuple(int(x) for x in outcomes[0])


def sample_x_parities(state: PureState, shots: int, rng: np.random.Generator) -> np.ndarray:
    """``shots`` independent x-basis parity measurements of copies of ``state``."""
    return _x_basis_samples(state, rng, shots)[0]


def _x_basis_samples(state: PureState, rng, shots):
    rotated = state
    for q in range(state.num_qubits):
        rotated = apply_gate(rotated, H, q)
    probs = np.abs(rotated.amplitudes) ** 2
    idx = _sample_index(probs, rng, shots)
    n = state.num_qubits
    bits = (idx[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    outcomes = 1 - 2 * bits  # |+> -> +1, |-> -> -1
    return np.prod(outcomes, axis=1), outcomes


def x_parity_probability(state: PureState) -> float:
    """Exact probability of parity +1 in the x basis."""
    rotated = state
    for q in range(state.num_qubits):
        rotated = apply_gate(rotated, H, q)
    probs = np.abs(rotated.amplitudes) ** 2
    even = _bit_table(state.num_qubits).sum(axis=1) % 2 == 0
    return float(probs[even].sum())


def bell_measure(state: PureState, qubit_a: int, qubit_b: int, rng: np.random.Generator | None = None,
                 outcome: tuple[int, int] | None = None) -> tuple[tuple[int, int], PureState]:
    """Bell-basis measurement of (a, b).

    Returns bits ``(m_a, m_b)`` with Phi+ -> (0, 0), Phi- -> (1, 0),
    Psi+ -> (0, 1), Psi- -> (1, 1), and the renormalized post-measurement state
    (the pair left in the observed Bell state). Passing ``outcome`` projects
    onto that branch instead of sampling; it must have nonzero probability.
    """
    _check(state, [qubit_a, qubit_b])
    rot = apply_gate(apply_gate(state, CNOT, [qubit_a, qubit_b]), H, qubit_a)
    t = rot.tensor()
    probs = np.zeros((2, 2))
    for ma, mb in itertools.product((0, 1), repeat=2):
        sel = [slice(None)] * state.num_qubits
        sel[qubit_a], sel[qubit_b] = ma, mb
        probs[ma, mb] = float(np.sum(np.abs(t[tuple(sel)]) ** 2))
    if outcome is None:
        if rng is None:
            raise ValueError("need rng or a forced outcome")
        flat = int(_sample_index(probs.ravel(), rng))
        outcome = (flat // 2, flat % 2)
    ma, mb = outcome
    p = probs[ma, mb]
    if p < 1e-14:
        raise ValueError(f"outcome {outcome} has zero probability")
    proj = np.zeros_like(t)
    sel = [slice(None)] * state.num_qubits
    sel[qubit_a], sel[qubit_b] = ma, mb
    proj[tuple(sel)] = t[tuple(sel)] / math.sqrt(p)
    post = PureState(proj.reshape(-1), state.cap)
    post = apply_gate(apply_gate(post, H, qubit_a), CNOT, [qubit_a, qubit_b])
    return (int(ma), int(mb)), post


def extract_subsystem(state: PureState, keep: Sequence[int], tol: float = 1e-10) -> PureState:
    """Return the pure state of ``keep`` when it factorizes from the rest."""
    n = state.num_qubits
    rest = [q for q in range(n) if q not in keep]
    mat = np.transpose(state.tensor(), list(keep) + rest).reshape(2 ** len(keep), 2 ** len(rest))
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    if 1 - s[0] ** 2 > tol:
        raise ValueError(f"subsystem is entangled with the rest (purity deficit {1 - s[0] ** 2:.3g})")
    vec = u[:, 0]
    lead = vec[np.argmax(np.abs(vec) > 1e-9)]
    return PureState(vec * (abs(lead) / lead), state.cap)


def protocol_layout(k: int, n: int) -> dict[str, list[int]]:
    """Qubit indices used by :func:`run_entangling_protocol`."""
    clock = list(range(k * n))
    a = [k * n + j for j in range(k - 1)]
    b = [k * n + (k - 1) + j for j in range(k - 1)]
    return {"clock": clock, "a": a, "b": b}


def run_entangling_protocol(k: int, n: int, rng: np.random.Generator | None = None,
                            outcomes: Sequence[tuple[int, int]] | None = None,
                            cap: int = DEFAULT_CAP) -> PureState:
    """Teleportation-based preparation of [|0> + i|1>]/sqrt(2) over K*n clock qubits.

    The center builds a GHZ over its first clock qubit and the ``b`` ancillas,
    shares EPR pairs ``(a_j, 1_j)``, Bell-measures each ``(b_j, a_j)`` pair and
    the receiving node applies ``X^{m_a} Z^{m_b}``; every node then fans out
    with CNOTs. ``outcomes`` forces the Bell results (one pair per remote
    node), which is how all branches are enumerated. Returns the clock-qubit
    state.
    """
    total = k * n + 2 * (k - 1)
    if total > cap:
        raise TooManyQubits(f"protocol needs {total} qubits, cap is {cap}")
    if k < 1 or n < 1:
        raise ValueError("need k >= 1 and n >= 1")
    lay = protocol_layout(k, n)
    first = [j * n for j in range(k)]
    st = PureState.zeros(total, cap)
    # local GHZ on the center: 1_1 and b_2..b_K
    st = apply_gate(st, H, first[0])
    st = apply_gate(st, PhaseRot(math.pi / 2), first[0])
    for bq in lay["b"]:
        st = apply_gate(st, CNOT, [first[0], bq])
    # EPR pairs (a_j, 1_j)
    for j in range(1, k):
        aq = lay["a"][j - 1]
        st = apply_gate(st, H, aq)
        st = apply_gate(st, CNOT, [aq, first[j]])
    # teleport b_j -> 1_j
    for j in range(1, k):
        aq, bq = lay["a"][j - 1], lay["b"][j - 1]
        forced = None if outcomes is None else tuple(outcomes[j - 1])
        (mb_phase, ma_parity), st = bell_measure(st, bq, aq, rng, forced)
        if ma_parity:
            st = apply_gate(st, X, first[j])
        if mb_phase:
            st = apply_gate(st, Z, first[j])
    # local fan-out
    for j in range(k):
        for i in range(1, n):
            st = apply_gate(st, CNOT, [first[j], first[j] + i])
    return extract_subsystem(st, lay["clock"])


def bell_branches(k: int) -> list[tuple[tuple[int, int], ...]]:
    """All 4^(K-1) Bell-outcome assignments of the entangling protocol."""
    pairs = list(itertools.product((0, 1), repeat=2))
    return list(itertools.product(pairs, repeat=k - 1))


def teleport_qubit(amplitudes: Sequence[complex], rng: np.random.Generator | None = None,
                   outcome: tuple[int, int] | None = None) -> PureState:
    """Teleport a single-qubit state through one EPR pair; returns the received qubit."""
    psi = PureState(np.asarray(amplitudes, dtype=complex))
    if psi.num_qubits != 1:
        raise ValueError("expected a single-qubit state")
    # qubits: 0 = source, 1 = sender's EPR half, 2 = receiver
    epr = np.zeros(4, dtype=complex)
    epr[0] = epr[3] = _SQ2
    st = PureState(np.kron(psi.amplitudes, epr))
    (m_src, m_epr), st = bell_measure(st, 0, 1, rng, outcome)
    if m_epr:
        st = apply_gate(st, X, 2)
    if m_src:
        st = apply_gate(st, Z, 2)
    return extract_subsystem(st, [2])
