"""Small dense quantum states and exact reference expectation values.

Qubit ordering is little-endian throughout the package: qubit ``i`` is bit ``i``
of a computational-basis index, and character ``i`` of a Pauli string acts on
qubit ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegeneracyError, SizeError

MAX_DENSE_QUBITS = 14
MAX_PURE_QUBITS = 20

_KINDS = ("tim", "heisenberg", "custom-pauli-sum")


@dataclass
class HamiltonianSpec:
    n: int
    kind: str = "tim"
    edges: list = field(default_factory=list)
    g: float = 0.0
    terms: list = field(default_factory=list)

    def validate(self, cap: int = MAX_DENSE_QUBITS) -> None:
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown hamiltonian kind {self.kind!r}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        if self.n > cap:
            raise SizeError(f"n={self.n} exceeds the dense cap of {cap} qubits")
        for edge in self.edges:
            i, j, coupling = edge
            if not (0 <= i < j < self.n):
                raise ConfigError(f"edge {edge!r} out of range for n={self.n}")
            if not np.isfinite(coupling):
                raise ConfigError(f"non-finite coupling on edge {edge!r}")
        if not np.isfinite(self.g):
            raise ConfigError("non-finite transverse field")
        for string, coef in self.terms:
            _check_pauli_string(string, self.n)
            if not np.isfinite(coef):
                raise ConfigError(f"non-finite coefficient for term {string!r}")

    def pauli_terms(self) -> list[tuple[str, float]]:
        """Expand the spec into an explicit list of (pauli string, coefficient)."""
        out = []
        for i, j, coupling in self.edges:
            letters = ("X", "Y", "Z") if self.kind == "heisenberg" else ("Z",)
            for p in letters:
                s = ["I"] * self.n
                s[i] = s[j] = p
                out.append(("".join(s), float(coupling)))
        if self.kind == "tim" and self.g != 0.0:
            for i in range(self.n):
                s = ["I"] * self.n
                s[i] = "X"
                out.append(("".join(s), float(self.g)))
        out.extend((str(s), float(c)) for s, c in self.terms)
        return out

    def to_dict(self) -> dict:
        return {
            "n": int(self.n),
            "kind": self.kind,
            "edges": [[int(i), int(j), float(c)] for i, j, c in self.edges],
            "g": float(self.g),
            "terms": [[s, float(c)] for s, c in self.terms],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HamiltonianSpec":
        try:
            spec = cls(
                n=int(d["n"]),
                kind=d.get("kind", "tim"),
                edges=[tuple(e) for e in d.get("edges", [])],
                g=float(d.get("g", 0.0)),
                terms=[tuple(t) for t in d.get("terms", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed hamiltonian spec: {exc}") from exc
        return spec


def chain_edges(n: int, coupling: float, periodic: bool = False) -> list:
    edges = [(i, i + 1, coupling) for i in range(n - 1)]
    if periodic and n > 2:
        edges.append((0, n - 1, coupling))
    return edges


def square_lattice_edges(lx: int, ly: int, coupling: float = 1.0) -> list:
    """Open-boundary nearest-neighbour edges; site index is ``x + lx * y``."""
    edges = []
    for y in range(ly):
        for x in range(lx):
            s = x + lx * y
            if x + 1 < lx:
                edges.append((s, s + 1, coupling))
            if y + 1 < ly:
                edges.append((s, s + lx, coupling))
    return edges


def tim_chain(n: int, J: float = -1.0, g: float = 1.0, periodic: bool = False) -> HamiltonianSpec:
    return HamiltonianSpec(n=n, kind="tim", edges=chain_edges(n, J, periodic), g=g)


# -- Pauli strings as (bit-flip mask, phase) operators ------------------------


def _check_pauli_string(string: str, n: int) -> None:
    if len(string) != n:
        raise ConfigError(f"pauli string {string!r} has length {len(string)}, expected {n}")
    bad = set(string) - set("IXYZ")
    if bad:
        raise ConfigError(f"pauli string {string!r} has invalid letters {sorted(bad)}")


def _pauli_action(string: str):
    """Return (mask, phase) with P|x> = phase[x] |x ^ mask>."""
    n = len(string)
    idx = np.arange(2**n)
    mask = 0
    phase = np.ones(2**n, dtype=complex)
    for k, p in enumerate(string):
        bit = (idx >> k) & 1
        if p in "XY":
            mask |= 1 << k
        if p == "Z":
            phase *= 1 - 2 * bit
        elif p == "Y":
            phase *= 1j * (1 - 2 * bit)
    return mask, phase


def pauli_matrix(string: str) -> np.ndarray:
    n = len(string)
    _check_pauli_string(string, n)
    mask, phase = _pauli_action(string)
    idx = np.arange(2**n)
    out = np.zeros((2**n, 2**n), dtype=complex)
    out[idx ^ mask, idx] = phase
    return out


def build_hamiltonian(spec: HamiltonianSpec, cap: int = MAX_DENSE_QUBITS) -> np.ndarray:
    """Dense matrix of the Pauli sum described by ``spec``."""
    spec.validate(cap)
    dim = 2**spec.n
    idx = np.arange(dim)
    H = np.zeros((dim, dim), dtype=complex)
    for string, coef in spec.pauli_terms():
        mask, phase = _pauli_action(string)
        H[idx ^ mask, idx] += coef * phase
    return H


# -- states -------------------------------------------------------------------


def _num_qubits(dim: int) -> int:
    n = int(round(np.log2(dim)))
    if 2**n != dim:
        raise ConfigError(f"dimension {dim} is not a power of two")
    return n


@dataclass
class DensityMatrix:
    n: int
    data: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.n > MAX_DENSE_QUBITS:
            raise SizeError(f"density matrix on {self.n} qubits exceeds cap {MAX_DENSE_QUBITS}")
        if self.data.shape != (2**self.n, 2**self.n):
            raise ConfigError(f"density matrix shape {self.data.shape} does not match n={self.n}")

    def check(self, tol: float = 1e-10) -> None:
        rho = self.data
        if np.max(np.abs(rho - rho.conj().T)) > tol:
            raise ConfigError("density matrix is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > tol:
            raise ConfigError("density matrix trace differs from 1")
        if np.linalg.eigvalsh(rho).min() < -tol:
            raise ConfigError("density matrix has negative eigenvalues")

    def matrix(self) -> np.ndarray:
        return self.data


@dataclass
class PureState:
    n: int
    amplitudes: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.n > MAX_PURE_QUBITS:
            raise SizeError(f"pure state on {self.n} qubits exceeds cap {MAX_PURE_QUBITS}")
        if self.amplitudes.shape != (2**self.n,):
            raise ConfigError(f"amplitude vector shape {self.amplitudes.shape} does not match n={self.n}")

    def check(self, tol: float = 1e-10) -> None:
        if abs(np.vdot(self.amplitudes, self.amplitudes).real - 1.0) > tol:
            raise ConfigError("pure state is not normalized")

    def matrix(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())

    def to_density(self) -> DensityMatrix:
        return DensityMatrix(self.n, self.matrix(), label=self.label)


def _check_hermitian(H: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {H.shape}")
    scale = max(1.0, np.max(np.abs(H)))
    if np.max(np.abs(H - H.conj().T)) > tol * scale:
        raise ConfigError("matrix is not Hermitian")
    return H


def thermal_state(H: np.ndarray, beta: float) -> DensityMatrix:
    """exp(-beta H) / Tr exp(-beta H), stable for any beta >= 0."""
    if not beta >= 0:
        raise ConfigError(f"beta must be non-negative, got {beta}")
    H = _check_hermitian(H)
    n = _num_qubits(H.shape[0])
    w, V = np.linalg.eigh(H)
    # shifting by the ground energy keeps every weight in (0, 1]
    p = np.exp(-beta * (w - w[0]))
    p /= p.sum()
    rho = (V * p) @ V.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(n, rho, label=f"thermal(beta={beta})")


def ground_state(H: np.ndarray, degeneracy_tol: float = 1e-8) -> PureState:
    H = _check_hermitian(H)
    n = _num_qubits(H.shape[0])
    w, V = np.linalg.eigh(H)
    if len(w) > 1 and w[1] - w[0] < degeneracy_tol:
        raise DegeneracyError(
            f"ground space is degenerate (gap {w[1] - w[0]:.3e} < {degeneracy_tol:.1e}); "
            "break the symmetry, e.g. with a small longitudinal field"
        )
    psi = V[:, 0]
    k = int(np.argmax(np.abs(psi)))
    psi = psi * (abs(psi[k]) / psi[k])
    psi /= np.linalg.norm(psi)
    return PureState(n, psi, label="ground")


def ghz_family(n: int, variant: str = "plus", p: float | None = None):
    """GHZ_+/- pure states, or the mixture (1-p) GHZ_+ + p GHZ_-."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    plus = np.zeros(2**n, dtype=complex)
    minus = np.zeros(2**n, dtype=complex)
    plus[0] = minus[0] = 1 / np.sqrt(2)
    plus[-1] = 1 / np.sqrt(2)
    minus[-1] = -1 / np.sqrt(2)
    if variant == "plus":
        return PureState(n, plus, label="ghz+")
    if variant == "minus":
        return PureState(n, minus, label="ghz-")
    if variant == "mixture":
        if p is None or not (0.0 <= p <= 1.0):
            raise ConfigError(f"mixture weight p must lie in [0, 1], got {p!r}")
        rho = (1 - p) * np.outer(plus, plus.conj()) + p * np.outer(minus, minus.conj())
        return DensityMatrix(n, rho, label=f"ghz-mixture(p={p})")
    raise ConfigError(f"unknown GHZ variant {variant!r}")


def pauli_expectation_exact(state, pauli_string: str) -> float:
    n = state.n
    _check_pauli_string(pauli_string, n)
    mask, phase = _pauli_action(pauli_string)
    idx = np.arange(2**n)
    if isinstance(state, PureState):
        psi = state.amplitudes
        val = np.sum(np.conj(psi[idx ^ mask]) * phase * psi)
    else:
        val = np.sum(phase * state.data[idx, idx ^ mask])
    if abs(val.imag) > 1e-10:
        raise ValueError(f"expectation has imaginary part {val.imag:.3e}")
    return float(val.real)


def expectation(state, op: np.ndarray) -> float:
    rho = state.matrix()
    return float(np.trace(rho @ op).real)


def reduced_density_matrix(state, sites: Sequence[int]) -> np.ndarray:
    """Exact partial trace onto ``sites``.

    The output basis index is ``sum_k b[sites[k]] * 2**k``, matching the
    little-endian convention used for reduced-state estimates.
    """
    n = state.n
    sites = list(sites)
    if len(set(sites)) != len(sites) or any(not 0 <= s < n for s in sites):
        raise ConfigError(f"invalid sites {sites} for n={n}")
    letters = "abcdefghijklmnopqrstuvwxyz"
    # tensor axis j corresponds to qubit n-1-j
    row = [letters[i] for i in range(n)]
    col = [letters[i].upper() for i in range(n)]
    keep = set(sites)
    for q in range(n):
        if q not in keep:
            col[n - 1 - q] = row[n - 1 - q]
    out_rows = "".join(row[n - 1 - s] for s in reversed(sites))
    out_cols = "".join(col[n - 1 - s] for s in reversed(sites))
    k = len(sites)
    if isinstance(state, PureState):
        psi = state.amplitudes.reshape((2,) * n)
        sub = f"{''.join(row)},{''.join(col)}->{out_rows}{out_cols}"
        red = np.einsum(sub, psi, psi.conj())
    else:
        rho = state.data.reshape((2,) * (2 * n))
        sub = f"{''.join(row)}{''.join(col)}->{out_rows}{out_cols}"
        red = np.einsum(sub, rho)
    return red.reshape(2**k, 2**k)
