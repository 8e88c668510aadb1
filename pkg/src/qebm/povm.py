"""Single-qubit POVMs, dual frames, exact outcome tables and measurement sampling.

Outcome symbols are stored 0-based (``0..q-1``) in memory; the text sample
format on disk is 1-based. Outcome strings index a :class:`ProbTable` in
mixed-radix little-endian order, ``index = sum_i sigma_i * q**i``.
"""
from __future__ import annotations

import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptFileError, LinearDependenceError, SizeError
from .qsim import DensityMatrix, PureState

TABLE_CAP = 2**24
POVM_KINDS = ("computational", "tetrahedral", "rotated-tetrahedral")

_PAULI = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


def pauli_vector(op: np.ndarray) -> np.ndarray:
    """Real coordinates (Tr op, Tr op X, Tr op Y, Tr op Z) of a 2x2 operator."""
    return np.einsum("kij,ji->k", _PAULI, op).real


@dataclass
class Povm:
    q: int
    ops: np.ndarray  # (q, 2, 2) complex
    label: str
    seed: int | None = None

    def check(self, tol: float = 1e-12) -> None:
        if not np.allclose(self.ops.sum(axis=0), np.eye(2), atol=tol, rtol=0):
            raise ConfigError(f"POVM {self.label!r} does not sum to identity")
        for a, M in enumerate(self.ops):
            if np.max(np.abs(M - M.conj().T)) > tol:
                raise ConfigError(f"POVM element {a} is not Hermitian")
            if np.linalg.eigvalsh(M).min() < -tol:
                raise ConfigError(f"POVM element {a} is not positive")

    def describe(self) -> str:
        return self.label if self.seed is None else f"{self.label}(seed={self.seed})"


def haar_unitary(seed: int, dim: int = 2) -> np.ndarray:
    """Haar-random unitary from the QR decomposition of a seeded Ginibre matrix."""
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    Q, R = np.linalg.qr(z)
    d = np.diagonal(R)
    return Q * (d / np.abs(d))


def _tetrahedral_ops() -> np.ndarray:
    ops = [np.array([[0.5, 0], [0, 0]], dtype=complex)]
    for k in range(3):
        ph = np.exp(2j * np.pi * k / 3)
        v = np.array([1 / np.sqrt(3), np.sqrt(2 / 3) * ph])
        ops.append(0.5 * np.outer(v, v.conj()))
    return np.array(ops)


def build_povm(kind: str, seed: int | None = None) -> Povm:
    if kind == "computational":
        ops = np.array([np.diag([1, 0]), np.diag([0, 1])], dtype=complex)
        return Povm(2, ops, kind)
    if kind == "tetrahedral":
        return Povm(4, _tetrahedral_ops(), kind)
    if kind == "rotated-tetrahedral":
        if seed is None:
            raise ConfigError("rotated-tetrahedral POVM requires a seed")
        U = haar_unitary(seed)
        ops = np.array([U @ M @ U.conj().T for M in _tetrahedral_ops()])
        return Povm(4, ops, kind, seed=int(seed))
    raise ConfigError(f"unknown POVM kind {kind!r}; expected one of {POVM_KINDS}")


@dataclass
class DualSet:
    gram: np.ndarray  # (q, q) real
    duals: np.ndarray  # (q, 2, 2) complex
    informationally_complete: bool
    povm: Povm


def dual_operators(povm: Povm, max_condition: float = 1e8) -> DualSet:
    ops = povm.ops
    gram = np.einsum("aij,bji->ab", ops, ops).real
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond >= max_condition:
        raise LinearDependenceError(
            f"POVM {povm.describe()!r} has linearly dependent elements (Gram condition {cond:.2e})"
        )
    inv = np.linalg.inv(gram)
    duals = np.einsum("ab,bij->aij", inv, ops)
    vecs = np.array([pauli_vector(M) for M in ops])
    ic = np.linalg.matrix_rank(vecs, tol=1e-9) == 4
    return DualSet(gram=gram, duals=duals, informationally_complete=bool(ic), povm=povm)


# -- exact outcome tables -----------------------------------------------------


@dataclass
class ProbTable:
    n: int
    q: int
    probs: np.ndarray

    def configs(self) -> np.ndarray:
        """All q**n outcome strings, row ``i`` matching ``probs[i]``."""
        return decode_index(np.arange(self.q**self.n), self.n, self.q)

    def support(self, tol: float = 0.0):
        """(configs, probs) restricted to entries with probability > tol."""
        keep = np.nonzero(self.probs > tol)[0]
        return decode_index(keep, self.n, self.q), self.probs[keep]


def decode_index(index: np.ndarray, n: int, q: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    out = np.empty((index.size, n), dtype=np.int8)
    rem = index.copy()
    for i in range(n):
        out[:, i] = rem % q
        rem //= q
    return out


def encode_configs(configs: np.ndarray, q: int) -> np.ndarray:
    configs = np.asarray(configs, dtype=np.int64)
    weights = q ** np.arange(configs.shape[1], dtype=np.int64)
    return configs @ weights


def _check_table_size(n: int, q: int, cap: int) -> None:
    if q**n > cap:
        raise SizeError(
            f"outcome table of size {q}^{n} exceeds cap {cap}; use an external sampler "
            "and ingest samples instead"
        )


def outcome_distribution(state, povm: Povm, cap: int = TABLE_CAP) -> ProbTable:
    """Born-rule table Tr(rho M_s1 x ... x M_sn), one site contracted at a time."""
    n, q = state.n, povm.q
    _check_table_size(n, q, cap)
    if isinstance(state, PureState):
        probs = _pure_outcomes(state, povm)
    else:
        probs = _mixed_outcomes(state, povm)
    lo = probs.min()
    if lo < -1e-12:
        raise ConfigError(f"negative outcome probability {lo:.3e}; state is not a valid density matrix")
    probs = np.clip(probs, 0.0, None)
    total = probs.sum()
    if abs(total - 1.0) > 1e-8:
        raise ConfigError(f"outcome probabilities sum to {total:.12f}")
    return ProbTable(n, q, probs / total)


def _mixed_outcomes(state: DensityMatrix, povm: Povm) -> np.ndarray:
    n = state.n
    T = state.data.reshape((2,) * (2 * n))
    for k in range(n):
        # rows then cols; qubit k is the last axis of each remaining group
        r = n - 1 - k
        c = 2 * (n - k) - 1
        T = np.tensordot(T, povm.ops, axes=([r, c], [2, 1]))
    # outcome axes are now in site order 0..n-1; C-order flattening wants n-1 first
    return T.transpose(tuple(range(n - 1, -1, -1))).reshape(-1).real


def _pure_outcomes(state: PureState, povm: Povm) -> np.ndarray:
    n, q = state.n, povm.q
    # M_a = sum_r w_ar w_ar^dagger
    vecs, owner = [], []
    for a, M in enumerate(povm.ops):
        lam, V = np.linalg.eigh(M)
        for lv, v in zip(lam, V.T):
            if lv > 1e-14:
                vecs.append(np.sqrt(lv) * v)
                owner.append(a)
    W = np.array(vecs).conj()  # (K, 2)
    K = len(vecs)
    T = state.amplitudes.reshape((2,) * n)
    for k in range(n):
        # amplitude axes: remaining qubits n-1-k..0 occupy 0..n-1-k, the last is qubit k
        T = np.tensordot(T, W, axes=([n - 1 - k], [1]))
    P = np.abs(T) ** 2
    if K != q or owner != list(range(q)):
        S = np.zeros((K, q))
        S[np.arange(K), owner] = 1.0
        for _ in range(n):
            P = np.tensordot(P, S, axes=([0], [0]))
    return P.transpose(tuple(range(n - 1, -1, -1))).reshape(-1)


# -- sample sets --------------------------------------------------------------


@dataclass
class SampleSet:
    n: int
    q: int
    rows: np.ndarray  # (m, n) int8, symbols 0..q-1
    provenance: str = ""

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.int8)
        if self.rows.ndim != 2 or self.rows.shape[1] != self.n:
            raise ConfigError(f"sample rows of shape {self.rows.shape} do not match n={self.n}")
        if self.rows.size and (self.rows.min() < 0 or self.rows.max() >= self.q):
            raise ConfigError(f"sample symbols out of range for q={self.q}")

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    def unique(self):
        """(distinct rows, counts, inverse) so row-wise work can run on distinct rows."""
        rows, inv, counts = np.unique(self.rows, axis=0, return_inverse=True, return_counts=True)
        return rows, counts, inv.reshape(-1)

    def histogram(self) -> np.ndarray:
        """Empirical probability vector over all q**n outcomes."""
        _check_table_size(self.n, self.q, TABLE_CAP)
        idx = encode_configs(self.rows, self.q)
        return np.bincount(idx, minlength=self.q**self.n) / self.m

    def write(self, path) -> None:
        header = f"#qebm-samples v1 q={self.q} n={self.n} m={self.m} provenance={self.provenance}"
        buf = io.StringIO()
        np.savetxt(buf, self.rows.astype(np.int64) + 1, fmt="%d", delimiter=" ")
        Path(path).write_text(header + "\n" + buf.getvalue())

    @classmethod
    def read(cls, path) -> "SampleSet":
        text = Path(path).read_text()
        return cls.parse(text)

    @classmethod
    def parse(cls, text: str) -> "SampleSet":
        lines = text.splitlines()
        if not lines:
            raise CorruptFileError("empty sample file")
        m_ = re.match(r"#qebm-samples v(\d+) q=(\d+) n=(\d+) m=(\d+) provenance=(.*)$", lines[0])
        if m_ is None:
            raise CorruptFileError(f"bad sample header: {lines[0][:80]!r}")
        version, q, n, m = (int(m_.group(i)) for i in range(1, 5))
        if version != 1:
            raise CorruptFileError(f"unsupported sample format version {version}")
        body = [ln for ln in lines[1:] if ln.strip()]
        if len(body) != m:
            raise CorruptFileError(f"header declares m={m} rows, found {len(body)}")
        try:
            rows = np.array([[int(t) for t in ln.split()] for ln in body], dtype=np.int64)
        except ValueError as exc:
            raise CorruptFileError(f"non-integer symbol in sample file: {exc}") from exc
        if rows.size == 0:
            rows = rows.reshape(0, n)
        if rows.ndim != 2 or rows.shape[1] != n:
            raise CorruptFileError(f"rows do not all have n={n} symbols")
        if rows.size and (rows.min() < 1 or rows.max() > q):
            raise CorruptFileError(f"symbol outside 1..{q}")
        return cls(n, q, (rows - 1).astype(np.int8), provenance=m_.group(5))


def sample_outcomes(source, m: int, seed: int, povm: Povm | None = None, cap: int = TABLE_CAP) -> SampleSet:
    """Draw ``m`` i.i.d. outcome strings by inverse-CDF lookup in the exact table."""
    if m < 1:
        raise ConfigError("number of samples m must be >= 1")
    if isinstance(source, ProbTable):
        table, label = source, "table"
    else:
        if povm is None:
            raise ConfigError("sampling from a state requires a POVM")
        table = outcome_distribution(source, povm, cap=cap)
        label = f"{povm.describe()}|{getattr(source, 'label', '') or 'state'}"
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(table.probs)
    idx = np.searchsorted(cdf, rng.random(m) * cdf[-1], side="right")
    idx = np.minimum(idx, table.probs.size - 1)
    rows = decode_index(idx, table.n, table.q)
    return SampleSet(table.n, table.q, rows, provenance=f"{label}|seed={seed}")
