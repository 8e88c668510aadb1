"""Estimators on measurement records: observables and fidelities through the dual
frame, reduced states, trace distance, TVD, and polynomial order strengths."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .ebm import EnergyModel
from .errors import ConfigError, SizeError, SpanError
from .families import FlipSymmetrized, PolyLocal, Shifted
from .povm import DualSet, ProbTable, SampleSet, pauli_vector, sample_outcomes
from .qsim import PureState

_PAULI_2x2 = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
SPAN_TOL = 1e-9
FIDELITY_TERM_CAP = 16


@dataclass
class ObservableSpec:
    n: int
    site_ops: dict  # site -> 2x2 Hermitian matrix, identity sites omitted
    name: str = ""

    @classmethod
    def pauli(cls, string: str) -> "ObservableSpec":
        bad = set(string) - set("IXYZ")
        if bad:
            raise ConfigError(f"invalid pauli letters {sorted(bad)} in {string!r}")
        ops = {i: _PAULI_2x2[p] for i, p in enumerate(string) if p != "I"}
        return cls(len(string), ops, name=string)

    @classmethod
    def product(cls, n: int, site_ops: dict, name: str = "") -> "ObservableSpec":
        ops = {}
        for site, M in site_ops.items():
            M = np.asarray(M, dtype=complex)
            if not 0 <= site < n:
                raise ConfigError(f"site {site} out of range for n={n}")
            if M.shape != (2, 2) or np.max(np.abs(M - M.conj().T)) > 1e-12:
                raise ConfigError(f"operator on site {site} is not a Hermitian 2x2 matrix")
            ops[int(site)] = M
        return cls(n, ops, name=name or "product")

    @property
    def support(self) -> list[int]:
        return sorted(self.site_ops)


@dataclass
class EstimateResult:
    mean: float
    stderr: float
    N: int

    def record(self, observable: str) -> dict:
        return {"observable": observable, "mean": self.mean, "stderr": self.stderr, "N": self.N}

    def to_json(self, observable: str) -> str:
        return json.dumps(self.record(observable), sort_keys=True)


def _summarize(values: np.ndarray) -> EstimateResult:
    N = values.size
    if N < 1:
        raise ConfigError("no samples to estimate from")
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / np.sqrt(N)) if N > 1 else 0.0
    return EstimateResult(mean, stderr, N)


def _check_dims(samples: SampleSet, duals: DualSet) -> None:
    if samples.q != duals.povm.q:
        raise ConfigError(f"samples have q={samples.q} but the POVM has q={duals.povm.q}")


def site_factor(duals: DualSet, op: np.ndarray) -> np.ndarray:
    """Tr(D_a O) for each outcome a, after checking O lies in the span of the POVM."""
    A = np.array([pauli_vector(M) for M in duals.povm.ops])  # (q, 4)
    v = pauli_vector(op)
    coef, *_ = np.linalg.lstsq(A.T, v, rcond=None)
    resid = np.linalg.norm(A.T @ coef - v)
    if resid > SPAN_TOL * max(1.0, np.linalg.norm(v)):
        raise SpanError(
            f"operator lies outside the span of POVM {duals.povm.describe()!r} (residual {resid:.2e})"
        )
    return np.einsum("aij,ji->a", duals.duals, op).real


def estimate_observable(samples: SampleSet, duals: DualSet, obs: ObservableSpec) -> EstimateResult:
    _check_dims(samples, duals)
    if obs.n != samples.n:
        raise ConfigError(f"observable acts on {obs.n} qubits, samples have n={samples.n}")
    values = np.ones(samples.m)
    for site in obs.support:
        values *= site_factor(duals, obs.site_ops[site])[samples.rows[:, site]]
    return _summarize(values)


def _sparse_target(target, n: int, cap: int):
    if isinstance(target, PureState):
        idx = np.nonzero(np.abs(target.amplitudes) > 1e-14)[0]
        terms = {int(i): complex(target.amplitudes[i]) for i in idx}
    else:
        terms = {int(k): complex(v) for k, v in dict(target).items()}
    if len(terms) > cap:
        raise SizeError(f"fidelity target has {len(terms)} basis terms, cap is {cap}")
    if any(not 0 <= k < 2**n for k in terms):
        raise ConfigError("fidelity target basis index out of range")
    return terms


def estimate_fidelity(samples: SampleSet, duals: DualSet, target, cap: int = FIDELITY_TERM_CAP,
                      chunk: int = 8192) -> EstimateResult:
    """<psi| D_tau1 x ... x D_taun |psi> averaged over samples, psi a sparse superposition."""
    _check_dims(samples, duals)
    if not duals.informationally_complete:
        raise SpanError("fidelity estimation needs an informationally complete POVM")
    n = samples.n
    terms = _sparse_target(target, n, cap)
    keys = np.array(sorted(terms))
    amps = np.array([terms[k] for k in keys])
    xs, ys = np.meshgrid(keys, keys, indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    weight = (np.conj(amps)[:, None] * amps[None, :]).ravel()
    rows, _, inv = samples.unique()
    per_row = np.empty(rows.shape[0])
    D = duals.duals
    for lo in range(0, rows.shape[0], chunk):
        block = rows[lo:lo + chunk].astype(np.int64)
        prod = np.ones((block.shape[0], xs.size), dtype=complex)
        for i in range(n):
            prod *= D[block[:, i][:, None], (xs >> i) & 1, (ys >> i) & 1]
        val = prod @ weight
        if np.max(np.abs(val.imag), initial=0.0) > 1e-9:
            raise ConfigError(f"fidelity estimate has imaginary residue {np.max(np.abs(val.imag)):.2e}")
        per_row[lo:lo + chunk] = val.real
    return _summarize(per_row[inv])


def estimate_reduced_state(samples: SampleSet, duals: DualSet, sites) -> np.ndarray:
    """Raw (Hermitized, not PSD-projected) dual-frame estimate of a 1- or 2-site reduced state.

    For sites (i, j) the basis index is b_i + 2 b_j.
    """
    _check_dims(samples, duals)
    if not duals.informationally_complete:
        raise SpanError("reduced-state estimation needs an informationally complete POVM")
    sites = [int(s) for s in np.atleast_1d(sites)]
    if len(sites) not in (1, 2) or len(set(sites)) != len(sites):
        raise ConfigError("reduced states are estimated on 1 or 2 distinct sites")
    q, D = samples.q, duals.duals
    if len(sites) == 1:
        counts = np.bincount(samples.rows[:, sites[0]], minlength=q)
        est = np.einsum("a,aij->ij", counts / samples.m, D)
    else:
        i, j = sites
        idx = samples.rows[:, i].astype(np.int64) + q * samples.rows[:, j]
        freq = (np.bincount(idx, minlength=q * q) / samples.m).reshape(q, q)  # [b_j, a_i]
        est = np.einsum("ba,bkl,amn->kmln", freq, D, D).reshape(4, 4)
    return 0.5 * (est + est.conj().T)


def trace_distance(A: np.ndarray, B: np.ndarray) -> float:
    A, B = np.asarray(A, dtype=complex), np.asarray(B, dtype=complex)
    if A.shape != B.shape:
        raise ConfigError(f"shape mismatch {A.shape} vs {B.shape}")
    for M in (A, B):
        if np.max(np.abs(M - M.conj().T)) > 1e-8:
            raise ConfigError("trace distance needs Hermitian inputs")
    diff = A - B
    return float(0.5 * np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))).sum())


def tvd(p: np.ndarray, q: np.ndarray) -> float:
    return float(0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum())


def tvd_with_floor(model_samples: SampleSet, table: ProbTable, floor_seed: int):
    """(TVD of the empirical histogram to the table, TVD of an equal-size i.i.d. draw)."""
    if (model_samples.n, model_samples.q) != (table.n, table.q):
        raise ConfigError("sample dims do not match the table")
    est = tvd(model_samples.histogram(), table.probs)
    fresh = sample_outcomes(table, model_samples.m, floor_seed)
    return est, tvd(fresh.histogram(), table.probs)


def _poly_block(local):
    while isinstance(local, (Shifted, FlipSymmetrized)):
        local = local.base if isinstance(local, Shifted) else local.inner
    if not isinstance(local, PolyLocal):
        raise ConfigError(f"order strength needs a polynomial model, got family {local.family!r}")
    return local


def order_strength(model: EnergyModel) -> dict[int, float]:
    """Largest |coefficient| at each interaction order (order = |K| + 1)."""
    blocks = [_poly_block(b) for b in model.parameter_blocks()]
    L = max(b.L for b in blocks)
    strength = {k: 0.0 for k in range(1, L + 1)}
    for local in blocks:
        if local.q > 2:
            local.project_gauge()
        for K, c in local.blocks():
            k = len(K) + 1
            strength[k] = max(strength[k], float(np.max(np.abs(c))))
    return strength


def order_strength_text(strength: dict) -> str:
    return "".join(f"{k} {v:.17g}\n" for k, v in sorted(strength.items()))


# -- aggregate error metrics --------------------------------------------------


def reduced_state_errors(samples: SampleSet, duals: DualSet, state, body: int = 2) -> np.ndarray:
    """Trace distance between estimated and exact reduced states for all 1- or 2-site subsets."""
    from .qsim import reduced_density_matrix

    subsets = itertools.combinations(range(samples.n), body)
    return np.array([
        trace_distance(estimate_reduced_state(samples, duals, list(s)), reduced_density_matrix(state, list(s)))
        for s in subsets
    ])


def zz_correlations(samples: SampleSet, duals: DualSet, pairs) -> np.ndarray:
    out = []
    for i, j in pairs:
        s = ["I"] * samples.n
        s[i] = s[j] = "Z"
        out.append(estimate_observable(samples, duals, ObservableSpec.pauli("".join(s))).mean)
    return np.array(out)
