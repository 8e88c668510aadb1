"""Energy-based models assembled from per-spin local energies, their conditionals,
Gibbs sampling and the JSON model format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptFileError, SchemaError
from .families import (
    FlipSymmetrized,
    LocalEnergy,
    NeuralLocal,
    PolyLocal,
    Shifted,
    SymLocal,
)
from .povm import SampleSet

SYMMETRIES = ("none", "translation", "permutation")
MODEL_SCHEMA = "qebm-model"
MODEL_VERSION = 1


@dataclass
class EnergyModel:
    n: int
    q: int
    spins: list  # one LocalEnergy per spin
    symmetry: str = "none"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.symmetry not in SYMMETRIES:
            raise ConfigError(f"unknown symmetry {self.symmetry!r}")
        if len(self.spins) != self.n:
            raise ConfigError(f"model has {len(self.spins)} local energies for n={self.n}")
        for u, local in enumerate(self.spins):
            if local.u != u or local.n != self.n or local.q != self.q:
                raise ConfigError(f"local energy {u} has mismatched (u, n, q)")

    @property
    def family(self) -> str:
        return self.spins[0].family

    def parameter_blocks(self) -> list[LocalEnergy]:
        """Distinct underlying parameter blocks (one for shared symmetries)."""
        if self.symmetry == "none":
            return list(self.spins)
        return [self.spins[0]]

    def n_params(self) -> int:
        return sum(b.n_params for b in self.parameter_blocks())


def local_logits(local: LocalEnergy, configs: np.ndarray) -> np.ndarray:
    """<phi(a), f> for every symbol a: the centered local-energy vector."""
    f = local.value(configs)
    return f - f.mean(axis=1, keepdims=True)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def conditional(model: EnergyModel, u: int, config) -> np.ndarray:
    """P(sigma_u = a | rest) for all a; ``config`` is a full length-n symbol vector
    (or a batch of them), the entry at ``u`` is ignored."""
    if not 0 <= u < model.n:
        raise ConfigError(f"spin index {u} out of range")
    configs = np.atleast_2d(np.asarray(config))
    p = _softmax(local_logits(model.spins[u], configs))
    return p[0] if np.ndim(config) == 1 else p


def default_schedule(n: int) -> tuple[int, int]:
    return 10 * n, max(1, n // 2)


def gibbs_sample(model: EnergyModel, chains: int = 100, burn_in: int | None = None,
                 thin: int | None = None, total: int = 1000, seed: int = 0,
                 chunk: int = 256) -> SampleSet:
    """Systematic-scan Gibbs sampling with ``chains`` independent chains.

    Every chain owns the RNG stream ``default_rng([seed, chain])``; the chains
    are advanced together so each spin update is one batched evaluation.
    """
    d_burn, d_thin = default_schedule(model.n)
    burn_in = d_burn if burn_in is None else burn_in
    thin = d_thin if thin is None else thin
    if total < 1:
        raise ConfigError("total must be >= 1")
    if chains < 1 or burn_in < 0 or thin < 1:
        raise ConfigError("need chains >= 1, burn_in >= 0, thin >= 1")
    n, q = model.n, model.q
    rngs = [np.random.default_rng([seed, c]) for c in range(chains)]
    X = np.stack([r.integers(0, q, n) for r in rngs]).astype(np.int8)
    emissions = -(-total // chains)
    sweeps = burn_in + emissions * thin
    out = np.empty((emissions * chains, n), dtype=np.int8)
    emitted = 0
    done = 0
    while done < sweeps:
        block = min(chunk, sweeps - done)
        U = np.stack([r.random((block, n)) for r in rngs], axis=1)  # (block, chains, n)
        for s in range(block):
            for u in range(n):
                p = _softmax(local_logits(model.spins[u], X))
                cdf = np.cumsum(p, axis=1)
                X[:, u] = np.minimum((cdf < U[s, :, u, None] * cdf[:, -1:]).sum(axis=1), q - 1)
            done += 1
            if done > burn_in and (done - burn_in) % thin == 0:
                out[emitted * chains:(emitted + 1) * chains] = X
                emitted += 1
    prov = f"gibbs|chains={chains}|burn_in={burn_in}|thin={thin}|seed={seed}"
    return SampleSet(n, q, out[:total], provenance=prov)


# -- serialization ------------------------------------------------------------


def _local_to_dict(local: LocalEnergy) -> dict:
    flip = isinstance(local, FlipSymmetrized)
    inner = local.inner if flip else local
    if isinstance(inner, Shifted):
        inner = inner.base
    return {"family": inner.family, "flip_symmetric": flip, "params": inner.params_dict()}


def _local_from_dict(n: int, q: int, d: dict) -> LocalEnergy:
    family = d.get("family")
    builders = {"poly": PolyLocal, "nn": NeuralLocal, "sym": SymLocal}
    if family not in builders:
        raise SchemaError(f"unknown family tag {family!r}")
    try:
        local = builders[family].from_params_dict(n, q, d["params"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed {family} parameters: {exc}") from exc
    return FlipSymmetrized(local) if d.get("flip_symmetric") else local


def model_to_dict(model: EnergyModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "version": MODEL_VERSION,
        "n": model.n,
        "q": model.q,
        "symmetry": model.symmetry,
        "spins": [_local_to_dict(b) for b in model.parameter_blocks()],
        "meta": model.meta,
    }


def model_from_dict(d: dict) -> EnergyModel:
    if d.get("schema") != MODEL_SCHEMA:
        raise SchemaError(f"not a model document (schema={d.get('schema')!r})")
    if d.get("version") != MODEL_VERSION:
        raise SchemaError(f"unsupported model version {d.get('version')!r}")
    try:
        n, q, symmetry = int(d["n"]), int(d["q"]), d.get("symmetry", "none")
        blocks = [_local_from_dict(n, q, s) for s in d["spins"]]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed model document: {exc}") from exc
    if symmetry == "none":
        spins = blocks
    elif len(blocks) != 1:
        raise SchemaError(f"symmetry {symmetry!r} expects one parameter block, found {len(blocks)}")
    else:
        spins = [blocks[0] if u == blocks[0].u else blocks[0].for_spin(u) for u in range(n)]
    return EnergyModel(n, q, spins, symmetry=symmetry, meta=d.get("meta", {}))


def save_model(model: EnergyModel, path) -> None:
    # json writes floats with repr(), which round-trips exactly
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> EnergyModel:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"corrupt model file {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise CorruptFileError(f"corrupt model file {path}: top level is not an object")
    return model_from_dict(d)


def roundtrip(path) -> EnergyModel:
    return load_model(path)
