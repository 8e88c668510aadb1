"""Parametric local-energy families: polynomial, feed-forward neural net, symmetric table.

A local energy for spin ``u`` maps the other spins' symbols to a vector in R^q;
the spin's conditional is the softmax of that vector. Every family works on
batches of *full* configurations (``(m, n)`` int arrays, symbols ``0..q-1``)
and ignores column ``u``. ``forward`` returns the values plus a cache that
``backward`` turns into the parameter gradient of ``sum(G * f)``.
"""
from __future__ import annotations

import itertools
from math import comb

import numpy as np

from .errors import ConfigError, SchemaError


def centered_onehot(x: np.ndarray, q: int) -> np.ndarray:
    """phi_a(x) = delta(a, x) - 1/q, appended as a trailing axis."""
    out = np.full(np.shape(x) + (q,), -1.0 / q)
    np.put_along_axis(out, np.asarray(x, dtype=np.int64)[..., None], 1.0 - 1.0 / q, axis=-1)
    return out


def spins_pm(x: np.ndarray) -> np.ndarray:
    """Symbol 0 -> +1, symbol 1 -> -1."""
    return 1.0 - 2.0 * np.asarray(x, dtype=float)


class LocalEnergy:
    family = "base"

    def __init__(self, n: int, q: int, u: int):
        if not 0 <= u < n:
            raise ConfigError(f"spin index {u} out of range for n={n}")
        self.n, self.q, self.u = n, q, u

    @property
    def others(self) -> list[int]:
        return [j for j in range(self.n) if j != self.u]

    # subclasses implement these
    def forward(self, configs):
        raise NotImplementedError

    def backward(self, cache, G) -> np.ndarray:
        raise NotImplementedError

    def get_params(self) -> np.ndarray:
        raise NotImplementedError

    def set_params(self, flat: np.ndarray) -> None:
        raise NotImplementedError

    def project_gauge(self) -> None:
        pass

    @property
    def n_params(self) -> int:
        return self.get_params().size

    def value(self, configs) -> np.ndarray:
        return self.forward(np.atleast_2d(configs))[0]

    def value_grad(self, config):
        """Value (q,) and Jacobian (q, n_params) at one full configuration."""
        f, cache = self.forward(np.atleast_2d(config))
        jac = np.empty((self.q, self.n_params))
        for a in range(self.q):
            G = np.zeros((1, self.q))
            G[0, a] = 1.0
            jac[a] = self.backward(cache, G)
        return f[0], jac

    def for_spin(self, u: int) -> "LocalEnergy":
        """A view of this parameter block acting as spin ``u``'s local energy."""
        raise NotImplementedError

    def params_dict(self) -> dict:
        raise NotImplementedError


def _insert_u(config_without_u, u: int) -> np.ndarray:
    c = np.asarray(config_without_u)
    return np.insert(c, u, 0, axis=-1)


# -- polynomials --------------------------------------------------------------


class PolyLocal(LocalEnergy):
    """Polynomial local energy up to interaction order ``L`` (|K| <= L-1 neighbours).

    For q=2 the basis is the +-1 monomials: f = (h, -h) with
    h = sum_K J_K prod_{j in K} s_j, so <phi(sigma_u), f> = s_u h.
    For q>2 it is the centered-delta tensor basis with one (q^|K|, q) block per K.
    """

    family = "poly"

    def __init__(self, n: int, q: int, u: int, L: int, coef=None):
        super().__init__(n, q, u)
        if L < 1:
            raise ConfigError("polynomial order L must be >= 1")
        self.L = L
        self.subsets = [
            K for r in range(min(L - 1, n - 1) + 1) for K in itertools.combinations(self.others, r)
        ]
        if q == 2:
            self.block_sizes = [1] * len(self.subsets)
        else:
            self.block_sizes = [q ** len(K) * q for K in self.subsets]
        self.offsets = np.concatenate([[0], np.cumsum(self.block_sizes)]).astype(int)
        self.coef = np.zeros(self.offsets[-1]) if coef is None else np.asarray(coef, dtype=float).copy()

    def features(self, configs: np.ndarray) -> np.ndarray:
        m = configs.shape[0]
        cols = []
        if self.q == 2:
            s = spins_pm(configs)
            for K in self.subsets:
                cols.append(np.prod(s[:, list(K)], axis=1) if K else np.ones(m))
            return np.stack(cols, axis=1)
        phi = centered_onehot(configs, self.q)  # (m, n, q)
        for K in self.subsets:
            block = np.ones((m, 1))
            for j in K:
                block = (block[:, :, None] * phi[:, j, None, :]).reshape(m, -1)
            cols.append(block)
        return np.concatenate(cols, axis=1)

    def _weight_matrix(self) -> np.ndarray:
        return self.coef.reshape(-1, self.q)

    def forward(self, configs):
        F = self.features(np.asarray(configs))
        if self.q == 2:
            h = F @ self.coef
            return np.stack([h, -h], axis=1), F
        return F @ self._weight_matrix(), F

    def backward(self, F, G) -> np.ndarray:
        if self.q == 2:
            return F.T @ (G[:, 0] - G[:, 1])
        return (F.T @ G).reshape(-1)

    def get_params(self):
        return self.coef.copy()

    def set_params(self, flat):
        self.coef = np.asarray(flat, dtype=float).copy()

    def project_gauge(self) -> None:
        """Zero-sum over the output index and over every neighbour symbol (q>2)."""
        if self.q == 2:
            return
        for K, lo, hi in zip(self.subsets, self.offsets[:-1], self.offsets[1:]):
            block = self.coef[lo:hi].reshape((self.q,) * (len(K) + 1))
            for ax in range(block.ndim):
                block = block - block.mean(axis=ax, keepdims=True)
            self.coef[lo:hi] = block.reshape(-1)

    def blocks(self):
        """Yield (K, coefficient block). q=2 blocks are scalars; q>2 blocks have shape (q,)*|K| + (q,)."""
        for K, lo, hi in zip(self.subsets, self.offsets[:-1], self.offsets[1:]):
            if self.q == 2:
                yield K, self.coef[lo]
            else:
                yield K, self.coef[lo:hi].reshape((self.q,) * (len(K) + 1))

    def coupling(self, K) -> float:
        """Ising coefficient J_{u,K} (q=2 only)."""
        return float(self.coef[self.subsets.index(tuple(sorted(K)))])

    def for_spin(self, u):
        return Shifted(self, u)

    def params_dict(self) -> dict:
        terms = []
        if self.q == 2:
            for K, c in self.blocks():
                if c != 0.0:
                    terms.append([list(K), float(c)])
            return {"u": self.u, "L": self.L, "basis": "ising", "terms": terms}
        for K, block in self.blocks():
            for idx in zip(*np.nonzero(block)):
                terms.append([list(K), [int(b) for b in idx[:-1]], int(idx[-1]), float(block[idx])])
        return {"u": self.u, "L": self.L, "basis": "potts", "terms": terms}

    @classmethod
    def from_params_dict(cls, n, q, d):
        obj = cls(n, q, int(d["u"]), int(d["L"]))
        index = {K: lo for K, lo in zip(obj.subsets, obj.offsets[:-1])}
        for term in d["terms"]:
            K = tuple(term[0])
            if K not in index:
                raise SchemaError(f"polynomial term {K} not allowed for u={obj.u}, L={obj.L}")
            if q == 2:
                obj.coef[index[K]] = float(term[1])
            else:
                b, a, val = term[1], term[2], term[3]
                flat = np.ravel_multi_index(tuple(b) + (a,), (q,) * (len(K) + 1))
                obj.coef[index[K] + flat] = float(val)
        return obj


def poly_param_count(n: int, q: int, L: int) -> int:
    """Parameters per spin for an order-L polynomial local energy."""
    if q == 2:
        return sum(comb(n - 1, r) for r in range(min(L - 1, n - 1) + 1))
    return sum(comb(n - 1, r) * q**r * q for r in range(min(L - 1, n - 1) + 1))


def poly_value_grad(params: PolyLocal, config_without_u):
    return params.value_grad(_insert_u(config_without_u, params.u))


# -- neural nets --------------------------------------------------------------


def swish(x):
    return x / (1.0 + np.exp(-x))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def swish_grad(x):
    s = _sigmoid(x)
    return s + x * s * (1.0 - s)


ENCODINGS = ("pm1", "onehot", "raw")


class NeuralLocal(LocalEnergy):
    """Feed-forward net with ``depth`` swish hidden layers of ``width`` units and a linear output."""

    family = "nn"

    def __init__(self, n, q, u, depth=3, width=15, encoding=None, seed=0, layers=None):
        super().__init__(n, q, u)
        if depth < 1 or width < 1:
            raise ConfigError("depth and width must be >= 1")
        self.depth, self.width = depth, width
        self.encoding = encoding or ("pm1" if q == 2 else "onehot")
        if self.encoding not in ENCODINGS:
            raise ConfigError(f"unknown input encoding {self.encoding!r}")
        if self.encoding == "pm1" and q != 2:
            raise ConfigError("pm1 encoding requires q=2")
        sizes = [self.input_dim] + [width] * depth + [q]
        if layers is None:
            rng = np.random.default_rng(seed)
            layers = []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                lim = np.sqrt(6.0 / (fan_in + fan_out))
                layers.append((rng.uniform(-lim, lim, (fan_in, fan_out)), np.zeros(fan_out)))
        for (A, b), fi, fo in zip(layers, sizes[:-1], sizes[1:]):
            if A.shape != (fi, fo) or b.shape != (fo,):
                raise ConfigError(f"layer shape {A.shape}/{b.shape} does not match ({fi}, {fo})")
        if len(layers) != depth + 1:
            raise ConfigError(f"expected {depth + 1} layers, got {len(layers)}")
        self.layers = [(np.array(A, dtype=float), np.array(b, dtype=float)) for A, b in layers]

    @property
    def input_dim(self) -> int:
        return (self.n - 1) * (self.q if self.encoding == "onehot" else 1)

    def encode(self, configs):
        x = np.asarray(configs)[:, self.others]
        if self.encoding == "pm1":
            return spins_pm(x)
        if self.encoding == "raw":
            return x.astype(float) + 1.0
        return centered_onehot(x, self.q).reshape(x.shape[0], -1)

    def forward(self, configs):
        h = self.encode(configs)
        acts, pre = [h], []
        for A, b in self.layers[:-1]:
            z = h @ A + b
            pre.append(z)
            h = swish(z)
            acts.append(h)
        A, b = self.layers[-1]
        return h @ A + b, (acts, pre)

    def backward(self, cache, G):
        acts, pre = cache
        grads = []
        delta = G
        for k in range(len(self.layers) - 1, -1, -1):
            A, _ = self.layers[k]
            grads.append((acts[k].T @ delta, delta.sum(axis=0)))
            if k > 0:
                delta = (delta @ A.T) * swish_grad(pre[k - 1])
        grads.reverse()
        return np.concatenate([np.concatenate([gA.ravel(), gb]) for gA, gb in grads])

    def get_params(self):
        return np.concatenate([np.concatenate([A.ravel(), b]) for A, b in self.layers])

    def set_params(self, flat):
        flat = np.asarray(flat, dtype=float)
        pos, layers = 0, []
        for A, b in self.layers:
            a_end = pos + A.size
            layers.append((flat[pos:a_end].reshape(A.shape).copy(), flat[a_end:a_end + b.size].copy()))
            pos = a_end + b.size
        if pos != flat.size:
            raise ConfigError(f"parameter vector length {flat.size} does not match {pos}")
        self.layers = layers

    def for_spin(self, u):
        return Shifted(self, u)

    def params_dict(self):
        return {
            "u": self.u,
            "depth": self.depth,
            "width": self.width,
            "encoding": self.encoding,
            "layers": [{"A": A.tolist(), "b": b.tolist()} for A, b in self.layers],
        }

    @classmethod
    def from_params_dict(cls, n, q, d):
        layers = [(np.array(l["A"], dtype=float).reshape(len(l["A"]), -1), np.array(l["b"], dtype=float))
                  for l in d["layers"]]
        return cls(n, q, int(d["u"]), int(d["depth"]), int(d["width"]), d["encoding"], layers=layers)


def nn_param_count(input_dim: int, width: int, depth: int, q: int) -> int:
    sizes = [input_dim] + [width] * depth + [q]
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def nn_value_grad(params: NeuralLocal, config_without_u):
    return params.value_grad(_insert_u(config_without_u, params.u))


# -- symmetric tables ---------------------------------------------------------


def compositions(total: int, parts: int):
    """All tuples of ``parts`` non-negative ints summing to ``total``, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def count_vector(config_without_u, q: int) -> np.ndarray:
    """Occurrences of each symbol; accepts 0-based symbols."""
    return np.bincount(np.asarray(config_without_u, dtype=np.int64), minlength=q)


class SymLocal(LocalEnergy):
    """Permutation-invariant local energy: a table indexed by symbol counts of the other spins."""

    family = "sym"

    def __init__(self, n, q, u=0, theta=None):
        super().__init__(n, q, u)
        self.keys = list(compositions(n - 1, q))
        # the last count is implied by the others, so it carries no radix weight
        radix = np.concatenate([n ** np.arange(q - 1), [0]]).astype(np.int64)
        self._lookup = np.full(n ** (q - 1), -1, dtype=np.int64)
        for i, key in enumerate(self.keys):
            self._lookup[int(np.dot(key, radix))] = i
        self._radix = radix
        self.theta = np.zeros((len(self.keys), q)) if theta is None else np.asarray(theta, dtype=float)

    def rows_for(self, configs) -> np.ndarray:
        configs = np.asarray(configs)
        counts = np.zeros((configs.shape[0], self.q), dtype=np.int64)
        for a in range(self.q):
            counts[:, a] = np.count_nonzero(configs == a, axis=1)
        counts[np.arange(configs.shape[0]), configs[:, self.u]] -= 1
        return self._lookup[counts @ self._radix]

    def forward(self, configs):
        idx = self.rows_for(configs)
        return self.theta[idx], idx

    def backward(self, idx, G):
        grad = np.zeros_like(self.theta)
        np.add.at(grad, idx, G)
        return grad.reshape(-1)

    def get_params(self):
        return self.theta.reshape(-1).copy()

    def set_params(self, flat):
        # in place, so views created by for_spin keep sharing the table
        self.theta[...] = np.asarray(flat, dtype=float).reshape(self.theta.shape)

    def project_gauge(self):
        self.theta -= self.theta.mean(axis=1, keepdims=True)

    def for_spin(self, u):
        return SymLocal(self.n, self.q, u, theta=self.theta)

    def params_dict(self):
        return {
            "table": {",".join(str(c) for c in key): [float(v) for v in row]
                      for key, row in zip(self.keys, self.theta)},
        }

    @classmethod
    def from_params_dict(cls, n, q, d):
        obj = cls(n, q, 0)
        index = {key: i for i, key in enumerate(obj.keys)}
        for key_str, row in d["table"].items():
            key = tuple(int(c) for c in key_str.split(","))
            if key not in index:
                raise SchemaError(f"symmetric table key {key_str!r} does not sum to n-1={n - 1}")
            if len(row) != q:
                raise SchemaError(f"symmetric table row {key_str!r} has {len(row)} entries, expected {q}")
            obj.theta[index[key]] = [float(v) for v in row]
        return obj


def sym_table_size(n: int, q: int) -> int:
    return comb(n - 1 + q - 1, q - 1)


def sym_value_grad(params: SymLocal, config_without_u):
    return params.value_grad(_insert_u(config_without_u, params.u))


# -- wrappers -----------------------------------------------------------------


class Shifted(LocalEnergy):
    """Spin ``u``'s local energy reusing spin ``base.u``'s parameters on the index-shifted ring."""

    def __init__(self, base: LocalEnergy, u: int):
        super().__init__(base.n, base.q, u)
        self.base = base
        self.shift = (u - base.u) % base.n
        self.family = base.family

    def _roll(self, configs):
        return np.roll(np.asarray(configs), -self.shift, axis=1)

    def forward(self, configs):
        return self.base.forward(self._roll(configs))

    def backward(self, cache, G):
        return self.base.backward(cache, G)

    def get_params(self):
        return self.base.get_params()

    def set_params(self, flat):
        self.base.set_params(flat)

    def project_gauge(self):
        self.base.project_gauge()

    def for_spin(self, u):
        return Shifted(self.base, u)

    def params_dict(self):
        return self.base.params_dict()


class FlipSymmetrized(LocalEnergy):
    """f~(x) = f(x) + P f(x-bar) for q=2, where x-bar swaps both symbols and P swaps the outputs.

    The result satisfies f~(x-bar) = P f~(x), so the conditional of a flipped
    configuration is the label-swapped conditional of the original.
    """

    def __init__(self, inner: LocalEnergy):
        if inner.q != 2:
            raise ConfigError("spin-flip symmetrization requires q=2")
        super().__init__(inner.n, inner.q, inner.u)
        self.inner = inner
        self.family = inner.family

    def forward(self, configs):
        configs = np.asarray(configs)
        f1, c1 = self.inner.forward(configs)
        f2, c2 = self.inner.forward(1 - configs)
        return f1 + f2[:, ::-1], (c1, c2)

    def backward(self, cache, G):
        c1, c2 = cache
        return self.inner.backward(c1, G) + self.inner.backward(c2, np.ascontiguousarray(G[:, ::-1]))

    def get_params(self):
        return self.inner.get_params()

    def set_params(self, flat):
        self.inner.set_params(flat)

    def project_gauge(self):
        self.inner.project_gauge()

    def for_spin(self, u):
        return FlipSymmetrized(self.inner.for_spin(u))

    def params_dict(self):
        return self.inner.params_dict()


def apply_spin_flip_symmetrization(local: LocalEnergy) -> FlipSymmetrized:
    return FlipSymmetrized(local)


def make_local(family: str, n: int, q: int, u: int, *, L: int = 2, depth: int = 3, width: int = 15,
               encoding: str | None = None, seed: int = 0, flip_symmetric: bool = False) -> LocalEnergy:
    if family == "poly":
        local = PolyLocal(n, q, u, L)
    elif family == "nn":
        local = NeuralLocal(n, q, u, depth, width, encoding, seed=seed)
    elif family == "sym":
        local = SymLocal(n, q, u)
    else:
        raise ConfigError(f"unknown family {family!r}; expected poly, nn or sym")
    return FlipSymmetrized(local) if flip_symmetric else local
