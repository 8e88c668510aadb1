"""Interaction Screening losses, optimizers and per-spin / whole-model fitting."""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .ebm import EnergyModel
from .errors import ConfigError, OptimizationError
from .families import LocalEnergy, centered_onehot, make_local
from .povm import ProbTable, SampleSet

CLIP = 50.0
OPTIMIZERS = ("gd-backtracking", "entropic-mirror", "adam")


@dataclass
class FitConfig:
    family: str = "poly"
    L: int = 2
    depth: int = 3
    width: int = 15
    encoding: str | None = None
    flip_symmetric: bool = False
    optimizer: str | None = None  # default: gd-backtracking for poly/sym, adam for nn
    learning_rate: float = 1e-2
    decay_rate: float = 0.1  # inverse-time decay per epoch (adam)
    minibatch: int = 500
    max_epochs: int = 5000
    early_stop_delta: float = 1e-4
    patience: int = 3
    grad_tol: float = 1e-7
    l1_radius: float | None = None
    seed: int = 0

    def resolved_optimizer(self) -> str:
        if self.optimizer is not None:
            return self.optimizer
        return "adam" if self.family == "nn" else "gd-backtracking"

    def validate(self, m: int | None = None) -> None:
        if self.family not in ("poly", "nn", "sym"):
            raise ConfigError(f"unknown family {self.family!r}")
        opt = self.resolved_optimizer()
        if opt not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {opt!r}")
        if self.family == "nn" and opt != "adam":
            raise ConfigError("the neural family is non-convex and trains with adam only")
        if opt == "entropic-mirror" and not (self.l1_radius and self.l1_radius > 0):
            raise ConfigError("entropic-mirror requires a positive l1_radius")
        if self.learning_rate <= 0 or self.max_epochs < 1 or self.minibatch < 1:
            raise ConfigError("learning_rate, max_epochs and minibatch must be positive")
        if m is not None and opt == "adam" and self.minibatch > m:
            raise ConfigError(f"minibatch {self.minibatch} exceeds sample count m={m}")

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown fit config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FitReport:
    spin: int
    loss: float
    grad_norm: float
    epochs: int
    wall_time: float
    optimizer: str
    converged: bool
    clip_count: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# -- losses -------------------------------------------------------------------


def _weighted_rows(data):
    """Distinct configurations with their probability weights."""
    if isinstance(data, ProbTable):
        return data.support()
    if isinstance(data, SampleSet):
        if data.m < 1:
            raise ConfigError("empty sample set")
        rows, counts, _ = data.unique()
        return rows, counts / data.m
    raise ConfigError(f"unsupported data source {type(data).__name__}")


def is_loss(local: LocalEnergy, configs: np.ndarray, weights: np.ndarray, clip: float = CLIP):
    """sum_t w_t exp(-<phi(sigma_u), f(sigma_rest)>) and its parameter gradient.

    Returns (loss, gradient, number of clipped exponents).
    """
    f, cache = local.forward(configs)
    q = local.q
    su = np.asarray(configs[:, local.u], dtype=np.int64)
    energy = f[np.arange(f.shape[0]), su] - f.mean(axis=1)
    z = -energy
    clipped = np.abs(z) > clip
    ez = np.exp(np.clip(z, -clip, clip))
    loss = float(np.dot(weights, ez))
    coeff = weights * ez * ~clipped
    G = -coeff[:, None] * centered_onehot(su, q)
    return loss, local.backward(cache, G), int(clipped.sum())


def is_loss_empirical(local: LocalEnergy, samples: SampleSet):
    if samples.m < 1:
        raise ConfigError("empty sample set")
    # weight by raw counts and divide once, so an all-zero model gives exactly 1
    rows, counts, _ = samples.unique()
    loss, grad, _ = is_loss(local, rows, counts.astype(float))
    return loss / samples.m, grad / samples.m


def is_loss_exact(local: LocalEnergy, table: ProbTable):
    rows, w = _weighted_rows(table)
    return is_loss(local, rows, w)[:2]


# -- optimizers ---------------------------------------------------------------


def _check_finite(loss, u, epoch, theta):
    if not np.isfinite(loss):
        raise OptimizationError(
            f"interaction screening loss diverged for spin {u} at epoch {epoch}",
            {"spin": u, "epoch": epoch, "loss": loss, "param_max": float(np.max(np.abs(theta)))},
        )


def _gd_backtracking(local, rows, w, cfg: FitConfig):
    theta = local.get_params()
    loss, g, clips = is_loss(local, rows, w)
    step = 1.0
    epochs = 0
    prev = None
    for epochs in range(1, cfg.max_epochs + 1):
        gn2 = float(g @ g)
        if np.sqrt(gn2) < cfg.grad_tol:
            epochs -= 1
            break
        # trial step: Barzilai-Borwein when the curvature estimate is usable, else double
        step = 2.0 * step
        if prev is not None:
            s_k, y_k = theta - prev[0], g - prev[1]
            sy = float(s_k @ y_k)
            if sy > 0:
                step = float(s_k @ s_k) / sy
        step = min(step, 1e6)
        while True:
            local.set_params(theta - step * g)
            local.project_gauge()
            cand = local.get_params()
            new_loss, new_g, new_clips = is_loss(local, rows, w)
            if np.isfinite(new_loss) and new_loss <= loss - 1e-4 * step * gn2:
                break
            step *= 0.5
            if step < 1e-30:
                # no further decrease representable in floating point
                local.set_params(theta)
                return loss, g, epochs, clips
        prev = (theta, g)
        theta, loss, g, clips = cand, new_loss, new_g, new_clips
        _check_finite(loss, local.u, epochs, theta)
    local.set_params(theta)
    return loss, g, epochs, clips


def _entropic_mirror(local, rows, w, cfg: FitConfig):
    """Exponentiated-gradient descent on the l1 ball of radius ``cfg.l1_radius``.

    theta = R (w+ - w-) with (w+, w-, slack) on the probability simplex.
    """
    R = float(cfg.l1_radius)
    P = local.n_params
    z = np.full(2 * P + 1, 1.0 / (2 * P + 1))
    best = (np.inf, None, None, 0)
    theta = np.zeros(P)
    epochs = 0
    for epochs in range(1, cfg.max_epochs + 1):
        theta = R * (z[:P] - z[P:2 * P])
        local.set_params(theta)
        loss, g, clips = is_loss(local, rows, w)
        _check_finite(loss, local.u, epochs, theta)
        if loss < best[0]:
            best = (loss, theta.copy(), g, clips)
        gz = R * np.concatenate([g, -g, [0.0]])
        scale = max(np.max(np.abs(gz)), 1e-300)
        eta = cfg.learning_rate * np.sqrt(2.0 * np.log(2 * P + 1)) / (scale * np.sqrt(epochs))
        logz = np.log(z) - eta * gz
        logz -= logz.max()
        z = np.exp(logz)
        z /= z.sum()
        if np.linalg.norm(g) < cfg.grad_tol:
            break
    loss, theta, g, clips = best
    local.set_params(theta)
    local.project_gauge()
    return loss, g, epochs, clips


def _adam(local, data, cfg: FitConfig):
    rows_all, w_all = _weighted_rows(data)
    if isinstance(data, SampleSet):
        batch_rows = data.rows
    else:
        batch_rows = None
    rng = np.random.default_rng([cfg.seed, local.u])
    theta = local.get_params()
    mom = np.zeros_like(theta)
    vel = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0
    loss, g, clips = is_loss(local, rows_all, w_all)
    best_loss, stale = loss, 0
    epochs = 0
    for epochs in range(1, cfg.max_epochs + 1):
        lr = cfg.learning_rate / (1.0 + cfg.decay_rate * (epochs - 1))
        if batch_rows is None:
            batches = [(rows_all, w_all)]
        else:
            perm = rng.permutation(batch_rows.shape[0])
            nb = max(1, batch_rows.shape[0] // cfg.minibatch)
            batches = [
                (batch_rows[idx], np.full(idx.size, 1.0 / idx.size)) for idx in np.array_split(perm, nb)
            ]
        for rows, w in batches:
            _, gb, _ = is_loss(local, rows, w)
            t += 1
            mom = b1 * mom + (1 - b1) * gb
            vel = b2 * vel + (1 - b2) * gb * gb
            mhat = mom / (1 - b1**t)
            vhat = vel / (1 - b2**t)
            theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
            local.set_params(theta)
        loss, g, clips = is_loss(local, rows_all, w_all)
        _check_finite(loss, local.u, epochs, theta)
        if best_loss - loss < cfg.early_stop_delta:
            stale += 1
            if stale >= cfg.patience:
                break
        else:
            stale = 0
        best_loss = min(best_loss, loss)
    return loss, g, epochs, clips


def fit_spin(family, u: int, data, config: FitConfig, n: int | None = None, q: int | None = None):
    """Minimise spin ``u``'s interaction screening loss.

    ``family`` is a family tag ("poly", "nn", "sym") or a ready LocalEnergy to
    warm-start from. Returns (local energy, FitReport).
    """
    n = data.n if n is None else n
    q = data.q if q is None else q
    config.validate(data.m if isinstance(data, SampleSet) else None)
    if isinstance(family, LocalEnergy):
        local = family
    else:
        local = make_local(family, n, q, u, L=config.L, depth=config.depth, width=config.width,
                           encoding=config.encoding, seed=[config.seed, u],
                           flip_symmetric=config.flip_symmetric)
    if local.n != data.n or local.q != data.q:
        raise ConfigError(f"family dims (n={local.n}, q={local.q}) do not match data (n={data.n}, q={data.q})")
    opt = config.resolved_optimizer()
    start = time.perf_counter()
    if opt == "adam":
        loss, g, epochs, clips = _adam(local, data, config)
    else:
        rows, w = _weighted_rows(data)
        local.project_gauge()
        if opt == "gd-backtracking":
            loss, g, epochs, clips = _gd_backtracking(local, rows, w, config)
        else:
            loss, g, epochs, clips = _entropic_mirror(local, rows, w, config)
    gn = float(np.linalg.norm(g))
    report = FitReport(
        spin=u, loss=loss, grad_norm=gn, epochs=epochs, wall_time=time.perf_counter() - start,
        optimizer=opt, converged=bool(gn < config.grad_tol) if opt != "adam" else epochs < config.max_epochs,
        clip_count=clips,
        extra={"family": config.family, "l1_radius": config.l1_radius, "seed": config.seed},
    )
    return local, report


def worker_count(tasks: int) -> int:
    cap = os.environ.get("QEBM_THREADS")
    workers = os.cpu_count() or 1
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError(f"QEBM_THREADS must be an integer, got {cap!r}") from exc
    return max(1, min(workers, tasks))


def _fit_task(args):
    family, u, data, config = args
    return fit_spin(family, u, data, config)


def fit_model(family: str, data, config: FitConfig, symmetry: str = "none"):
    """Fit every spin's local energy. Returns (EnergyModel, list of FitReport)."""
    if family != config.family:
        config = FitConfig(**{**asdict(config), "family": family})
    n = data.n
    if symmetry == "permutation":
        if family != "sym":
            raise ConfigError("permutation symmetry requires the symmetric (sym) family")
        local, report = fit_spin(family, 0, data, config)
        spins = [local] + [local.for_spin(u) for u in range(1, n)]
        reports = [report]
    elif symmetry == "translation":
        if family == "sym":
            raise ConfigError("the sym family is already permutation invariant; use symmetry='permutation'")
        local, report = fit_spin(family, 0, data, config)
        spins = [local] + [local.for_spin(u) for u in range(1, n)]
        reports = [report]
    elif symmetry == "none":
        tasks = [(family, u, data, config) for u in range(n)]
        workers = worker_count(n)
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_fit_task, tasks))
        else:
            results = [_fit_task(t) for t in tasks]
        results.sort(key=lambda r: r[1].spin)
        spins = [r[0] for r in results]
        reports = [r[1] for r in results]
    else:
        raise ConfigError(f"unknown symmetry {symmetry!r}")
    model = EnergyModel(n, data.q, spins, symmetry=symmetry,
                        meta={"fit_config": asdict(config), "symmetry": symmetry})
    return model, reports

