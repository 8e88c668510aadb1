"""Command-line driver.

Subcommands: state, sample, learn, gibbs, estimate, orders, fidelity, tvd, run.
Exit codes: 0 ok, 2 config error, 3 optimization failure, 4 span/completeness
error, 5 I/O error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import shutil
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .ebm import EnergyModel, gibbs_sample, load_model, save_model
from .errors import ConfigError, QebmError
from .estimate import (
    ObservableSpec,
    estimate_fidelity,
    estimate_observable,
    order_strength,
    order_strength_text,
    tvd_with_floor,
)
from .povm import SampleSet, build_povm, dual_operators, outcome_distribution, sample_outcomes
from .qsim import (
    DensityMatrix,
    HamiltonianSpec,
    PureState,
    build_hamiltonian,
    ghz_family,
    ground_state,
    thermal_state,
)
from .screen import FitConfig, fit_model

log = logging.getLogger("qebm")

EXIT_OK, EXIT_CONFIG, EXIT_OPT, EXIT_SPAN, EXIT_IO = 0, 2, 3, 4, 5


# -- config -------------------------------------------------------------------


def load_config(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ImportError:  # python < 3.11
            import tomli as tomllib
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def config_hash(cfg: dict) -> str:
    # the output location does not change any result, so it stays out of the hash
    cfg = {k: v for k, v in cfg.items() if k != "output"}
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_state(spec: dict):
    """State from a config block: {"ghz": variant, "n", "p"} or {"hamiltonian", "mode", "beta"}."""
    if "ghz" in spec:
        return ghz_family(int(spec["n"]), spec["ghz"], spec.get("p"))
    if "hamiltonian" not in spec:
        raise ConfigError("state block needs either 'ghz' or 'hamiltonian'")
    H = build_hamiltonian(HamiltonianSpec.from_dict(spec["hamiltonian"]))
    mode = spec.get("mode", "thermal")
    if mode == "thermal":
        if "beta" not in spec:
            raise ConfigError("thermal state needs 'beta'")
        return thermal_state(H, float(spec["beta"]))
    if mode == "ground":
        return ground_state(H, float(spec.get("degeneracy_tol", 1e-8)))
    raise ConfigError(f"unknown state mode {mode!r}")


def save_state(state, path) -> None:
    if isinstance(state, PureState):
        np.savez(path, kind="pure", n=state.n, data=state.amplitudes, label=state.label)
    else:
        np.savez(path, kind="density", n=state.n, data=state.data, label=state.label)


def load_state(path):
    with np.load(path) as z:
        kind, n, data, label = str(z["kind"]), int(z["n"]), z["data"], str(z["label"])
    if kind == "pure":
        return PureState(n, data, label)
    return DensityMatrix(n, data, label)


def _povm_from(spec: dict):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("povm block needs a 'kind'")
    return build_povm(spec["kind"], spec.get("seed"))


def _target_from(spec, n: int):
    if spec in ("ghz+", "ghz-"):
        return ghz_family(n, "plus" if spec == "ghz+" else "minus")
    if isinstance(spec, dict):
        return {int(k): complex(*v) if isinstance(v, list) else complex(v) for k, v in spec.items()}
    raise ConfigError(f"unknown fidelity target {spec!r}")


class Artifacts:
    """Tracks written files so a failed run can remove them."""

    def __init__(self, root: Path):
        self.root = root
        self.created_root = not root.exists()
        root.mkdir(parents=True, exist_ok=True)
        self.paths: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.paths:
            if p.exists():
                p.unlink()
        if self.created_root:
            shutil.rmtree(self.root, ignore_errors=True)


def _stamp(cfg_hash: str, **seeds) -> dict:
    return {"config_hash": cfg_hash, "version": __version__, **seeds}


def _expand_states(state_spec: dict):
    grid = state_spec.get("p_grid")
    if grid is None:
        return [("", state_spec)]
    out = []
    for p in grid:
        s = {k: v for k, v in state_spec.items() if k != "p_grid"}
        s["p"] = float(p)
        out.append((f"p={p}", s))
    return out


def validate_pipeline(cfg: dict) -> None:
    for key in ("state", "povm", "fit"):
        if key not in cfg and not (key == "state" and "samples_path" in cfg.get("sampling", {})):
            raise ConfigError(f"pipeline config is missing {key!r}")
    sampling = cfg.get("sampling", {})
    has_m = "m" in sampling
    has_path = "samples_path" in sampling
    if has_m == has_path:
        raise ConfigError("sampling needs exactly one of 'm' or 'samples_path'")
    povm = _povm_from(cfg["povm"])
    est = cfg.get("estimates", {})
    if (est.get("fidelity") or est.get("reduced_states")) and not dual_operators(povm).informationally_complete:
        raise ConfigError("fidelity/reduced-state requests need an informationally complete POVM")


def run_pipeline(cfg: dict, outdir) -> int:
    validate_pipeline(cfg)
    cfg_hash = config_hash(cfg)
    art = Artifacts(Path(outdir))
    try:
        _run(cfg, cfg_hash, art)
    except BaseException:
        art.cleanup()
        raise
    return EXIT_OK


def _run(cfg: dict, cfg_hash: str, art: Artifacts) -> None:
    povm = _povm_from(cfg["povm"])
    duals = dual_operators(povm)
    sampling = cfg["sampling"]
    fit_spec = dict(cfg["fit"])
    symmetry = fit_spec.pop("symmetry", "none")
    fit_cfg = FitConfig.from_dict(fit_spec)
    gibbs_spec = cfg.get("gibbs", {})
    est = cfg.get("estimates", {})
    records = []
    variants = _expand_states(cfg["state"]) if "state" in cfg else [("", None)]
    for tag, state_spec in variants:
        prefix = f"{tag}/" if tag else ""
        state = build_state(state_spec) if state_spec is not None else None
        seed = int(sampling.get("seed", 0))
        if "samples_path" in sampling:
            samples = SampleSet.read(sampling["samples_path"])
            if samples.q != povm.q:
                raise ConfigError(f"field 'q': external samples have q={samples.q}, POVM {povm.label!r} has q={povm.q}")
        else:
            samples = sample_outcomes(state, int(sampling["m"]), seed, povm=povm)
        samples.provenance = f"{samples.provenance}|config={cfg_hash}"
        samples.write(art.path(prefix + "samples.txt"))

        model, reports = fit_model(fit_cfg.family, samples, fit_cfg, symmetry=symmetry)
        model.meta["provenance"] = _stamp(cfg_hash, sample_seed=seed, fit_seed=fit_cfg.seed)
        save_model(model, art.path(prefix + "model.json"))
        with open(art.path(prefix + "fit_reports.jsonl"), "w") as fh:
            for r in reports:
                r.extra["provenance"] = _stamp(cfg_hash, fit_seed=fit_cfg.seed)
                fh.write(r.to_json() + "\n")

        g_seed = int(gibbs_spec.get("seed", 0))
        drawn = gibbs_sample(model, chains=int(gibbs_spec.get("chains", 100)), burn_in=gibbs_spec.get("burn_in"),
                             thin=gibbs_spec.get("thin"), total=int(gibbs_spec.get("total", 10000)), seed=g_seed)
        drawn.provenance = f"{drawn.provenance}|config={cfg_hash}"
        drawn.write(art.path(prefix + "gibbs_samples.txt"))
        stamp = _stamp(cfg_hash, sample_seed=seed, gibbs_seed=g_seed, state=tag or "default")

        for obs in est.get("observables", []):
            res = estimate_observable(drawn, duals, ObservableSpec.pauli(obs))
            records.append({**res.record(obs), "provenance": stamp})
        for target in est.get("fidelity", []):
            res = estimate_fidelity(drawn, duals, _target_from(target, model.n))
            records.append({**res.record(f"fidelity:{target}"), "provenance": stamp})
        if "tvd" in est:
            if state is None:
                raise ConfigError("tvd needs a state to build the exact table")
            t, floor = tvd_with_floor(drawn, outcome_distribution(state, povm), int(est["tvd"].get("floor_seed", 0)))
            records.append({"observable": "tvd", "tvd": t, "floor": floor, "N": drawn.m, "provenance": stamp})
        if est.get("order_strength"):
            art.path(prefix + "orders.txt").write_text(order_strength_text(order_strength(model)))
    with open(art.path("estimates.jsonl"), "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# -- subcommands --------------------------------------------------------------


def _cmd_state(args):
    spec = load_config(args.config) if args.config else {}
    spec = spec.get("state", spec)
    if args.ghz:
        spec = {"ghz": args.ghz, "n": args.n, "p": args.p}
    state = build_state(spec)
    save_state(state, args.output)
    return EXIT_OK


def _cmd_sample(args):
    state = load_state(args.state)
    povm = build_povm(args.povm, args.povm_seed)
    samples = sample_outcomes(state, args.m, args.seed, povm=povm)
    samples.write(args.output)
    return EXIT_OK


def _fit_config_from_args(args) -> FitConfig:
    base = load_config(args.config).get("fit", {}) if args.config else {}
    base = dict(base)
    symmetry = base.pop("symmetry", "none")
    for field_name in ("family", "L", "depth", "width", "optimizer", "learning_rate", "minibatch",
                       "max_epochs", "l1_radius", "seed"):
        val = getattr(args, field_name, None)
        if val is not None:
            base[field_name] = val
    if args.symmetry is not None:
        symmetry = args.symmetry
    return FitConfig.from_dict(base), symmetry


def _cmd_learn(args):
    samples = SampleSet.read(args.samples)
    if args.q is not None and args.q != samples.q:
        raise ConfigError(f"field 'q': samples have q={samples.q}, --q expects q={args.q}")
    cfg, symmetry = _fit_config_from_args(args)
    model, reports = fit_model(cfg.family, samples, cfg, symmetry=symmetry)
    save_model(model, args.output)
    if args.reports:
        with open(args.reports, "w") as fh:
            for r in reports:
                fh.write(r.to_json() + "\n")
    return EXIT_OK


def _cmd_gibbs(args):
    model = load_model(args.model)
    drawn = gibbs_sample(model, chains=args.chains, burn_in=args.burn_in, thin=args.thin,
                         total=args.total, seed=args.seed)
    drawn.write(args.output)
    return EXIT_OK


def _emit(records, output):
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_estimate(args):
    samples = SampleSet.read(args.samples)
    duals = dual_operators(build_povm(args.povm, args.povm_seed))
    records = [estimate_observable(samples, duals, ObservableSpec.pauli(o)).record(o) for o in args.observable]
    _emit(records, args.output)
    return EXIT_OK


def _cmd_orders(args):
    text = order_strength_text(order_strength(load_model(args.model)))
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_fidelity(args):
    samples = SampleSet.read(args.samples)
    duals = dual_operators(build_povm(args.povm, args.povm_seed))
    target = _target_from(args.target if args.target in ("ghz+", "ghz-") else json.loads(args.target), samples.n)
    _emit([estimate_fidelity(samples, duals, target).record(f"fidelity:{args.target}")], args.output)
    return EXIT_OK


def _cmd_tvd(args):
    samples = SampleSet.read(args.samples)
    table = outcome_distribution(load_state(args.state), build_povm(args.povm, args.povm_seed))
    t, floor = tvd_with_floor(samples, table, args.floor_seed)
    _emit([{"observable": "tvd", "tvd": t, "floor": floor, "N": samples.m}], args.output)
    return EXIT_OK


def _cmd_run(args):
    cfg = load_config(args.config)
    cfg = copy.deepcopy(cfg)
    if args.m is not None:
        cfg.setdefault("sampling", {})["m"] = args.m
    if args.seed is not None:
        cfg.setdefault("sampling", {})["seed"] = args.seed
    if args.samples is not None:
        cfg.setdefault("sampling", {}).pop("m", None)
        cfg["sampling"]["samples_path"] = args.samples
    outdir = args.output or cfg.get("output")
    if not outdir:
        raise ConfigError("no output directory given (--output or 'output' in config)")
    return run_pipeline(cfg, outdir)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qebm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("state", help="build a state and save it as .npz")
    s.add_argument("--config")
    s.add_argument("--ghz", choices=["plus", "minus", "mixture"])
    s.add_argument("--n", type=int)
    s.add_argument("--p", type=float)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_state)

    def povm_args(sp):
        sp.add_argument("--povm", default="tetrahedral")
        sp.add_argument("--povm-seed", type=int)

    s = sub.add_parser("sample", help="measure a saved state")
    s.add_argument("--state", required=True)
    povm_args(s)
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_sample)

    s = sub.add_parser("learn", help="fit an energy model to a sample file")
    s.add_argument("--samples", required=True)
    s.add_argument("--config")
    s.add_argument("--family", choices=["poly", "nn", "sym"])
    s.add_argument("--L", type=int)
    s.add_argument("--depth", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--optimizer")
    s.add_argument("--learning-rate", dest="learning_rate", type=float)
    s.add_argument("--minibatch", type=int)
    s.add_argument("--max-epochs", dest="max_epochs", type=int)
    s.add_argument("--l1-radius", dest="l1_radius", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--symmetry", choices=["none", "translation", "permutation"])
    s.add_argument("--q", type=int, help="expected alphabet size; checked against the sample header")
    s.add_argument("--reports")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_learn)

    s = sub.add_parser("gibbs", help="draw samples from a fitted model")
    s.add_argument("--model", required=True)
    s.add_argument("--chains", type=int, default=100)
    s.add_argument("--burn-in", dest="burn_in", type=int)
    s.add_argument("--thin", type=int)
    s.add_argument("--total", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_gibbs)

    s = sub.add_parser("estimate", help="estimate Pauli observables from samples")
    s.add_argument("--samples", required=True)
    povm_args(s)
    s.add_argument("--observable", action="append", required=True)
    s.add_argument("-o", "--output")
    s.set_defaults(func=_cmd_estimate)

    s = sub.add_parser("orders", help="per-order coefficient strength of a polynomial model")
    s.add_argument("--model", required=True)
    s.add_argument("-o", "--output")
    s.set_defaults(func=_cmd_orders)

    s = sub.add_parser("fidelity", help="fidelity with a sparse pure target")
    s.add_argument("--samples", required=True)
    povm_args(s)
    s.add_argument("--target", required=True, help="ghz+, ghz-, or JSON {index: amplitude}")
    s.add_argument("-o", "--output")
    s.set_defaults(func=_cmd_fidelity)

    s = sub.add_parser("tvd", help="TVD of samples to a state's exact outcome table")
    s.add_argument("--samples", required=True)
    s.add_argument("--state", required=True)
    povm_args(s)
    s.add_argument("--floor-seed", type=int, default=0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=_cmd_tvd)

    s = sub.add_parser("run", help="full pipeline from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--m", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--samples")
    s.add_argument("-o", "--output")
    s.set_defaults(func=_cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except QebmError as exc:
        log.error("error: %s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
