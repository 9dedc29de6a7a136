"""Command-line front end.

Every subcommand reads a :class:`RunConfig` assembled from built-in
defaults, an optional ``key = value`` config file (or the ``manifest.json``
of an earlier run) and command-line flags, in increasing priority.  Outputs
are CSV/JSON files in ``--out`` plus a ``manifest.json`` holding the full
configuration, so ``neurocoarse <cmd> --config out/manifest.json`` repeats a
run exactly.

Exit codes: 0 success, 1 invalid input (or failed oracle check), 2
numerical non-convergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, _rng, oracle, rare_events
from .coarse import CoarseMap, EnsembleConfig, phase_portrait, write_portrait_csv
from .graph import RetryBudgetExhausted, generate_regular_graph, load_edgelist, ring_network
from .lifting import ManifoldLiftConfig, random_lift
from .micro import evolve
from .numerics import (
    ContinuationConfig,
    ConvergenceError,
    arclength_trace,
    locate_critical_points,
    newton_solve,
    start_branch,
    write_critical_points,
)

THREADS_ENV = "NEUROCOARSE_THREADS"

_DEFAULT_EPSILON = {"simulate": 0.15, "portrait": 0.14, "rare-events": 0.162}


@dataclass
class RunConfig:
    n_neurons: int = 20000
    degree: int = 4
    epsilon: float | None = None
    epsilon_range: tuple = (0.10, 0.30)
    copies: int = 10000
    horizon_T: int = 5
    dT: int = 1
    master_seed: int = 0
    graph_seed: int | None = None
    graph_file: str | None = None
    lift_mode: str = "manifold"
    use_triples: bool = False
    pilot_copies: int = 200
    # continuation
    delta_s: float = 0.02
    fd_delta: float = 1e-2
    newton_tol: float = 5e-4
    max_points: int = 60
    p_guess: float = 0.8
    branches: tuple = ("zero", "upper")
    # simulate / portrait
    p0: tuple = (0.1, 0.7)
    steps: int = 2000
    portrait_p0: float = 0.7
    rho11_targets: tuple = (0.42, 0.47, 0.52, 0.57, 0.62)
    portrait_copies: int = 500
    portrait_steps: int = 10
    # rare events
    p_node: float | None = None
    p_unstable: float | None = None
    p_unstable_guess: float = 0.55
    psi_min: float | None = None
    psi_max: float | None = None
    psi_points: int = 41
    delta_T: int = 1
    direct: bool = False
    escapes: int = 30
    max_steps: int = 1_000_000
    exit_threshold: float | None = None
    synthetic: str | None = None
    out: str = "."

    def validate(self, command):
        if self.n_neurons < 3 or self.degree < 2:
            raise ValueError("n_neurons >= 3 and degree >= 2 required")
        eps = self.epsilon_for(command)
        if eps is not None and not 0 < eps < 0.5:
            raise ValueError(f"epsilon must lie in (0, 0.5), got {eps}")
        lo, hi = self.epsilon_range
        if not 0 < lo < hi < 0.5:
            raise ValueError(f"epsilon_range must satisfy 0 < lo < hi < 0.5, got {self.epsilon_range}")
        for name in ("copies", "horizon_T", "dT", "steps", "portrait_copies", "delta_T", "escapes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if any(not 0 <= p <= 1 for p in self.p0):
            raise ValueError("initial densities must lie in [0, 1]")
        if self.synthetic not in (None, "ou", "double-well"):
            raise ValueError(f"unknown synthetic mode {self.synthetic!r}")
        # constructing the module configs re-runs their own checks
        self.ensemble()
        self.continuation()

    def epsilon_for(self, command):
        return self.epsilon if self.epsilon is not None else _DEFAULT_EPSILON.get(command)

    def ensemble(self, **changes):
        cfg = EnsembleConfig(
            copies=self.copies, horizon_T=self.horizon_T, master_seed=self.master_seed,
            lift_mode=self.lift_mode, manifold=ManifoldLiftConfig(dT=self.dT, use_triples=self.use_triples),
            pilot_copies=self.pilot_copies,
        )
        return dataclasses.replace(cfg, **changes)

    def continuation(self):
        return ContinuationConfig(delta_s=self.delta_s, fd_delta=self.fd_delta, newton_tol=self.newton_tol,
                                  epsilon_range=tuple(self.epsilon_range), max_points=self.max_points)


def _convert(f, text):
    """Parse ``text`` for field ``f`` of :class:`RunConfig`."""
    default = f.default
    text = text.strip()
    if text.lower() in ("none", "") and f.type.endswith("None"):
        return None
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{f.name}: expected a boolean, got {text!r}")
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if default and isinstance(default[0], str):
            return tuple(items)
        return tuple(float(t) for t in items)
    kind = f.type.split("|")[0].strip()
    if kind == "int":
        return int(float(text)) if float(text).is_integer() else int(text)
    if kind == "float":
        return float(text)
    return text


def _from_json_value(f, value):
    if value is None:
        return None
    if isinstance(f.default, tuple):
        return tuple(value)
    return value


def read_config_file(path):
    """Overrides from a ``key = value`` file or a run manifest (JSON)."""
    path = Path(path)
    text = path.read_text()
    by_name = {f.name: f for f in fields(RunConfig)}
    if path.suffix == ".json":
        data = json.loads(text)
        data = data.get("config", data)
        unknown = set(data) - set(by_name)
        if unknown:
            raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
        return {k: _from_json_value(by_name[k], v) for k, v in data.items()}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in by_name:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(by_name[key], value)
    return out


def build_config(args, command):
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    by_name = {f.name: f for f in fields(RunConfig)}
    for name, text in vars(args).items():
        if name in by_name and text is not None:
            values[name] = _convert(by_name[name], text) if isinstance(text, str) else text
    cfg = RunConfig(**values)
    cfg.validate(command)
    return cfg


def _network(cfg):
    if cfg.graph_file:
        net = load_edgelist(cfg.graph_file)
        if (net.n_neurons, net.degree) != (cfg.n_neurons, cfg.degree):
            raise ValueError(f"{cfg.graph_file}: graph has N={net.n_neurons}, d={net.degree}; "
                             f"config says N={cfg.n_neurons}, d={cfg.degree}")
        return net
    seed = cfg.master_seed if cfg.graph_seed is None else cfg.graph_seed
    return generate_regular_graph(cfg.n_neurons, cfg.degree, seed)


def _write_manifest(cfg, command, outputs):
    out = Path(cfg.out)
    record = {
        "command": command,
        "version": __version__,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(cfg).items()},
        "seeds": {"master_seed": cfg.master_seed,
                  "graph_seed": cfg.master_seed if cfg.graph_seed is None else cfg.graph_seed},
        "outputs": sorted(outputs),
    }
    (out / "manifest.json").write_text(json.dumps(record, indent=2) + "\n")


def cmd_simulate(cfg):
    net = _network(cfg)
    eps = cfg.epsilon_for("simulate")
    outputs = []
    for j, p0 in enumerate(cfg.p0):
        state = random_lift(p0, net, _rng.stream(cfg.master_seed, j, _rng.LIFT))
        _, traj = evolve(state, net, eps, cfg.steps, _rng.stream(cfg.master_seed, j, _rng.EVOLVE), record=True)
        name = f"trajectory_p0_{p0:g}.csv"
        traj.to_csv(Path(cfg.out) / name)
        outputs.append(name)
        print(f"p0={p0:g}: p({cfg.steps}) = {traj.p[-1]:.4f}, mean over last half = "
              f"{traj.p[cfg.steps // 2:].mean():.4f}")
    return outputs


def cmd_portrait(cfg):
    net = _network(cfg)
    eps = cfg.epsilon_for("portrait")
    series = phase_portrait(cfg.portrait_p0, list(cfg.rho11_targets), eps, net, cfg.portrait_steps,
                            cfg.portrait_copies, cfg.master_seed)
    write_portrait_csv(series, Path(cfg.out) / "portrait.csv")
    print(f"{len(series)} series written")
    return ["portrait.csv"]


def cmd_bifurcate(cfg):
    net = _network(cfg)
    phi = CoarseMap(net, cfg.ensemble())
    ccfg = cfg.continuation()
    lo, _ = cfg.epsilon_range
    outputs, critical = [], []
    for k, name in enumerate(cfg.branches):
        if name not in ("zero", "upper"):
            raise ValueError(f"unknown branch {name!r}; use 'zero' and/or 'upper'")
        guess = 0.0 if name == "zero" else cfg.p_guess
        a, b = start_branch(guess, lo, phi, ccfg, seed=cfg.master_seed + 1000 * k)
        branch = arclength_trace(a, b, phi, ccfg, seed=cfg.master_seed + 1000 * k + 1)
        fname = f"branch_{name}.csv"
        branch.to_csv(Path(cfg.out) / fname)
        outputs.append(fname)
        if len(branch) >= 3:
            found = locate_critical_points(branch)
            critical.extend(found)
            for c in found:
                print(f"{name} branch: {c.kind} at epsilon = {c.epsilon:.4f}")
    write_critical_points(critical, Path(cfg.out) / "critical_points.json")
    outputs.append("critical_points.json")
    return outputs


def cmd_rare_events(cfg):
    eps = cfg.epsilon_for("rare-events")
    out = Path(cfg.out)
    if cfg.synthetic:
        proc = rare_events.ou_surrogate() if cfg.synthetic == "ou" else rare_events.double_well_surrogate()
        p_node = proc.center
        lo = cfg.psi_min if cfg.psi_min is not None else -0.15
        hi = cfg.psi_max if cfg.psi_max is not None else 0.08
        grid = np.union1d(np.linspace(lo, hi, cfg.psi_points), [0.0])
        profile = rare_events.estimate_drift_diffusion(p_node, grid, delta_T=cfg.delta_T, copies=cfg.copies,
                                                       seed=cfg.master_seed, stepper=proc.stepper)
        net = None
    else:
        net = _network(cfg)
        # fixed points of the burst map itself, so the drift vanishes at psi = 0
        phi = CoarseMap(net, dataclasses.replace(cfg.ensemble(), horizon_T=cfg.delta_T))
        ccfg = cfg.continuation()
        p_node = cfg.p_node
        if p_node is None:
            p_node = newton_solve(cfg.p_guess, eps, phi, ccfg, seed=cfg.master_seed).p_star
        if cfg.psi_min is not None and cfg.psi_max is not None:
            grid = np.union1d(np.linspace(cfg.psi_min, cfg.psi_max, cfg.psi_points), [0.0])
        else:
            p_u = cfg.p_unstable
            if p_u is None:
                p_u = newton_solve(cfg.p_unstable_guess, eps, phi, ccfg, seed=cfg.master_seed + 1).p_star
            grid = rare_events.default_psi_grid(p_node, p_u, cfg.psi_points)
        profile = rare_events.estimate_drift_diffusion(p_node, grid, eps, net, cfg.delta_T, cfg.copies,
                                                       ManifoldLiftConfig(dT=cfg.dT, use_triples=cfg.use_triples),
                                                       seed=cfg.master_seed)
    profile.epsilon = None if cfg.synthetic else eps
    profile = rare_events.free_energy(profile)
    profile.to_csv(out / "profile.csv")
    if cfg.synthetic == "ou":
        # single well, no barrier: report the recovered coefficients instead
        slope = float(np.polyfit(profile.psi_grid, profile.drift, 1)[0])
        fit = {"drift_slope": slope, "diffusion": float(np.mean(profile.diffusion))}
        (out / "ou_fit.json").write_text(json.dumps(fit, indent=2) + "\n")
        print(f"OU fit: drift slope = {slope:.5g}, mean diffusion = {fit['diffusion']:.5g}")
        return ["profile.csv", "ou_fit.json"]
    est = rare_events.kramers_escape_time(profile)
    est.to_json(out / "escape.json")
    outputs = ["profile.csv", "escape.json"]
    print(f"Kramers tau = {est.tau:.4g} steps (barrier {est.barrier:.2f}, "
          f"psi_stable = {est.psi_stable:.4f}, psi_unstable = {est.psi_unstable:.4f})")
    if cfg.direct and net is not None:
        thr = cfg.exit_threshold if cfg.exit_threshold is not None else p_node + est.psi_unstable
        d = rare_events.direct_mfpt(p_node, eps, net, thr, cfg.escapes, cfg.max_steps, cfg.master_seed)
        d.to_json(out / "escape_direct.json")
        outputs.append("escape_direct.json")
        print(f"direct tau = {d.tau:.4g} steps ({d.times.size} escapes, {d.censored} censored)")
    return outputs


def cmd_oracle_check(cfg, args):
    if args.ring is not None:
        # fails with the size-limit message for rings beyond the exact range
        oracle.exact_transition_matrix(ring_network(args.ring), 0.1)
    results = oracle.equivalence_suite(samples=args.samples, seed=cfg.master_seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return [], all(r.passed for r in results)


def _add_common(p):
    p.add_argument("--config", help="key = value file or manifest.json of an earlier run")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--threads", type=int, help=f"compute threads (default: ${THREADS_ENV} or all cores)")
    p.add_argument("--n-neurons", dest="n_neurons")
    p.add_argument("--degree")
    p.add_argument("--epsilon")
    p.add_argument("--seed", dest="master_seed")
    p.add_argument("--graph-seed", dest="graph_seed")
    p.add_argument("--graph-file", dest="graph_file")


def _add_ensemble(p):
    p.add_argument("--copies")
    p.add_argument("-T", "--horizon", dest="horizon_T")
    p.add_argument("--dT", dest="dT")
    p.add_argument("--lift-mode", dest="lift_mode", choices=["manifold", "uniform"])
    p.add_argument("--use-triples", dest="use_triples", action="store_const", const=True)
    p.add_argument("--pilot-copies", dest="pilot_copies")
    p.add_argument("--delta-s", dest="delta_s")
    p.add_argument("--fd-delta", dest="fd_delta")
    p.add_argument("--newton-tol", dest="newton_tol")
    p.add_argument("--p-guess", dest="p_guess")


def make_parser():
    parser = argparse.ArgumentParser(prog="neurocoarse", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="trajectories of single realizations")
    _add_common(p)
    p.add_argument("--p0", help="comma-separated initial densities")
    p.add_argument("--steps")

    p = sub.add_parser("portrait", help="(p, rho10) trajectories from annealed initial conditions")
    _add_common(p)
    p.add_argument("--p0", dest="portrait_p0")
    p.add_argument("--rho11-targets", dest="rho11_targets", help="comma-separated rho11 values")
    p.add_argument("--copies", dest="portrait_copies")
    p.add_argument("--steps", dest="portrait_steps")

    p = sub.add_parser("bifurcate", help="coarse bifurcation diagram by continuation")
    _add_common(p)
    _add_ensemble(p)
    p.add_argument("--epsilon-range", dest="epsilon_range", help="lo,hi")
    p.add_argument("--max-points", dest="max_points")
    p.add_argument("--branches", help="comma-separated subset of zero,upper")

    p = sub.add_parser("rare-events", help="free energy and Kramers escape time")
    _add_common(p)
    _add_ensemble(p)
    p.add_argument("--p-node", dest="p_node")
    p.add_argument("--p-unstable", dest="p_unstable")
    p.add_argument("--p-unstable-guess", dest="p_unstable_guess")
    p.add_argument("--psi-min", dest="psi_min")
    p.add_argument("--psi-max", dest="psi_max")
    p.add_argument("--psi-points", dest="psi_points")
    p.add_argument("--delta-T", dest="delta_T")
    p.add_argument("--direct", action="store_const", const=True)
    p.add_argument("--escapes")
    p.add_argument("--max-steps", dest="max_steps")
    p.add_argument("--exit-threshold", dest="exit_threshold")
    p.add_argument("--synthetic", choices=["ou", "double-well"])

    p = sub.add_parser("oracle-check", help="simulator vs exact Markov chain on tiny networks")
    _add_common(p)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--ring", type=int, help="also build the exact chain of an N-ring (size check)")
    return parser


def _set_threads(requested):
    n = requested if requested is not None else os.environ.get(THREADS_ENV)
    if n is None:
        return
    import numba

    n = int(n)
    if n < 1:
        raise ValueError("thread count must be at least 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    command = args.command
    try:
        _set_threads(args.threads)
        cfg = build_config(args, command)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            if command == "oracle-check":
                outputs, ok = cmd_oracle_check(cfg, args)
            else:
                handler = {"simulate": cmd_simulate, "portrait": cmd_portrait,
                           "bifurcate": cmd_bifurcate, "rare-events": cmd_rare_events}[command]
                outputs, ok = handler(cfg), True
        _write_manifest(cfg, command, outputs)
    except (ConvergenceError, RetryBudgetExhausted, rare_events.NoEscapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
