"""Command-line entry point: config ingestion, dispatch, artifact emission.

Configuration is a single JSON file (kernels and vectors do not fit flags);
scalar flags override config fields, and a named preset supplies defaults
underneath both.  Seed priority: --seed > config > RD_SEED env > preset.

Exit codes: 0 success/pass, 1 test fail, 2 config error, 3 guard or runtime
anomaly (partial results are preserved).  Emitted JSON has stable key order
and excludes volatile fields (runtimes), so a rerun with the same config and
seed is byte-identical regardless of worker count.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import diagnostics as diag
from .coupling import domination_run, hitting_bound_estimate, symmetric_walk_hit_estimate
from .ctmc_engine import (
    initial_configuration,
    simulate,
    write_events_jsonl,
    write_trajectory_csv,
)
from .graph_kernel import SiteKernel, as_density
from .presets import MODEL_PRESETS, model_preset, reaction_preset
from .rate_synthesis import ModelParams, discrete_coefficients, limit_coefficients
from .scaling_analysis import ReactionPair, analyze
from .sde_reference import SDESpec, simulate_path
from ._rng import RngStream

EXIT_OK = 0
EXIT_TEST_FAIL = 1
EXIT_CONFIG = 2
EXIT_GUARD = 3


class ConfigError(ValueError):
    pass


_TOP_KEYS = {"preset", "model", "kernel", "rho0", "run", "sde", "reaction"}
_MODEL_KEYS = {"alpha", "beta", "k", "ell", "n"}
_RUN_KEYS = {"horizon", "sample_dt", "replicas", "seed", "max_events", "mass_cap"}
_SDE_KEYS = {"dt", "mass_guard", "replicas"}
_REACTION_KEYS = {"f_plus", "f_minus"}

_RUN_DEFAULTS = {
    "horizon": 1.0,
    "sample_dt": 0.01,
    "replicas": 1,
    "seed": None,
    "max_events": 100_000_000,
    "mass_cap": None,
}
_SDE_DEFAULTS = {"dt": 0.001, "mass_guard": 10.0, "replicas": None}


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


@dataclass
class RunConfig:
    """Validated, fully-resolved run configuration."""

    model: dict
    kernel: list
    rho0: list
    run: dict
    sde: dict
    reaction: dict | None = None
    preset: str | None = None
    advisories: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        _reject_unknown(raw, _TOP_KEYS, "config")
        merged: dict = {}
        preset = raw.get("preset")
        if preset is not None:
            if preset not in MODEL_PRESETS:
                raise ConfigError(f"unknown preset {preset!r}")
            merged = model_preset(preset)
        for key in ("model", "run", "sde"):
            if key in raw:
                section = raw[key]
                if not isinstance(section, dict):
                    raise ConfigError(f"{key} must be an object")
                merged.setdefault(key, {})
                merged[key].update(section)
        for key in ("kernel", "rho0", "reaction"):
            if key in raw:
                merged[key] = raw[key]
        for key in ("model", "kernel", "rho0"):
            if key not in merged:
                raise ConfigError(f"missing required config section {key!r}")

        _reject_unknown(merged["model"], _MODEL_KEYS, "model")
        missing = _MODEL_KEYS - set(merged["model"])
        if missing:
            raise ConfigError(f"model is missing {', '.join(sorted(missing))}")
        run = dict(_RUN_DEFAULTS)
        _reject_unknown(merged.get("run", {}), _RUN_KEYS, "run")
        run.update(merged.get("run", {}))
        sde = dict(_SDE_DEFAULTS)
        _reject_unknown(merged.get("sde", {}), _SDE_KEYS, "sde")
        sde.update(merged.get("sde", {}))
        reaction = merged.get("reaction")
        if reaction is not None:
            if isinstance(reaction, str):
                fp, fm = reaction_preset(reaction)
                reaction = {"f_plus": fp, "f_minus": fm}
            _reject_unknown(reaction, _REACTION_KEYS, "reaction")

        cfg = cls(
            model=dict(merged["model"]),
            kernel=merged["kernel"],
            rho0=merged["rho0"],
            run=run,
            sde=sde,
            reaction=reaction,
            preset=preset,
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            params = self.params()
            kernel = self.site_kernel()
            rho = as_density(self.rho0, kernel.site_count)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        run = self.run
        if run["horizon"] <= 0 or run["sample_dt"] <= 0:
            raise ConfigError("run.horizon and run.sample_dt must be positive")
        if int(run["replicas"]) < 1:
            raise ConfigError("run.replicas must be >= 1")
        if int(run["max_events"]) < 1:
            raise ConfigError("run.max_events must be >= 1")
        if run["mass_cap"] is not None and run["mass_cap"] <= 0:
            raise ConfigError("run.mass_cap must be positive when set")
        if self.sde["dt"] <= 0:
            raise ConfigError("sde.dt must be positive")
        self.advisories = params.advisories()
        del rho

    def params(self) -> ModelParams:
        return ModelParams(**self.model)

    def site_kernel(self) -> SiteKernel:
        return SiteKernel(np.asarray(self.kernel, dtype=np.float64))

    def rho(self) -> np.ndarray:
        return as_density(self.rho0, self.site_kernel().site_count)

    def reaction_pair(self) -> ReactionPair:
        if self.reaction is None:
            raise ConfigError("config has no 'reaction' section")
        return ReactionPair(self.reaction["f_plus"], self.reaction["f_minus"])

    def to_dict(self) -> dict:
        out = {
            "model": self.model,
            "kernel": self.kernel,
            "rho0": self.rho0,
            "run": self.run,
            "sde": self.sde,
        }
        if self.reaction is not None:
            out["reaction"] = self.reaction
        if self.preset is not None:
            out["preset"] = self.preset
        return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(
        json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def _load(args) -> RunConfig:
    raw: dict = {}
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if getattr(args, "preset", None):
        raw["preset"] = args.preset
    if not raw:
        raise ConfigError("provide --config and/or --preset")
    cfg = RunConfig.from_dict(raw)
    # flag/env overrides (flags > config > RD_SEED env > preset default)
    if cfg.run["seed"] is None:
        env_seed = os.environ.get("RD_SEED")
        cfg.run["seed"] = int(env_seed) if env_seed is not None else 0
    if getattr(args, "seed", None) is not None:
        cfg.run["seed"] = args.seed
    if getattr(args, "replicas", None) is not None:
        cfg.run["replicas"] = args.replicas
    cfg.run["seed"] = int(cfg.run["seed"])
    cfg.run["replicas"] = int(cfg.run["replicas"])
    cfg.run["max_events"] = int(cfg.run["max_events"])
    return cfg


def _apply_threads(args) -> None:
    threads = getattr(args, "threads", None)
    if threads is not None:
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
        import numba

        numba.set_num_threads(threads)


def _ensure_outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write_manifest(outdir: str, command: str, cfg: RunConfig, artifacts: list[str]) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_sha256": config_hash(cfg),
        "seed": cfg.run["seed"],
        "replicas": cfg.run["replicas"],
        "artifacts": sorted(artifacts),
        "versions": _versions(),
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        fh.write(canonical_json(manifest) + "\n")


def _versions() -> dict:
    import numba

    return {"rdlab": __version__, "numpy": np.__version__, "numba": numba.__version__}


def _emit_report(report: dict, outdir: str | None, name: str = "report.json") -> None:
    text = canonical_json(report)
    if outdir:
        with open(os.path.join(outdir, name), "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _print_table(rows: list[dict], columns: list[str]) -> None:
    widths = {c: max(len(c), *(len(_fmt(r.get(c))) for r in rows)) for c in columns}
    header = "  ".join(c.ljust(widths[c]) for c in columns)
    print(header)
    print("-" * len(header))
    for r in rows:
        print("  ".join(_fmt(r.get(c)).ljust(widths[c]) for c in columns))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _warn_advisories(cfg: RunConfig) -> None:
    for note in cfg.advisories:
        print(f"advisory: {note}", file=sys.stderr)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load(args)
    _apply_threads(args)
    _warn_advisories(cfg)
    if not args.out:
        raise ConfigError("simulate requires --out DIR")
    outdir = _ensure_outdir(args.out)
    p = cfg.params()
    kernel = cfg.site_kernel()
    eta0 = initial_configuration(cfg.rho(), p.n)
    seed = cfg.run["seed"]
    artifacts = []
    guard_hit = False
    for r in range(cfg.run["replicas"]):
        traj = simulate(
            p, kernel, eta0, cfg.run["horizon"], cfg.run["sample_dt"],
            mass_cap=cfg.run["mass_cap"], max_events=cfg.run["max_events"],
            rng=RngStream(seed, r), record_events=args.verbose_events,
        )
        name = f"traj_{r:04d}.csv"
        write_trajectory_csv(traj, os.path.join(outdir, name))
        artifacts.append(name)
        if args.verbose_events:
            ev_name = f"events_{r:04d}.jsonl"
            write_events_jsonl(traj, os.path.join(outdir, ev_name))
            artifacts.append(ev_name)
        if traj.termination == "event_guard":
            guard_hit = True
            print(f"warning: replica {r} hit the event guard", file=sys.stderr)
    _write_manifest(outdir, "simulate", cfg, artifacts)
    return EXIT_GUARD if guard_hit else EXIT_OK


def cmd_sde(args) -> int:
    cfg = _load(args)
    _apply_threads(args)
    if not args.out:
        raise ConfigError("sde requires --out DIR")
    outdir = _ensure_outdir(args.out)
    p = cfg.params()
    spec = SDESpec(
        alpha=p.alpha, beta=p.beta, k=p.k, ell=p.ell,
        kernel=cfg.site_kernel(), rho0=cfg.rho(),
        dt=cfg.sde["dt"], horizon=cfg.run["horizon"],
        mass_guard=cfg.sde["mass_guard"],
    )
    stride = max(1, int(round(cfg.run["sample_dt"] / spec.dt)))
    if spec.nsteps % stride != 0:
        stride = 1
    seed = cfg.run["seed"]
    replicas = cfg.sde["replicas"] or cfg.run["replicas"]
    artifacts = []
    failures = 0
    for r in range(int(replicas)):
        path = simulate_path(spec, seed, stream_id=r, record_stride=stride)
        name = f"path_{r:04d}.csv"
        _write_path_csv(path, os.path.join(outdir, name))
        artifacts.append(name)
        if not path.ok:
            failures += 1
            print(f"warning: path {r} left double range", file=sys.stderr)
    _write_manifest(outdir, "sde", cfg, artifacts)
    return EXIT_GUARD if failures else EXIT_OK


def _write_path_csv(path, fname: str) -> None:
    import csv

    with open(fname, "w", newline="") as fh:
        w = csv.writer(fh)
        nsites = path.states.shape[1]
        w.writerow(["t"] + [f"site_{x}" for x in range(nsites)])
        for i, t in enumerate(path.times):
            w.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in path.states[i]])


def cmd_couple(args) -> int:
    cfg = _load(args)
    _apply_threads(args)
    _warn_advisories(cfg)
    p = cfg.params()
    kernel = cfg.site_kernel()
    eta0 = initial_configuration(cfg.rho(), p.n)
    seed = cfg.run["seed"]
    replicas = cfg.run["replicas"]

    dom = domination_run(
        p, kernel, eta0, cfg.run["horizon"],
        replicas=replicas, seed=seed, max_events=cfg.run["max_events"],
    )
    hit = hitting_bound_estimate(
        p, kernel, eta0, args.bound_k,
        replicas=replicas, seed=seed + 1, max_events=cfg.run["max_events"],
    )
    walk = symmetric_walk_hit_estimate(
        args.walk_start, args.walk_upper, replicas=replicas, seed=seed + 2
    )
    report = {
        "domination": {
            "replicas": dom.replicas,
            "violations": dom.violations,
            "min_margin": dom.min_margin,
            "slack_decreases": dom.slack_decreases,
            "guard_terminations": dom.guard_terminations,
        },
        "hitting_bound": {
            "p_hat": hit.p_hat,
            "std_err": hit.std_err,
            "bound": hit.bound,
            "initial_mass": hit.initial_mass,
            "cap": hit.cap,
            "decided": hit.decided,
            "guard_terminations": hit.guard_terminations,
        },
        "walk_check": {
            "p_hat": walk.p_hat,
            "std_err": walk.std_err,
            "exact": walk.bound,
        },
    }
    rows = [
        {"test": "domination_violations", "value": dom.violations, "pass": dom.violations == 0},
        {"test": "hitting_p_hat", "value": hit.p_hat, "pass": hit.satisfies_bound()},
        {"test": "walk_estimator", "value": walk.p_hat,
         "pass": abs(walk.p_hat - walk.bound) <= 4 * walk.std_err},
    ]
    _print_table(rows, ["test", "value", "pass"])
    outdir = _ensure_outdir(args.out) if args.out else None
    _emit_report(report, outdir)
    if outdir:
        _write_outcome_csv(hit, os.path.join(outdir, "hitting_replicas.csv"))
        _write_manifest(outdir, "couple", cfg, ["report.json", "hitting_replicas.csv"])
    ok = all(r["pass"] for r in rows)
    if dom.guard_terminations or hit.guard_terminations:
        return EXIT_GUARD
    return EXIT_OK if ok else EXIT_TEST_FAIL


def _write_outcome_csv(hit, fname: str) -> None:
    import csv

    with open(fname, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "outcome", "stopping_time"])
        for r, (o, t) in enumerate(zip(hit.outcomes, hit.stopping_times)):
            label = {0: "hit_zero", 1: "hit_cap", 2: "guard"}[int(o)]
            w.writerow([r, label, f"{t:.12g}" if math.isfinite(t) else ""])


def cmd_diagnose(args) -> int:
    cfg = _load(args)
    _apply_threads(args)
    _warn_advisories(cfg)
    from .ctmc_engine import simulate_ensemble

    p = cfg.params()
    kernel = cfg.site_kernel()
    eta0 = initial_configuration(cfg.rho(), p.n)
    ens = simulate_ensemble(
        p, kernel, eta0, cfg.run["horizon"],
        replicas=cfg.run["replicas"], seed=cfg.run["seed"],
        max_events=cfg.run["max_events"], track_stats=True,
    )
    reports = []
    for x in range(kernel.site_count):
        reports.append(diag.martingale_mean_test(ens, x))
        reports.append(diag.qv_test(ens, x))
    if kernel.site_count >= 2:
        reports.append(diag.pair_mean_test(ens, 0, 1))
    rows = [
        {"test": r.name, "statistic": r.statistic, "std_err": r.std_err,
         "z": r.z_score, "pass": r.passed}
        for r in reports
    ]
    _print_table(rows, ["test", "statistic", "std_err", "z", "pass"])
    outdir = _ensure_outdir(args.out) if args.out else None
    _emit_report({"tests": [r.to_dict(include_runtime=False) for r in reports]}, outdir)
    if outdir:
        _write_manifest(outdir, "diagnose", cfg, ["report.json"])
    if ens.guard_count():
        return EXIT_GUARD
    return EXIT_OK if all(r.passed for r in reports) else EXIT_TEST_FAIL


def cmd_converge(args) -> int:
    cfg = _load(args)
    _apply_threads(args)
    _warn_advisories(cfg)
    p = cfg.params()
    n_list = [int(s) for s in args.n_list.split(",")]
    result = diag.convergence_sweep(
        p.alpha, p.beta, p.k, p.ell, cfg.site_kernel(), cfg.rho(), n_list,
        horizon=cfg.run["horizon"], replicas=cfg.run["replicas"],
        seed=cfg.run["seed"], sde_dt=cfg.sde["dt"],
        sde_replicas=cfg.sde["replicas"], max_events=cfg.run["max_events"],
    )
    rows = [r.to_dict() for r in result.rows]
    _print_table(rows, ["n", "ks", "moment_z", "max_error_term", "guard_terminations"])
    outdir = _ensure_outdir(args.out) if args.out else None
    _emit_report(result.to_dict(include_runtime=False), outdir)
    if outdir:
        _write_manifest(outdir, "converge", cfg, ["report.json"])
    ks = result.ks_values()
    monotone = all(ks[i + 1] <= ks[i] + args.ks_slack for i in range(len(ks) - 1))
    ks_ok = ks[-1] <= args.ks_max
    z_ok = all(abs(r.moment_z) <= 4.0 for r in result.rows)
    if any(r.guard_terminations for r in result.rows):
        return EXIT_GUARD
    return EXIT_OK if (monotone and ks_ok and z_ok) else EXIT_TEST_FAIL


def cmd_exponents(args) -> int:
    cfg = _load(args)
    pair = cfg.reaction_pair()
    exps = analyze(pair)
    report = {
        "k": exps.k,
        "beta": exps.beta,
        "ell": exps.ell,
        "alpha": exps.alpha,
        "a": str(exps.a),
        "b": str(exps.b),
    }
    outdir = _ensure_outdir(args.out) if args.out else None
    _emit_report(report, outdir)
    if outdir:
        _write_manifest(outdir, "exponents", cfg, ["report.json"])
    return EXIT_OK


def cmd_coeffs(args) -> int:
    cfg = _load(args)
    p = cfg.params()
    kernel = cfg.site_kernel()
    zeta = cfg.rho()
    b_n, a_n = discrete_coefficients(p, kernel, zeta)
    b_star, a_star = limit_coefficients(p.alpha, p.beta, p.k, p.ell, kernel, zeta)
    report = {
        "zeta": zeta.tolist(),
        "n": p.n,
        "b_n": b_n.tolist(),
        "a_n": a_n.tolist(),
        "b_star": b_star.tolist(),
        "a_star": a_star.tolist(),
    }
    outdir = _ensure_outdir(args.out) if args.out else None
    _emit_report(report, outdir)
    if outdir:
        _write_manifest(outdir, "coeffs", cfg, ["report.json"])
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdlab",
        description="Reaction-diffusion particle systems and their diffusion limits",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--preset", choices=sorted(MODEL_PRESETS), help="named preset")
        sp.add_argument("--seed", type=int, help="override the run seed")
        sp.add_argument("--replicas", type=int, help="override replica count")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads (results invariant)")

    sp = sub.add_parser("simulate", help="exact trajectories to CSV")
    common(sp)
    sp.add_argument("--verbose-events", action="store_true", help="write JSONL event logs")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sde", help="reference diffusion paths to CSV")
    common(sp)
    sp.set_defaults(func=cmd_sde)

    sp = sub.add_parser("couple", help="domination coupling and hitting bound")
    common(sp)
    sp.add_argument("--bound-k", type=float, default=10.0, help="mass cap K")
    sp.add_argument("--walk-start", type=int, default=1)
    sp.add_argument("--walk-upper", type=int, default=10)
    sp.set_defaults(func=cmd_couple)

    sp = sub.add_parser("diagnose", help="martingale and variance tests")
    common(sp)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("converge", help="scaling sweep vs the diffusion")
    common(sp)
    sp.add_argument("--n-list", default="50,200,1000", help="comma-separated scales")
    sp.add_argument("--ks-max", type=float, default=0.03)
    sp.add_argument("--ks-slack", type=float, default=0.01)
    sp.set_defaults(func=cmd_converge)

    sp = sub.add_parser("exponents", help="fluctuation exponents of a reaction pair")
    common(sp)
    sp.set_defaults(func=cmd_exponents)

    sp = sub.add_parser("coeffs", help="generator coefficients at the initial density")
    common(sp)
    sp.set_defaults(func=cmd_coeffs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
