"""Command-line driver.

Config files are JSON::

    {
      "environment": {"builtin": "gridworld", "params": {"discount": 0.9}},   # or {"file": "mdp.json"}
      "policy_class": {"builtin": "full_simplex"},                           # optional; or {"file": ...}
      "algorithms": [{"algorithm": "SDPO", "K": 64}, {"algorithm": "CPI", "K": 64}],
      "seeds": [0, 1, 2],
      "output_dir": "out",
      "vgd": {"n_probes": 500, "eps": [0.01, 0.05], "floor": "class_optimum"},
      "sample_audit": {"n": 1000000, "policy": "uniform"}
    }

Relative file paths resolve against the config file's directory.  Exit
status is 0 on success, 1 when a run or check fails, 2 for bad input.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checks
from . import policy_space as ps
from .algos import AlgoConfig, run
from .envs import BUILTIN_ENVS, make_env
from .mdp import InvalidMdpError, load_mdp, policy_evaluation
from .sampler import make_rng
from .theory import BENCHMARKS, check_run
from .vgd import (class_optimum, completeness_error, d_infty, epsgreedy_vgd_check, random_probes,
                  vgd_certificate, vgd_from_structure, vgd_trace)


class ConfigError(ValueError):
    """Invalid experiment configuration (exit status 2)."""


CLASS_BUILDERS = ("full_simplex", "top_k", "random_vertex")


@dataclass
class ExperimentConfig:
    environment: dict = field(default_factory=lambda: {"builtin": "gridworld"})
    policy_class: dict = field(default_factory=lambda: {"builtin": "full_simplex"})
    algorithms: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "out"
    vgd: dict = field(default_factory=dict)
    sample_audit: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {"environment", "policy_class", "algorithms", "seeds", "output_dir", "vgd", "sample_audit"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**{k: v for k, v in data.items()})
        cfg.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        cfg.validate()
        return cfg

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self) -> None:
        for key, spec in (("environment", self.environment), ("policy_class", self.policy_class)):
            if not isinstance(spec, dict) or ("builtin" in spec) == ("file" in spec):
                raise ConfigError(f"{key} needs exactly one of 'builtin' or 'file'")
            if "file" in spec and not self.resolve(spec["file"]).is_file():
                raise ConfigError(f"{key} file not found: {self.resolve(spec['file'])}")
        if "builtin" in self.environment and self.environment["builtin"] not in BUILTIN_ENVS:
            raise ConfigError(f"unknown builtin environment {self.environment['builtin']!r}; "
                              f"choose from {sorted(BUILTIN_ENVS)}")
        if "builtin" in self.policy_class and self.policy_class["builtin"] not in CLASS_BUILDERS:
            raise ConfigError(f"unknown builtin class {self.policy_class['builtin']!r}; choose from {CLASS_BUILDERS}")
        if not isinstance(self.seeds, list) or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError("seeds must be a list of nonnegative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not isinstance(self.algorithms, list):
            raise ConfigError("algorithms must be a list")
        try:
            self.algo_configs(0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad algorithm config: {exc}") from exc

    def algo_configs(self, seed: int) -> list:
        out = []
        for a in self.algorithms:
            a = {"algorithm": a} if isinstance(a, str) else dict(a)
            a["seed"] = seed
            out.append(AlgoConfig.from_dict(a))
        return out

    def build_mdp(self):
        env = self.environment
        if "file" in env:
            return load_mdp(self.resolve(env["file"]))
        return make_env(env["builtin"], **env.get("params", {}))

    def build_class(self, mdp):
        spec = self.policy_class
        if "file" in spec:
            cls = ps.load_class(self.resolve(spec["file"]))
            if cls.num_states != mdp.num_states or cls.num_actions != mdp.num_actions:
                raise ConfigError("policy class shape does not match the environment")
            return cls
        params = dict(spec.get("params", {}))
        name = spec["builtin"]
        S, A = mdp.num_states, mdp.num_actions
        if name == "full_simplex":
            cls = ps.full_simplex(S, A)
        elif name == "top_k":
            scores = params.pop("scores", "costs")
            if scores == "costs":
                table = mdp.rewards
            elif scores == "uniform_q":
                table = policy_evaluation(mdp, np.full((S, A), 1.0 / A)).q
            else:
                raise ConfigError("top_k scores must be 'costs' or 'uniform_q'")
            cls = ps.top_k_class(table, int(params.pop("k", 1)))
        else:
            cls = ps.random_vertex_class(S, A, int(params.pop("num_vertices", 3)), int(params.pop("seed", 0)))
        eps = float(params.pop("explore_eps", 0.0))
        if params:
            raise ConfigError(f"unknown class params: {sorted(params)}")
        return ps.wrap_eps_greedy(cls, eps) if eps else cls


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data, base_dir=p.parent)


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *args):
        if not self.quiet:
            print(*args)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _policy_csv(policy) -> str:
    A = policy.shape[1]
    lines = ["state," + ",".join(f"a{a}" for a in range(A))]
    lines += [f"{s}," + ",".join(repr(float(x)) for x in row) for s, row in enumerate(policy)]
    return "\n".join(lines) + "\n"


def _run_stem(cfgs: list, i: int) -> str:
    alg = cfgs[i].algorithm
    dup = sum(c.algorithm == alg for c in cfgs) > 1
    return f"{alg.lower()}{i}" if dup else alg.lower()


# ----------------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------------

def cmd_solve(cfg: ExperimentConfig, out_dir: Path, seeds, say) -> int:
    mdp = cfg.build_mdp()
    cls = cfg.build_class(mdp)
    star = class_optimum(mdp, cls)
    n_probes = int(cfg.vgd.get("n_probes", 256))
    probes = random_probes(cls, n_probes, seeds[0])
    sol = {
        "V_star": star.value,
        "V_star_states": star.v.tolist(),
        "D_infty": d_infty(mdp, cls),
        "completeness_error": completeness_error(mdp, cls, probes),
        "n_probes": n_probes,
        "horizon": mdp.horizon,
        "policy": star.policy.tolist(),
    }
    _write(out_dir / "solution.json", json.dumps(sol, indent=2) + "\n")
    _write(out_dir / "optimal_policy.csv", _policy_csv(star.policy))
    say(f"V*               {star.value!r}")
    say(f"D_infty          {sol['D_infty']!r}")
    say(f"completeness     {sol['completeness_error']!r}  ({n_probes} probes)")
    say(f"wrote {out_dir / 'solution.json'} and {out_dir / 'optimal_policy.csv'}")
    return 0


def _runs(cfg, seeds):
    for seed in seeds:
        cfgs = cfg.algo_configs(seed)
        for i, ac in enumerate(cfgs):
            yield seed, _run_stem(cfgs, i), ac


def cmd_run(cfg: ExperimentConfig, out_dir: Path, seeds, say) -> int:
    if not cfg.algorithms:
        raise ConfigError("run needs at least one entry in 'algorithms'")
    mdp = cfg.build_mdp()
    cls = cfg.build_class(mdp)
    floor = cfg.vgd.get("floor", "class_optimum")
    for seed, stem, ac in _runs(cfg, seeds):
        res = run(mdp, cls, ac)
        tr = vgd_trace(mdp, res.policies, res.class_used, floor=floor)
        out_dir.mkdir(parents=True, exist_ok=True)
        res.to_csv(out_dir / f"run_{stem}_seed{seed}.csv")
        tr.to_csv(out_dir / f"vgd_{stem}_seed{seed}.csv")
        say(f"{ac.algorithm:6s} seed={seed} K={ac.K} V_final={res.values[-1]:.6f} "
            f"subopt={tr.subopt[-1]:.3e}")
    return 0


def _table(rows, say) -> None:
    w = max((len(r[0]) for r in rows), default=10)
    for name, ok, detail in rows:
        say(f"{'PASS' if ok else 'FAIL'}  {name:<{w}}  {detail}")


def cmd_check(cfg, out_dir: Path, seeds, say) -> int:
    rows = []
    if cfg is None:
        targets = [(name, lambda name=name: BENCHMARKS[name]()) for name in BENCHMARKS]
        targets.append(("zero_cost", lambda: make_env("zero_cost")))
    else:
        targets = [("config", cfg.build_mdp)]
    for label, build in targets:
        try:
            mdp = build()
        except (InvalidMdpError, ValueError, KeyError) as exc:
            rows.append((f"{label}:mdp-validation", False, f"{type(exc).__name__}: {exc}"))
            continue
        rows.append((f"{label}:mdp-validation", True, f"S={mdp.num_states} A={mdp.num_actions} gamma={mdp.discount}"))
        rows += [(r.name, r.passed, r.detail) for r in checks.run_battery(mdp, seeds[0], f"{label}:")]
        if cfg is not None and cfg.algorithms:
            cls = cfg.build_class(mdp)
            for seed, stem, ac in _runs(cfg, seeds):
                if ac.mode != "exact":
                    continue
                tc = check_run(mdp, run(mdp, cls, ac), seed=seed)
                rows.append((f"{label}:theorem-{stem}-seed{seed}", tc.passed,
                             f"subopt {tc.subopt:.3e} <= rhs {tc.rhs:.3e}"))
    _table(rows, say)
    failed = [r[0] for r in rows if not r[1]]
    lines = ["property,passed,detail"] + [f"{n},{int(ok)},\"{d}\"" for n, ok, d in rows]
    if out_dir is not None:
        _write(out_dir / "check.csv", "\n".join(lines) + "\n")
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    say(f"all {len(rows)} checks passed")
    return 0


def cmd_sample_audit(cfg: ExperimentConfig, out_dir: Path, seeds, say) -> int:
    mdp = cfg.build_mdp()
    opts = dict(cfg.sample_audit)
    n = int(opts.get("n", 1_000_000))
    kind = opts.get("policy", "uniform")
    S, A = mdp.num_states, mdp.num_actions
    rng = make_rng(seeds[0], 0)
    if kind == "uniform":
        pi = np.full((S, A), 1.0 / A)
    elif kind == "random":
        pi = rng.dirichlet(np.ones(A), size=S)
    else:
        raise ConfigError("sample_audit.policy must be 'uniform' or 'random'")
    audit = checks.sampler_audit(mdp, pi, n, make_rng(seeds[0], 1))
    lines = ["metric,value,threshold,passed"]
    for name, v, t, ok in audit.rows():
        lines.append(f"{name},{v!r},{t!r},{int(ok)}")
        say(f"{'PASS' if ok else 'FAIL'}  {name:<22s} {v:.6g} (threshold {t:.6g})")
    say(f"{audit.cells} (s,a) cells tested with n={n}")
    _write(out_dir / "sample_audit.csv", "\n".join(lines) + "\n")
    if not audit.passed:
        print("FAILED: " + ", ".join(r[0] for r in audit.rows() if not r[3]), file=sys.stderr)
        return 1
    return 0


def cmd_vgd(cfg: ExperimentConfig, out_dir: Path, seeds, say) -> int:
    mdp = cfg.build_mdp()
    cls = cfg.build_class(mdp)
    opts = dict(cfg.vgd)
    n_probes = int(opts.get("n_probes", 500))
    eps_list = [float(e) for e in opts.get("eps", [0.01, 0.05])]
    probes = random_probes(cls, n_probes, seeds[0])
    star = class_optimum(mdp, cls).value
    emp = vgd_certificate(mdp, cls, probes, star, opts.get("nu_cap"))
    struct = vgd_from_structure(mdp, cls, probes)
    lines = [
        f"n_probes            {n_probes}",
        f"V_star              {star!r}",
        f"D_infty             {d_infty(mdp, cls)!r}",
        f"completeness_error  {completeness_error(mdp, cls, probes)!r}",
        f"nu_empirical        {emp.nu!r}",
        f"eps_vgd_empirical   {emp.eps_floor!r}",
        f"nu_structural       {struct.nu!r}",
        f"eps_vgd_structural  {struct.eps_floor!r}",
    ]
    ok = True
    for eps in eps_list:
        rep = epsgreedy_vgd_check(mdp, cls, eps, params=struct, probe_policies=probes)
        ok &= rep.ok
        lines.append(f"eps_greedy[{eps}]     violations={len(rep.violations)} max_margin={rep.max_slack_used!r}")
    text = "\n".join(lines) + "\n"
    _write(out_dir / "vgd_certificate.txt", text)
    for ln in lines:
        say(ln)
    for seed, stem, ac in _runs(cfg, seeds):
        res = run(mdp, cls, ac)
        vgd_trace(mdp, res.policies, res.class_used, floor=opts.get("floor", "class_optimum")).to_csv(
            out_dir / f"vgd_{stem}_seed{seed}.csv")
    if not ok:
        print("FAILED: eps-greedy VGD inequality violated", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "run": cmd_run,
    "check": cmd_check,
    "sample-audit": cmd_sample_audit,
    "vgd": cmd_vgd,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vgdlab", description="Tabular policy optimization experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="run this single seed instead of the config's list")
        p.add_argument("--quiet", action="store_true", help="suppress the stdout report and runtime warnings")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = _Out(args.quiet)
    with warnings.catch_warnings():
        if args.quiet:
            warnings.simplefilter("ignore", RuntimeWarning)
        return _dispatch(args, say)


def _dispatch(args, say) -> int:
    try:
        if args.config is None:
            if args.command != "check":
                raise ConfigError(f"{args.command} needs --config")
            cfg = None
        else:
            cfg = load_config(args.config)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        seeds = [args.seed] if args.seed is not None else (cfg.seeds if cfg else [0])
        if args.out is not None:
            out_dir = Path(args.out)
        elif cfg is not None:
            out_dir = cfg.resolve(cfg.output_dir)
        else:
            out_dir = None
        return COMMANDS[args.command](cfg, out_dir, seeds, say)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InvalidMdpError, ps.InvalidClassError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # run errors
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
