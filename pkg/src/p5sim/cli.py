"""Command-line front end: build, simulate, train, eval, compare, perturb.

One flat key-value config file drives everything; flags override file
values, file values override documented defaults. Unknown keys are
rejected. ``P5_CONFIG`` names a default config file, superseded by
``--config``. Results go to stdout, diagnostics to stderr; exit codes are
0 (success), 1 (usage error), 2 (runtime error). Output files are written
to a temp file and atomically renamed, so failures never leave partial
output behind.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import analysis
from .dynamics import LangevinParams
from .environment import EnvConfig, PolymerEnv
from .errors import ConfigError, P5Error
from .forcefield import ForceFieldParams, default_forcefield_params, parse_forcefield
from .policy import PpoHyper, load_checkpoint, save_checkpoint, train_policy
from .topology import Topology, build_cellulose_acetate_chain, parse_topology, write_topology
from .units import KT_ROOM_INTERNAL

__all__ = ["Config", "parse_config", "run_subcommand", "main", "DEFAULTS"]


class UsageError(P5Error):
    pass


# key -> (default, help). Types are inferred from the default's type.
DEFAULTS: dict[str, tuple[object, str]] = {
    "env.target_rg_min": (0.0, "lower edge of the target rg band (A)"),
    "env.target_rg_max": (200.0, "upper edge of the target rg band (A)"),
    "env.episode_length": (20000, "steps per episode"),
    "env.f_coef": (0.5, "force magnitude scale per backbone bead"),
    "env.theta_max": (0.0873, "max per-step monomer rotation (rad)"),
    "env.obs_radius": (12.0, "neighbor observation radius (A)"),
    "env.k_neighbors": (4, "observed nearest neighbors per backbone bead"),
    "env.init_noise_sigma": (0.5, "reset positional noise sigma (A)"),
    "env.k_d": (0.001, "distance penalty gain (1/A^2)"),
    "env.k_r": (1.0, "in-band bonus"),
    "env.k_s": (0.5, "band-center shaping gain"),
    "env.mass_weighted_rg": (False, "mass-weighted radius of gyration"),
    "dyn.dt": (0.002, "integrator timestep (dimensionless time units)"),
    "dyn.gamma": (0.1, "friction per time unit"),
    "dyn.kt": (KT_ROOM_INTERNAL, "thermal energy kT (internal units; default 298 K)"),
    "ff.file": ("", "force-field parameter file (.p5ff); empty = built-in defaults"),
    "ppo.clip_epsilon": (0.2, "PPO clipping epsilon"),
    "ppo.gamma": (0.99, "reward discount"),
    "ppo.gae_lambda": (0.95, "GAE lambda"),
    "ppo.learning_rate": (3e-4, "SGD learning rate"),
    "ppo.epochs": (4, "optimization epochs per batch"),
    "ppo.minibatch_size": (256, "minibatch size"),
    "ppo.value_coef": (0.5, "value-loss coefficient"),
    "ppo.entropy_coef": (0.0, "entropy bonus coefficient"),
    "ppo.max_grad_norm": (0.5, "global gradient-norm clip (0 disables)"),
    "ppo.hidden": ("128,128", "hidden layer sizes, comma separated"),
    "ppo.log_std_init": (-0.5, "initial action log standard deviation"),
    "train.n_envs": (1, "parallel environment workers per update"),
    "sim.traj_stride": (1, "record every k-th frame when simulating"),
}


@dataclass
class Config:
    values: dict[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    def env_config(self, **overrides) -> EnvConfig:
        kw = dict(
            target_rg_min=self["env.target_rg_min"],
            target_rg_max=self["env.target_rg_max"],
            episode_length=self["env.episode_length"],
            f_coef=self["env.f_coef"],
            theta_max=self["env.theta_max"],
            obs_radius=self["env.obs_radius"],
            k_neighbors=self["env.k_neighbors"],
            init_noise_sigma=self["env.init_noise_sigma"],
            k_d=self["env.k_d"],
            k_r=self["env.k_r"],
            k_s=self["env.k_s"],
            mass_weighted_rg=self["env.mass_weighted_rg"],
        )
        kw.update(overrides)
        return EnvConfig(**kw)

    def ppo_hyper(self) -> PpoHyper:
        return PpoHyper(
            clip_epsilon=self["ppo.clip_epsilon"],
            gamma=self["ppo.gamma"],
            gae_lambda=self["ppo.gae_lambda"],
            learning_rate=self["ppo.learning_rate"],
            epochs=self["ppo.epochs"],
            minibatch_size=self["ppo.minibatch_size"],
            value_coef=self["ppo.value_coef"],
            entropy_coef=self["ppo.entropy_coef"],
            max_grad_norm=self["ppo.max_grad_norm"],
        )

    def hidden_sizes(self) -> tuple[int, ...]:
        try:
            return tuple(int(t) for t in str(self["ppo.hidden"]).split(",") if t.strip())
        except ValueError:
            raise ConfigError(f"ppo.hidden must be comma-separated ints, got "
                              f"{self['ppo.hidden']!r}") from None

    def dyn_params(self, topo: Topology) -> LangevinParams:
        return LangevinParams.for_topology(
            topo, dt=self["dyn.dt"], gamma=self["dyn.gamma"], kT=self["dyn.kt"]
        )

    def forcefield(self) -> ForceFieldParams:
        path = self["ff.file"]
        if not path:
            return default_forcefield_params()
        with open(path, encoding="utf-8") as fh:
            return parse_forcefield(fh.read())


def _parse_value(key: str, raw: str, where: str):
    default = DEFAULTS[key][0]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError("expected true/false")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None


def parse_config(text: str, overrides: list[str] | None = None) -> Config:
    """Resolve defaults <- file <- flag overrides; validate the result.

    ``text`` is ``key = value`` lines with ``#`` comments; ``overrides``
    are ``key=value`` strings from --set flags.
    """
    values = {k: v for k, (v, _) in DEFAULTS.items()}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, f"config line {lineno}")
    for ov in overrides or []:
        if "=" not in ov:
            raise ConfigError(f"--set {ov!r}: expected key=value")
        key, raw = (s.strip() for s in ov.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"--set: unknown key {key!r}")
        values[key] = _parse_value(key, raw, f"--set {key}")

    cfg = Config(values=values)
    if not values["env.target_rg_min"] < values["env.target_rg_max"]:
        raise ConfigError(
            "env.target_rg_min must be smaller than env.target_rg_max "
            f"(got {values['env.target_rg_min']} >= {values['env.target_rg_max']})"
        )
    try:
        cfg.env_config()
        cfg.ppo_hyper()
        cfg.hidden_sizes()
    except (ValueError, ConfigError) as exc:
        raise ConfigError(str(exc)) from None
    if values["train.n_envs"] < 1 or values["sim.traj_stride"] < 1:
        raise ConfigError("train.n_envs and sim.traj_stride must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _atomic_write(path: str, data: str) -> None:
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_topology(args) -> Topology:
    if getattr(args, "topology", None):
        with open(args.topology, encoding="utf-8") as fh:
            return parse_topology(fh.read())
    return build_cellulose_acetate_chain(getattr(args, "monomers", None) or 75)


def _load_config(args) -> Config:
    path = getattr(args, "config", None) or os.environ.get("P5_CONFIG")
    text = ""
    if path:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_config(text, getattr(args, "set", None))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="p5sim", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file (overrides $P5_CONFIG)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable); known keys:\n"
                       + ", ".join(sorted(DEFAULTS)))

    p = sub.add_parser("build", help="write a cellulose-acetate chain topology")
    common(p)
    p.add_argument("--monomers", type=int, required=True)
    p.add_argument("--out", required=True, help="output .p5t path")

    p = sub.add_parser("simulate", help="run a trajectory and write extended-XYZ")
    common(p)
    p.add_argument("--mode", choices=("md", "steered"), required=True)
    p.add_argument("--policy", help="checkpoint (.p5c), required for steered mode")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--traj", required=True, help="output trajectory path")
    p.add_argument("--topology", help=".p5t file (default: built 75-mer)")
    p.add_argument("--monomers", type=int, help="build an n-mer instead")
    p.add_argument("--stride", type=int, help="frame stride (default sim.traj_stride)")

    p = sub.add_parser("train", help="train a steering policy with PPO")
    common(p)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--out", required=True, help="checkpoint output (.p5c)")
    p.add_argument("--curve", help="learning-curve CSV output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topology", help=".p5t file (default: built 75-mer)")
    p.add_argument("--monomers", type=int)

    p = sub.add_parser("eval", help="occupancy statistics of a trajectory")
    common(p)
    p.add_argument("--traj", required=True)
    p.add_argument("--lo", type=float, help="band lower edge (default config)")
    p.add_argument("--hi", type=float, help="band upper edge (default config)")
    p.add_argument("--csv", help="also write metric,value CSV here")

    p = sub.add_parser("compare", help="sampling improvement of steered vs baseline")
    common(p)
    p.add_argument("--baseline", required=True)
    p.add_argument("--steered", required=True)
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--csv", help="also write metric,value CSV here")

    p = sub.add_parser("perturb", help="perturbed-start recovery experiment")
    common(p)
    p.add_argument("--policy", help="checkpoint; omit for unsteered baseline")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--sigma", type=float, help="perturbation sigma (default 5x reset noise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topology", help=".p5t file (default: built 75-mer)")
    p.add_argument("--monomers", type=int)
    p.add_argument("--csv", help="also write metric,value CSV here")
    return parser


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_build(args, out) -> int:
    topo = build_cellulose_acetate_chain(args.monomers)
    _atomic_write(args.out, write_topology(topo))
    print(f"wrote {topo.n_beads} beads / {topo.n_monomers} monomers to {args.out}",
          file=out)
    return 0


def _cmd_simulate(args, out) -> int:
    cfg = _load_config(args)
    if args.mode == "steered" and not args.policy:
        raise UsageError("--mode steered requires --policy")
    topo = _load_topology(args)
    env_cfg = cfg.env_config(episode_length=args.steps)
    env = PolymerEnv(topo, env_cfg, cfg.forcefield(), cfg.dyn_params(topo))
    policy = load_checkpoint(args.policy) if args.mode == "steered" else None
    stride = args.stride or cfg["sim.traj_stride"]
    roll = analysis.rollout_episode(env, policy, seed=args.seed, record_stride=stride)
    _atomic_write(args.traj, analysis.write_trajectory(roll.frames, topo.type_names()))
    print(f"wrote {len(roll.frames)} frames to {args.traj}", file=out)
    return 0


def _cmd_train(args, out) -> int:
    cfg = _load_config(args)
    topo = _load_topology(args)
    envs = [
        PolymerEnv(topo, cfg.env_config(), cfg.forcefield(), cfg.dyn_params(topo))
        for _ in range(cfg["train.n_envs"])
    ]
    result = train_policy(
        envs,
        cfg.ppo_hyper(),
        total_episodes=args.episodes,
        seed=args.seed,
        hidden=cfg.hidden_sizes(),
        log_std_init=cfg["ppo.log_std_init"],
    )
    save_checkpoint(result.params, args.out)
    curve_text = "episode,mean_cumulative_reward\n" + "".join(
        f"{ep},{rew!r}\n" for ep, rew in result.curve
    )
    if args.curve:
        _atomic_write(args.curve, curve_text)
    print(f"trained {len(result.curve)} episodes; checkpoint at {args.out}", file=out)
    return 0


def _band(args, cfg: Config) -> tuple[float, float]:
    lo = args.lo if args.lo is not None else cfg["env.target_rg_min"]
    hi = args.hi if args.hi is not None else cfg["env.target_rg_max"]
    if not lo < hi:
        raise UsageError(f"--lo must be < --hi (got {lo}, {hi})")
    return lo, hi


def _read_frames(path: str):
    with open(path, encoding="utf-8") as fh:
        frames, _ = analysis.read_trajectory(fh.read())
    return frames


def _cmd_eval(args, out) -> int:
    cfg = _load_config(args)
    lo, hi = _band(args, cfg)
    stats = analysis.occupancy_fraction(_read_frames(args.traj), lo, hi)
    print(f"n_frames = {stats.n_frames}", file=out)
    print(f"n_inside = {stats.n_inside}", file=out)
    print(f"fraction = {stats.fraction:.10f}", file=out)
    if args.csv:
        _atomic_write(args.csv, analysis.metrics_csv([
            ("band_lo", lo), ("band_hi", hi),
            ("n_frames", stats.n_frames), ("n_inside", stats.n_inside),
            ("fraction", stats.fraction),
        ]))
    return 0


def _cmd_compare(args, out) -> int:
    cfg = _load_config(args)
    lo, hi = _band(args, cfg)
    base = analysis.occupancy_fraction(_read_frames(args.baseline), lo, hi)
    steer = analysis.occupancy_fraction(_read_frames(args.steered), lo, hi)
    print(f"baseline_fraction = {base.fraction:.10f}", file=out)
    print(f"steered_fraction = {steer.fraction:.10f}", file=out)
    rows = [("band_lo", lo), ("band_hi", hi),
            ("baseline_fraction", base.fraction),
            ("steered_fraction", steer.fraction)]
    if base.n_inside == 0:
        # undefined as a number; report qualitatively
        print("improvement = infinite (baseline occupancy is zero)", file=out)
        rows.append(("improvement_percent", "infinite"))
    else:
        pct = analysis.improvement_percent(base, steer)
        print(f"improvement = {pct:+.2f}%", file=out)
        rows.append(("improvement_percent", pct))
    if args.csv:
        _atomic_write(args.csv, analysis.metrics_csv(rows))
    return 0


def _cmd_perturb(args, out) -> int:
    cfg = _load_config(args)
    topo = _load_topology(args)
    policy = load_checkpoint(args.policy) if args.policy else None
    report = analysis.perturbation_experiment(
        topo,
        cfg.env_config(),
        cfg.forcefield(),
        cfg.dyn_params(topo),
        policy,
        n_episodes=args.episodes,
        perturb_sigma=args.sigma,
        seed=args.seed,
    )
    print(report.to_text(), file=out, end="")
    if args.csv:
        _atomic_write(args.csv, report.to_csv())
    return 0


_COMMANDS = {
    "build": _cmd_build,
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "perturb": _cmd_perturb,
}


def run_subcommand(argv: list[str], out=None, err=None) -> int:
    """Parse argv and dispatch; returns the process exit code."""
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=err)
        return 1
    except (P5Error, OSError, ValueError) as exc:
        print(f"error: {exc}", file=err)
        return 2


def main(argv: list[str] | None = None) -> int:
    try:
        return run_subcommand(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:  # argparse --help path
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
