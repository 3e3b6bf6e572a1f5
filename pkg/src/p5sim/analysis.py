"""Trajectory recording, occupancy metrics, path probabilities, diffusion.

Trajectory files are extended-XYZ text, three sections per frame: a bead
count line, a ``step=.. rg=.. pe=.. reward=..`` comment line, then one
``TYPE x y z vx vy vz`` line per bead. All floats are written as decimal
scientific with 10 fractional digits, so identical trajectories serialize
to identical bytes.

The sampling-efficiency headline metric is the relative improvement of the
occupancy fraction (fraction of frames whose radius of gyration lies inside
the closed target band) of a steered run over an unsteered baseline,
reported in percent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import LangevinParams, SystemState, transition_log_density
from .environment import (
    ActionVector,
    EnvConfig,
    PolymerEnv,
    radius_of_gyration,
)
from .errors import P5Error, TopologyError, UndefinedBaselineError
from .forcefield import ForceFieldParams, ForceFieldTables, total_energy_forces
from .policy import PolicyParams, action_log_density, sample_action_raw, _squash
from .topology import BEAD_TYPES, Topology

__all__ = [
    "TrajectoryFrame",
    "OccupancyStats",
    "ActionRecord",
    "EpisodeRollout",
    "PerturbationEpisode",
    "PerturbationReport",
    "occupancy_fraction",
    "improvement_percent",
    "rg_histogram",
    "trajectory_log_prob",
    "msd_diffusion_coefficient",
    "perturbation_experiment",
    "rollout_episode",
    "write_trajectory",
    "read_trajectory",
    "frames_for_anomaly_scan",
    "metrics_csv",
]

_FMT = "{:.10e}"


@dataclass
class TrajectoryFrame:
    step: int
    positions: np.ndarray
    velocities: np.ndarray
    rg: float
    potential_energy: float
    reward_total: float = 0.0
    # carried in memory only; the file format stores positions/velocities
    angular_velocities: np.ndarray | None = None


@dataclass(frozen=True)
class OccupancyStats:
    n_frames: int
    n_inside: int

    @property
    def fraction(self) -> float:
        return self.n_inside / self.n_frames


def occupancy_fraction(frames, lo: float, hi: float) -> OccupancyStats:
    """Count frames whose rg lies in the closed interval [lo, hi]."""
    frames = list(frames)
    if not frames:
        raise P5Error("occupancy of an empty trajectory is undefined")
    inside = sum(1 for f in frames if lo <= f.rg <= hi)
    return OccupancyStats(n_frames=len(frames), n_inside=inside)


def improvement_percent(baseline: OccupancyStats, steered: OccupancyStats) -> float:
    """Relative occupancy gain of the steered run, in percent."""
    if baseline.n_inside == 0:
        raise UndefinedBaselineError(
            "baseline occupancy is zero; relative improvement undefined"
        )
    b, s = baseline.fraction, steered.fraction
    return 100.0 * (s - b) / b


def rg_histogram(frames, bin_width: float, lo: float, hi: float):
    """Half-open bins [edge, edge + width) from lo; the final bin closes at hi.

    Returns a list of (bin lower edge, count). Frames outside [lo, hi] are
    not counted.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    if not lo < hi:
        raise ValueError("need lo < hi")
    n_bins = int(math.ceil((hi - lo) / bin_width))
    counts = [0] * n_bins
    for f in frames:
        if f.rg < lo or f.rg > hi:
            continue
        idx = int((f.rg - lo) // bin_width)
        if idx >= n_bins:  # rg == hi (or fp landing on the top edge)
            idx = n_bins - 1
        counts[idx] += 1
    return [(lo + i * bin_width, counts[i]) for i in range(n_bins)]


# ---------------------------------------------------------------------------
# Trajectory probability (path density under policy + dynamics)
# ---------------------------------------------------------------------------


@dataclass
class ActionRecord:
    """What the policy saw and drew at one step, as needed for re-evaluation."""

    obs_vector: np.ndarray
    raw: np.ndarray


def trajectory_log_prob(
    frames: list[TrajectoryFrame],
    actions: list[ActionRecord] | None,
    policy: PolicyParams | None,
    topo: Topology,
    ff: ForceFieldParams,
    dyn_params: LangevinParams,
    init_log_prob: float = 0.0,
    cfg: EnvConfig | None = None,
) -> float:
    """Log density of a recorded trajectory: initial term plus, per step, the
    policy's action log-density and the dynamics transition log-density.

    Terms accumulate left to right starting from ``init_log_prob``, so
    conditionally chaining two segments reproduces the full-trajectory value
    bit for bit. For unsteered runs pass ``actions=None``; the density is
    then the exact marginal over the recorded positions/velocities. Steered
    trajectories need per-step :class:`ActionRecord` entries (observation
    and raw action) because observations cannot be rebuilt from serialized
    frames alone. Angular-velocity channels enter only when every frame
    carries them in memory.
    """
    if not frames:
        raise P5Error("trajectory_log_prob needs at least the initial frame")
    n_trans = len(frames) - 1
    if actions is not None and len(actions) != n_trans:
        raise P5Error(
            f"{len(actions)} action records for {n_trans} transitions"
        )
    if actions is not None and policy is None:
        raise P5Error("steered trajectory needs the policy for action densities")
    if actions is not None and cfg is None:
        raise P5Error("steered trajectory needs the environment config (f_coef)")

    include_angular = all(f.angular_velocities is not None for f in frames)
    tables = ForceFieldTables(topo, ff)
    bb = np.asarray(topo.backbone_order, dtype=np.intp)
    n = topo.n_beads

    def as_state(f: TrajectoryFrame) -> SystemState:
        w = f.angular_velocities if include_angular else np.zeros((n, 3))
        return SystemState(f.positions, f.velocities, w, f.step)

    total = init_log_prob
    for t in range(n_trans):
        prev, nxt = frames[t], frames[t + 1]
        f_ext = np.zeros((n, 3))
        if actions is not None:
            rec = actions[t]
            total = total + action_log_density(policy, rec.obs_vector, rec.raw)
            squashed = ActionVector(_squash(rec.raw, policy.sigmoid_mask))
            f_ext[bb] = squashed.directions() * (
                cfg.f_coef * squashed.alphas()
            )[:, None]
        f_sys = total_energy_forces(topo, prev.positions, ff, tables).forces
        total = total + transition_log_density(
            as_state(prev),
            as_state(nxt),
            f_sys + f_ext,
            dyn_params,
            include_angular=include_angular,
        )
    return total


# ---------------------------------------------------------------------------
# Mean squared displacement / diffusion coefficient
# ---------------------------------------------------------------------------


def msd_diffusion_coefficient(
    frames,
    fit_range: tuple[int, int] = (100, 1000),
    dt: float = 1.0,
    max_lags: int = 16,
    origin_stride: int | None = None,
) -> float:
    """Least-squares Einstein estimate D = slope(MSD vs time)/6.

    ``fit_range`` is an inclusive window of lag steps; lags are thinned to
    at most ``max_lags`` values and time origins are strided to bound the
    cost. The default window skips the ballistic regime of the stock
    parameters. ``dt`` converts step lags into time units. A single usable
    lag fits the slope through the origin.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise P5Error("need at least two frames for a diffusion estimate")
    steps = np.array([f.step for f in frames])
    spacing = np.diff(steps)
    if (spacing <= 0).any() or (spacing != spacing[0]).any():
        raise P5Error("frames must be uniformly spaced in steps")
    stride = int(spacing[0])
    pos = np.array([f.positions for f in frames])  # (T, N, 3)
    T = pos.shape[0]

    lo = max(1, int(math.ceil(fit_range[0] / stride)))
    hi = min(T - 1, int(math.floor(fit_range[1] / stride)))
    if hi < lo:
        raise P5Error(
            f"fit range {fit_range} contains no usable lags "
            f"(frame stride {stride}, {T} frames)"
        )
    lags = np.unique(np.linspace(lo, hi, min(max_lags, hi - lo + 1)).astype(int))
    o_stride = origin_stride if origin_stride else max(1, T // 200)

    times = np.empty(lags.size)
    msds = np.empty(lags.size)
    for idx, lag in enumerate(lags):
        origins = np.arange(0, T - lag, o_stride)
        disp = pos[origins + lag] - pos[origins]
        msds[idx] = float(np.mean(np.sum(disp**2, axis=2)))
        times[idx] = lag * stride * dt
    if lags.size == 1:
        return float(msds[0] / (6.0 * times[0]))
    slope = np.polyfit(times, msds, 1)[0]
    return float(slope / 6.0)


# ---------------------------------------------------------------------------
# Rollouts and the perturbed-start experiment
# ---------------------------------------------------------------------------


@dataclass
class EpisodeRollout:
    frames: list[TrajectoryFrame]
    action_records: list[ActionRecord] | None
    rg_trace: np.ndarray  # length episode_length + 1, includes initial frame
    cumulative_reward: float


def rollout_episode(
    env: PolymerEnv,
    policy: PolicyParams | None,
    seed: int,
    record_stride: int = 0,
    record_actions: bool = False,
    keep_angular: bool = False,
) -> EpisodeRollout:
    """Run one full episode; unsteered (zero actions) when ``policy`` is None.

    Resets and dynamics consume one spawned generator, policy sampling a
    second, so baseline and steered runs with the same seed share identical
    thermal noise. ``record_stride`` > 0 stores every stride-th frame (plus
    the first and last); rewards are recorded as 0 for unsteered runs.
    """
    child_dyn, child_pol = np.random.SeedSequence(seed).spawn(2)
    rng_dyn = np.random.default_rng(child_dyn)
    rng_pol = np.random.default_rng(child_pol)
    state, obs = env.reset(rng_dyn)
    topo, cfg = env.topo, env.cfg
    length = cfg.episode_length

    frames: list[TrajectoryFrame] = []
    records: list[ActionRecord] | None = [] if record_actions else None
    trace = np.empty(length + 1)
    trace[0] = obs.vector[-3]

    def snapshot(st: SystemState, rg: float, pe: float, reward: float):
        frames.append(
            TrajectoryFrame(
                step=st.step,
                positions=st.positions.copy(),
                velocities=st.velocities.copy(),
                rg=rg,
                potential_energy=pe,
                reward_total=reward,
                angular_velocities=st.angular_velocities.copy() if keep_angular else None,
            )
        )

    if record_stride > 0:
        snapshot(env.state, trace[0], env.cached_potential_energy, 0.0)

    cum = 0.0
    zero = ActionVector.zeros(env.n_backbone)
    for t in range(length):
        if policy is None:
            act = zero
        else:
            raw, squashed, _ = sample_action_raw(policy, obs, rng_pol)
            act = ActionVector(squashed)
            if record_actions:
                records.append(ActionRecord(obs_vector=obs.vector.copy(), raw=raw))
        result = env.step(act, rng_dyn)
        obs = result.observation
        trace[t + 1] = result.info.rg
        cum += result.reward.total if policy is not None else 0.0
        if record_stride > 0 and (
            (t + 1) % record_stride == 0 or t + 1 == length
        ):
            snapshot(
                env.state,
                result.info.rg,
                result.info.potential_energy,
                result.reward.total if policy is not None else 0.0,
            )
    return EpisodeRollout(
        frames=frames,
        action_records=records,
        rg_trace=trace,
        cumulative_reward=cum,
    )


@dataclass
class PerturbationEpisode:
    index: int
    first_entry_step: int | None
    occupancy: OccupancyStats
    rg_trace: np.ndarray


@dataclass
class PerturbationReport:
    episodes: list[PerturbationEpisode]
    perturb_sigma: float
    band: tuple[float, float]

    @property
    def median_first_entry(self) -> float | None:
        vals = [
            float("inf") if e.first_entry_step is None else float(e.first_entry_step)
            for e in self.episodes
        ]
        med = float(np.median(vals))
        return None if math.isinf(med) else med

    def to_text(self) -> str:
        lo, hi = self.band
        lines = [
            f"perturbed-start recovery, band [{lo:g}, {hi:g}] A, "
            f"perturb sigma {self.perturb_sigma:g} A",
            f"{'episode':>8} {'first_entry':>12} {'occupancy':>10}",
        ]
        for e in self.episodes:
            fe = "none" if e.first_entry_step is None else str(e.first_entry_step)
            lines.append(f"{e.index:>8} {fe:>12} {e.occupancy.fraction:>10.4f}")
        med = self.median_first_entry
        lines.append(f"median first entry: {'none' if med is None else med:g}"
                     if med is not None else "median first entry: none")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = [("perturb_sigma", self.perturb_sigma),
                ("band_lo", self.band[0]), ("band_hi", self.band[1]),
                ("n_episodes", len(self.episodes))]
        med = self.median_first_entry
        rows.append(("median_first_entry", "none" if med is None else med))
        for e in self.episodes:
            fe = "none" if e.first_entry_step is None else e.first_entry_step
            rows.append((f"episode_{e.index}_first_entry", fe))
            rows.append((f"episode_{e.index}_occupancy", e.occupancy.fraction))
        return metrics_csv(rows)


def perturbation_experiment(
    topo: Topology,
    cfg: EnvConfig,
    ff: ForceFieldParams,
    dyn_params: LangevinParams,
    policy: PolicyParams | None,
    n_episodes: int = 10,
    perturb_sigma: float | None = None,
    seed: int = 0,
) -> PerturbationReport:
    """Roll out episodes from Gaussian-perturbed starting conformations.

    Each episode perturbs the canonical conformation with ``perturb_sigma``
    (default 5x the configured reset noise), runs a full episode under the
    given policy (or unsteered when None), and records the first step whose
    rg enters the target band plus the whole-trace occupancy.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    sigma = (
        perturb_sigma if perturb_sigma is not None else 5.0 * cfg.init_noise_sigma
    )
    perturbed_cfg = replace(cfg, init_noise_sigma=sigma)
    lo, hi = cfg.target_rg_min, cfg.target_rg_max
    seeds = np.random.SeedSequence(seed).spawn(n_episodes)

    episodes = []
    for i in range(n_episodes):
        env = PolymerEnv(topo, perturbed_cfg, ff, dyn_params)
        roll = rollout_episode(env, policy, seed=_seed_int(seeds[i]))
        inside = (roll.rg_trace >= lo) & (roll.rg_trace <= hi)
        first = int(np.argmax(inside)) if inside.any() else None
        episodes.append(
            PerturbationEpisode(
                index=i,
                first_entry_step=first,
                occupancy=OccupancyStats(inside.size, int(inside.sum())),
                rg_trace=roll.rg_trace,
            )
        )
    return PerturbationReport(episodes=episodes, perturb_sigma=sigma, band=(lo, hi))


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# Extended-XYZ trajectory I/O
# ---------------------------------------------------------------------------


def write_trajectory(frames, type_names: list[str]) -> str:
    """Serialize frames to extended-XYZ text (byte-deterministic)."""
    n = len(type_names)
    chunks = []
    for f in frames:
        if f.positions.shape[0] != n:
            raise P5Error("frame bead count does not match type list")
        head = (
            f"{n}\nstep={f.step} rg={_FMT.format(f.rg)} "
            f"pe={_FMT.format(f.potential_energy)} reward={_FMT.format(f.reward_total)}\n"
        )
        rows = []
        for b in range(n):
            x, y, z = f.positions[b]
            vx, vy, vz = f.velocities[b]
            rows.append(
                f"{type_names[b]} {_FMT.format(x)} {_FMT.format(y)} {_FMT.format(z)} "
                f"{_FMT.format(vx)} {_FMT.format(vy)} {_FMT.format(vz)}"
            )
        chunks.append(head + "\n".join(rows) + "\n")
    return "".join(chunks)


def read_trajectory(text: str) -> tuple[list[TrajectoryFrame], list[str]]:
    """Parse extended-XYZ text back into frames plus the bead type names."""
    lines = text.splitlines()
    frames: list[TrajectoryFrame] = []
    types: list[str] = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        try:
            n = int(lines[i])
        except ValueError:
            raise P5Error(f"trajectory line {i + 1}: expected bead count") from None
        if i + 1 + n >= len(lines) + 1 and n > 0:
            raise P5Error(f"trajectory line {i + 1}: truncated frame")
        meta = {}
        for tok in lines[i + 1].split():
            if "=" not in tok:
                raise P5Error(f"trajectory line {i + 2}: bad metadata {tok!r}")
            k, v = tok.split("=", 1)
            meta[k] = v
        for key in ("step", "rg", "pe", "reward"):
            if key not in meta:
                raise P5Error(f"trajectory line {i + 2}: missing {key}=")
        pos = np.empty((n, 3))
        vel = np.empty((n, 3))
        frame_types = []
        for b in range(n):
            tok = lines[i + 2 + b].split()
            if len(tok) != 7:
                raise P5Error(f"trajectory line {i + 3 + b}: expected 7 fields")
            if tok[0] not in BEAD_TYPES:
                raise TopologyError(
                    f"trajectory line {i + 3 + b}: unknown bead type {tok[0]!r}"
                )
            frame_types.append(tok[0])
            pos[b] = [float(t) for t in tok[1:4]]
            vel[b] = [float(t) for t in tok[4:7]]
        if not types:
            types = frame_types
        elif types != frame_types:
            raise P5Error(f"trajectory line {i + 3}: bead types changed mid-file")
        frames.append(
            TrajectoryFrame(
                step=int(meta["step"]),
                positions=pos,
                velocities=vel,
                rg=float(meta["rg"]),
                potential_energy=float(meta["pe"]),
                reward_total=float(meta["reward"]),
            )
        )
        i += 2 + n
    if not frames:
        raise P5Error("empty trajectory file")
    return frames, types


def frames_for_anomaly_scan(frames) -> list[tuple[int, np.ndarray, float]]:
    """Adapt trajectory frames to the anomaly detector's input tuples."""
    return [(f.step, f.positions, f.potential_energy) for f in frames]


def metrics_csv(rows) -> str:
    """metric,value rows with a header; floats in full repr precision."""
    out = ["metric,value"]
    for key, value in rows:
        if isinstance(value, float):
            out.append(f"{key},{value!r}")
        else:
            out.append(f"{key},{value}")
    return "\n".join(out) + "\n"
