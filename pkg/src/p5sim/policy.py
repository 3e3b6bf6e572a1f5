"""Gaussian MLP steering policy, PPO training, and checkpoint I/O.

The network is a tanh MLP torso with a linear action-mean head, a linear
value head, and state-independent per-dimension log standard deviations.
Sampling draws a raw Gaussian vector and squashes it to the action bounds:
tanh for direction and rotation dimensions, logistic sigmoid for the force
magnitude dimensions; log probabilities carry the exact change-of-variables
corrections.

Training is clipped-surrogate PPO over full-episode rollouts with GAE, plain
SGD with global gradient-norm clipping, and batch-normalized advantages.
All gradients are hand-derived backpropagation; the test suite checks every
parameter against central finite differences.

Observations are whitened by running mean/std statistics (clamped to
[-10, 10]) that are updated between updates, frozen within one, and stored
in the checkpoint so evaluation reproduces training behavior.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .environment import ActionVector, Observation, PolymerEnv
from .errors import CheckpointError, P5Error

__all__ = [
    "PolicyParams",
    "PpoHyper",
    "RolloutBuffer",
    "init_policy_params",
    "forward",
    "sample_action",
    "sample_action_raw",
    "action_log_density",
    "compute_gae",
    "ppo_update",
    "save_checkpoint",
    "load_checkpoint",
    "train_policy",
    "TrainResult",
    "default_sigmoid_mask",
]

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_NORM_CLIP = 10.0
_NORM_EPS = 1e-8


@dataclass
class PolicyParams:
    weights: list[np.ndarray]      # torso, weights[i]: (d_i, d_{i+1})
    biases: list[np.ndarray]
    w_policy: np.ndarray           # (hidden, action_dim)
    b_policy: np.ndarray
    w_value: np.ndarray            # (hidden, 1)
    b_value: np.ndarray
    log_std: np.ndarray            # (action_dim,)
    sigmoid_mask: np.ndarray       # (action_dim,) bool; True -> sigmoid squash
    norm_count: float = 0.0
    norm_mean: np.ndarray = None
    norm_var: np.ndarray = None

    def __post_init__(self):
        if self.norm_mean is None:
            self.norm_mean = np.zeros(self.obs_dim)
        if self.norm_var is None:
            self.norm_var = np.ones(self.obs_dim)

    @property
    def obs_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def action_dim(self) -> int:
        return self.w_policy.shape[1]

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def trainable(self) -> list[np.ndarray]:
        return (
            list(self.weights)
            + list(self.biases)
            + [self.w_policy, self.b_policy, self.w_value, self.b_value, self.log_std]
        )

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            w_policy=self.w_policy.copy(),
            b_policy=self.b_policy.copy(),
            w_value=self.w_value.copy(),
            b_value=self.b_value.copy(),
            log_std=self.log_std.copy(),
            sigmoid_mask=self.sigmoid_mask.copy(),
            norm_count=self.norm_count,
            norm_mean=self.norm_mean.copy(),
            norm_var=self.norm_var.copy(),
        )


@dataclass(frozen=True)
class PpoHyper:
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 256
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must be in [0, 1]")


def default_sigmoid_mask(action_dim: int) -> np.ndarray:
    """Alpha (force magnitude) dims of the 5-per-bead action layout."""
    if action_dim % 5:
        raise ValueError("steering actions come in blocks of 5 per backbone bead")
    return np.arange(action_dim) % 5 == 3


def init_policy_params(
    obs_dim: int,
    action_dim: int,
    hidden: tuple[int, ...] = (128, 128),
    rng: np.random.Generator | None = None,
    log_std_init: float = -0.5,
    sigmoid_mask: np.ndarray | None = None,
) -> PolicyParams:
    """Scaled-normal initialization; the policy head starts near zero so the
    initial behavior is a small random perturbation of unsteered dynamics."""
    rng = rng if rng is not None else np.random.default_rng(0)
    dims = [obs_dim] + list(hidden)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((d_in, d_out)) / math.sqrt(d_in))
        biases.append(np.zeros(d_out))
    h = dims[-1]
    mask = (
        np.asarray(sigmoid_mask, dtype=bool)
        if sigmoid_mask is not None
        else default_sigmoid_mask(action_dim)
    )
    if mask.shape != (action_dim,):
        raise ValueError("sigmoid_mask length must equal action_dim")
    return PolicyParams(
        weights=weights,
        biases=biases,
        w_policy=rng.standard_normal((h, action_dim)) * (0.01 / math.sqrt(h)),
        b_policy=np.zeros(action_dim),
        w_value=rng.standard_normal((h, 1)) / math.sqrt(h),
        b_value=np.zeros(1),
        log_std=np.full(action_dim, float(log_std_init)),
        sigmoid_mask=mask,
    )


# ---------------------------------------------------------------------------
# Forward pass and sampling
# ---------------------------------------------------------------------------


def _as_matrix(obs) -> tuple[np.ndarray, bool]:
    vec = obs.vector if isinstance(obs, Observation) else np.asarray(obs, dtype=float)
    if vec.ndim == 1:
        return vec[None, :], True
    return vec, False


def normalize_obs(params: PolicyParams, x: np.ndarray) -> np.ndarray:
    """Whiten with the stored running statistics (identity until trained)."""
    if params.norm_count < 1.0:
        return x
    z = (x - params.norm_mean) / np.sqrt(params.norm_var + _NORM_EPS)
    return np.clip(z, -_NORM_CLIP, _NORM_CLIP)


def _forward_cache(params: PolicyParams, x: np.ndarray):
    acts = [x]
    h = x
    for w, b in zip(params.weights, params.biases):
        h = np.tanh(h @ w + b)
        acts.append(h)
    mean = h @ params.w_policy + params.b_policy
    value = (h @ params.w_value + params.b_value)[:, 0]
    return mean, value, acts


def forward(params: PolicyParams, obs) -> tuple[np.ndarray, np.ndarray, float]:
    """Deterministic network outputs: (action means, log stds, value)."""
    x, single = _as_matrix(obs)
    if x.shape[1] != params.obs_dim:
        raise P5Error(f"observation dim {x.shape[1]} != network input {params.obs_dim}")
    mean, value, _ = _forward_cache(params, normalize_obs(params, x))
    if single:
        return mean[0], params.log_std.copy(), float(value[0])
    return mean, params.log_std.copy(), value


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _squash(raw: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.tanh(raw)
    if mask.any():
        out = np.where(mask, 1.0 / (1.0 + np.exp(-raw)), out)
    return out


def _squash_log_jacobian(raw: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """log |d squashed / d raw| per dimension, numerically stable."""
    tanh_term = 2.0 * (math.log(2.0) - raw - _softplus(-2.0 * raw))
    sig_term = -_softplus(raw) - _softplus(-raw)
    return np.where(mask, sig_term, tanh_term)


def _gauss_log_pdf(raw: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (raw - mean) / np.exp(log_std)
    return -0.5 * z * z - _HALF_LOG_2PI - log_std


def sample_action_raw(
    params: PolicyParams, obs, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, float]:
    """Draw (raw gaussian, squashed action values, log probability)."""
    mean, log_std, _ = forward(params, obs)
    raw = mean + np.exp(log_std) * rng.standard_normal(params.action_dim)
    log_prob = float(
        np.sum(_gauss_log_pdf(raw, mean, log_std))
        - np.sum(_squash_log_jacobian(raw, params.sigmoid_mask))
    )
    return raw, _squash(raw, params.sigmoid_mask), log_prob


def sample_action(
    params: PolicyParams, obs, rng: np.random.Generator
) -> tuple[ActionVector, float]:
    raw, squashed, log_prob = sample_action_raw(params, obs, rng)
    return ActionVector(squashed), log_prob


def mean_action(params: PolicyParams, obs) -> ActionVector:
    """Squashed mean of the action distribution (no sampling)."""
    mean, _, _ = forward(params, obs)
    return ActionVector(_squash(mean, params.sigmoid_mask))


def action_log_density(params: PolicyParams, obs, raw: np.ndarray) -> float:
    """Log probability the current policy assigns to a stored raw action."""
    mean, log_std, _ = forward(params, obs)
    return float(
        np.sum(_gauss_log_pdf(raw, mean, log_std))
        - np.sum(_squash_log_jacobian(raw, params.sigmoid_mask))
    )


# ---------------------------------------------------------------------------
# Generalized advantage estimation
# ---------------------------------------------------------------------------


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    lam: float,
    bootstrap_value: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Exponentially weighted advantages and returns for one trajectory."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if not rewards.shape == values.shape == dones.shape:
        raise ValueError("rewards, values, dones must have identical shapes")
    n = rewards.size
    adv = np.zeros(n)
    last = 0.0
    next_value = bootstrap_value
    for t in range(n - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        last = delta + gamma * lam * not_done * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


# ---------------------------------------------------------------------------
# Rollout storage
# ---------------------------------------------------------------------------


@dataclass
class RolloutBuffer:
    """Aligned per-step records for each environment slot."""

    n_envs: int
    obs: list = field(default_factory=list)
    raw: list = field(default_factory=list)
    squashed: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("obs", "raw", "squashed", "log_probs", "rewards", "values", "dones"):
            setattr(self, name, [[] for _ in range(self.n_envs)])

    def add(self, env, obs_vec, raw, squashed, log_prob, reward, value, done):
        self.obs[env].append(obs_vec)
        self.raw[env].append(raw)
        self.squashed[env].append(squashed)
        self.log_probs[env].append(log_prob)
        self.rewards[env].append(reward)
        self.values[env].append(value)
        self.dones[env].append(done)

    def assemble(self, gamma: float, lam: float, bootstrap_values=None) -> dict:
        """Concatenate env streams and attach GAE advantages/returns."""
        boots = bootstrap_values if bootstrap_values is not None else [0.0] * self.n_envs
        obs, raw, logp, adv, ret = [], [], [], [], []
        for e in range(self.n_envs):
            if not self.obs[e]:
                continue
            a, r = compute_gae(
                np.array(self.rewards[e]),
                np.array(self.values[e]),
                np.array(self.dones[e], dtype=float),
                gamma,
                lam,
                boots[e],
            )
            obs.append(np.array(self.obs[e]))
            raw.append(np.array(self.raw[e]))
            logp.append(np.array(self.log_probs[e]))
            adv.append(a)
            ret.append(r)
        if not obs:
            raise P5Error("empty rollout buffer")
        return {
            "obs": np.concatenate(obs),
            "raw": np.concatenate(raw),
            "log_probs": np.concatenate(logp),
            "advantages": np.concatenate(adv),
            "returns": np.concatenate(ret),
        }


# ---------------------------------------------------------------------------
# PPO update with manual backpropagation
# ---------------------------------------------------------------------------


def _loss_and_grads(params: PolicyParams, obs, raw, logp_old, adv, ret, hyper: PpoHyper):
    """Total PPO loss and exact gradients w.r.t. every trainable array."""
    B = obs.shape[0]
    x = normalize_obs(params, obs)
    mean, value, acts = _forward_cache(params, x)
    log_std = params.log_std
    std2 = np.exp(2.0 * log_std)

    jac = np.sum(_squash_log_jacobian(raw, params.sigmoid_mask), axis=1)
    logp_new = np.sum(_gauss_log_pdf(raw, mean, log_std), axis=1) - jac
    ratio = np.exp(logp_new - logp_old)

    lo, hi = 1.0 - hyper.clip_epsilon, 1.0 + hyper.clip_epsilon
    unclipped = ratio * adv
    clipped = np.clip(ratio, lo, hi) * adv
    policy_loss = -float(np.mean(np.minimum(unclipped, clipped)))
    pass_through = unclipped <= clipped  # gradient only via the active min branch

    v_err = value - ret
    value_loss = float(np.mean(v_err**2))
    entropy = float(np.sum(log_std + 0.5 * (1.0 + math.log(2.0 * math.pi))))
    total = policy_loss + hyper.value_coef * value_loss - hyper.entropy_coef * entropy

    # d total / d logp_new, shape (B,)
    dlogp = np.where(pass_through, -(adv * ratio) / B, 0.0)
    diff = raw - mean
    dmean = dlogp[:, None] * (diff / std2)
    dlog_std = np.sum(dlogp[:, None] * (diff**2 / std2 - 1.0), axis=0)
    dlog_std -= hyper.entropy_coef  # d(-c_e * entropy)/d log_std = -c_e per dim
    dvalue = hyper.value_coef * 2.0 * v_err / B

    hL = acts[-1]
    g_wp = hL.T @ dmean
    g_bp = dmean.sum(axis=0)
    g_wv = hL.T @ dvalue[:, None]
    g_bv = np.array([dvalue.sum()])

    dh = dmean @ params.w_policy.T + dvalue[:, None] @ params.w_value.T
    g_w, g_b = [None] * len(params.weights), [None] * len(params.weights)
    for layer in range(len(params.weights) - 1, -1, -1):
        dz = dh * (1.0 - acts[layer + 1] ** 2)
        g_w[layer] = acts[layer].T @ dz
        g_b[layer] = dz.sum(axis=0)
        if layer:
            dh = dz @ params.weights[layer].T
    grads = g_w + g_b + [g_wp, g_bp, g_wv, g_bv, dlog_std]

    stats = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > hyper.clip_epsilon)),
        "approx_kl": float(np.mean(logp_old - logp_new)),
    }
    return total, grads, stats


def _clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + _NORM_EPS)


def ppo_update(
    params: PolicyParams,
    batch: dict,
    hyper: PpoHyper,
    rng: np.random.Generator,
) -> tuple[PolicyParams, dict]:
    """Clipped-surrogate update over shuffled minibatches; plain SGD.

    Advantages are normalized once over the whole batch. A non-finite loss
    aborts the update and returns the original parameters untouched.
    """
    obs = np.asarray(batch["obs"], dtype=float)
    if obs.shape[0] == 0:
        raise P5Error("ppo_update on an empty batch")
    raw = np.asarray(batch["raw"], dtype=float)
    logp_old = np.asarray(batch["log_probs"], dtype=float)
    adv = normalize_advantages(np.asarray(batch["advantages"], dtype=float))
    ret = np.asarray(batch["returns"], dtype=float)

    new = params.copy()
    n = obs.shape[0]
    mb = min(hyper.minibatch_size, n)
    agg: dict[str, float] = {}
    count = 0
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            sel = order[start: start + mb]
            loss, grads, stats = _loss_and_grads(
                new, obs[sel], raw[sel], logp_old[sel], adv[sel], ret[sel], hyper
            )
            if not math.isfinite(loss):
                return params, {"aborted": 1.0, "loss": loss}
            _clip_global_norm(grads, hyper.max_grad_norm)
            for arr, g in zip(new.trainable(), grads):
                arr -= hyper.learning_rate * g
            for k, v in stats.items():
                agg[k] = agg.get(k, 0.0) + v
            count += 1
    out = {k: v / count for k, v in agg.items()}
    out["aborted"] = 0.0
    return new, out


def update_norm_stats(params: PolicyParams, obs_batch: np.ndarray) -> PolicyParams:
    """Fold a batch of raw observations into the running mean/var (Welford)."""
    x = np.asarray(obs_batch, dtype=float)
    b = x.shape[0]
    if b == 0:
        return params
    new = params.copy()
    b_mean = x.mean(axis=0)
    b_var = x.var(axis=0)
    if params.norm_count < 1.0:
        new.norm_count = float(b)
        new.norm_mean = b_mean
        new.norm_var = b_var
        return new
    n0 = params.norm_count
    total = n0 + b
    delta = b_mean - params.norm_mean
    new.norm_mean = params.norm_mean + delta * (b / total)
    m2 = params.norm_var * n0 + b_var * b + delta**2 * (n0 * b / total)
    new.norm_var = m2 / total
    new.norm_count = float(total)
    return new


# ---------------------------------------------------------------------------
# Checkpoint format (.p5c)
# ---------------------------------------------------------------------------

_MAGIC = "P5CKPT"
_VERSION = 1


def _param_arrays(params: PolicyParams) -> list[np.ndarray]:
    return params.trainable() + [
        np.array([params.norm_count]),
        params.norm_mean,
        params.norm_var,
    ]


def save_checkpoint(params: PolicyParams, path: str) -> None:
    """ASCII header (magic/version, layer dims, action dims, statistics
    lengths) followed by all arrays as little-endian f64 and a trailing
    uint64 count checksum."""
    dims = " ".join(str(d) for d in params.layer_dims)
    mask = "".join("1" if m else "0" for m in params.sigmoid_mask)
    header = (
        f"{_MAGIC} {_VERSION}\n"
        f"dims {dims}\n"
        f"action {params.action_dim} {mask}\n"
        f"norm 1 {params.norm_mean.size} {params.norm_var.size}\n"
    )
    arrays = _param_arrays(params)
    total = sum(a.size for a in arrays)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header.encode("ascii"))
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", total))
    os.replace(tmp, path)


def load_checkpoint(path: str) -> PolicyParams:
    with open(path, "rb") as fh:
        blob = fh.read()

    def take_line(buf: bytes) -> tuple[str, bytes]:
        nl = buf.find(b"\n")
        if nl < 0:
            raise CheckpointError("truncated header")
        return buf[:nl].decode("ascii", errors="replace"), buf[nl + 1:]

    line, rest = take_line(blob)
    parts = line.split()
    if len(parts) != 2 or parts[0] != _MAGIC:
        raise CheckpointError(f"bad magic: {line!r}")
    if parts[1] != str(_VERSION):
        raise CheckpointError(f"unsupported checkpoint version {parts[1]}")
    line, rest = take_line(rest)
    tok = line.split()
    if tok[0] != "dims" or len(tok) < 3:
        raise CheckpointError("malformed dims header")
    dims = [int(t) for t in tok[1:]]
    line, rest = take_line(rest)
    tok = line.split()
    if tok[0] != "action" or len(tok) != 3:
        raise CheckpointError("malformed action header")
    action_dim = int(tok[1])
    if len(tok[2]) != action_dim or set(tok[2]) - {"0", "1"}:
        raise CheckpointError("malformed squash mask")
    mask = np.array([c == "1" for c in tok[2]])
    line, rest = take_line(rest)
    tok = line.split()
    if tok[0] != "norm" or len(tok) != 4:
        raise CheckpointError("malformed norm header")
    norm_sizes = [int(t) for t in tok[1:]]
    if norm_sizes[1] != dims[0] or norm_sizes[2] != dims[0]:
        raise CheckpointError("normalization lengths inconsistent with input dim")

    shapes = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        shapes.append((d_in, d_out))
    for _, d_out in zip(dims[:-1], dims[1:]):
        shapes.append((d_out,))
    h = dims[-1]
    shapes += [(h, action_dim), (action_dim,), (h, 1), (1,), (action_dim,)]
    shapes += [(1,), (dims[0],), (dims[0],)]
    total = sum(int(np.prod(s)) for s in shapes)

    expected = total * 8 + 8
    if len(rest) < expected:
        raise CheckpointError(
            f"truncated payload: need {expected} bytes after header, have {len(rest)}"
        )
    if len(rest) > expected:
        raise CheckpointError("payload longer than dimension header implies")
    (checksum,) = struct.unpack("<Q", rest[-8:])
    if checksum != total:
        raise CheckpointError(
            f"length checksum {checksum} != declared array count {total}"
        )
    flat = np.frombuffer(rest[:-8], dtype="<f8")

    arrays = []
    off = 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(flat[off: off + size].reshape(s).astype(float))
        off += size
    n_layers = len(dims) - 1
    weights = arrays[:n_layers]
    biases = arrays[n_layers: 2 * n_layers]
    w_policy, b_policy, w_value, b_value, log_std = arrays[2 * n_layers: 2 * n_layers + 5]
    norm_count, norm_mean, norm_var = arrays[2 * n_layers + 5:]
    return PolicyParams(
        weights=weights,
        biases=biases,
        w_policy=w_policy,
        b_policy=b_policy,
        w_value=w_value,
        b_value=b_value,
        log_std=log_std,
        sigmoid_mask=mask,
        norm_count=float(norm_count[0]),
        norm_mean=norm_mean,
        norm_var=norm_var,
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: PolicyParams
    curve: list[tuple[int, float]]  # (episode number, cumulative reward)


def train_policy(
    envs: list[PolymerEnv],
    hyper: PpoHyper,
    total_episodes: int,
    seed: int,
    hidden: tuple[int, ...] = (128, 128),
    log_std_init: float = -0.5,
    progress=None,
) -> TrainResult:
    """PPO over full-episode rollouts collected round-robin from ``envs``.

    Each update consumes one episode per environment slot. Observation
    statistics update between rounds, so sampling and re-evaluation inside
    one update always use the same whitening. Deterministic for fixed seeds:
    every env slot gets its own spawned generator pair (dynamics, sampling),
    plus one for initialization and one for minibatch shuffling.
    """
    if not envs:
        raise P5Error("train_policy needs at least one environment")
    topo, cfg = envs[0].topo, envs[0].cfg
    obs_dim = None
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(2 + 2 * len(envs))
    rng_init = np.random.default_rng(children[0])
    rng_shuffle = np.random.default_rng(children[1])
    env_rngs = [
        (np.random.default_rng(children[2 + 2 * i]),
         np.random.default_rng(children[3 + 2 * i]))
        for i in range(len(envs))
    ]

    from .environment import action_length, observation_length

    obs_dim = observation_length(topo, cfg)
    act_dim = action_length(topo)
    params = init_policy_params(
        obs_dim, act_dim, hidden=hidden, rng=rng_init, log_std_init=log_std_init
    )

    curve: list[tuple[int, float]] = []
    episodes_done = 0
    while episodes_done < total_episodes:
        buffer = RolloutBuffer(n_envs=len(envs))
        round_rewards = []
        for e, env in enumerate(envs):
            rng_dyn, rng_pol = env_rngs[e]
            _, obs = env.reset(rng_dyn)
            cum = 0.0
            done = False
            while not done:
                raw, squashed, logp = sample_action_raw(params, obs, rng_pol)
                _, _, value = forward(params, obs)
                result = env.step(ActionVector(squashed), rng_dyn)
                buffer.add(
                    e, obs.vector, raw, squashed, logp,
                    result.reward.total, value, result.done,
                )
                cum += result.reward.total
                obs = result.observation
                done = result.done
            round_rewards.append(cum)

        batch = buffer.assemble(hyper.gamma, hyper.gae_lambda)
        params, stats = ppo_update(params, batch, hyper, rng_shuffle)
        params = update_norm_stats(params, batch["obs"])

        for cum in round_rewards:
            episodes_done += 1
            curve.append((episodes_done, cum))
            if episodes_done >= total_episodes:
                break
        if progress is not None:
            progress(episodes_done, curve, stats)
    return TrainResult(params=params, curve=curve)
