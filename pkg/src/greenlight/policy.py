"""Actor-critic signal-control backbone trained with PPO.

The network is small enough to keep in plain numpy with hand-written
reverse-mode gradients, which makes the finite-difference gradient audit in
the test suite cheap and exact: a shared per-movement embedding (features
plus a movement-id one-hot -> embed) is mean-pooled over movements per
frame, the K pooled frames are concatenated through one hidden layer, and
separate linear heads produce phase logits and the value estimate.

The movement-id one-hot is appended before the shared embedding because the
seven sensor features alone do not identify which movement they describe:
without it the mean pool is permutation-invariant over movements and no
policy can tell apart two cross streets with the same turn-type/lane
profile, which caps achievable control quality well below the reference
controllers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .env import SignalEnv, step_reward  # noqa: F401  (re-exported reward)
from .sensing import NUM_FEATURES

CHECKPOINT_VERSION = 1

PARAM_KEYS = ("We", "be", "Wh", "bh", "Wa", "ba", "Wc", "bc")


class NumericFault(ArithmeticError):
    """Non-finite parameters or loss encountered."""


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 3e-4           # initial rate, linearly decayed over training
    epochs: int = 10
    batch: int = 128
    horizon: int = 512
    # Training-only normalization of rewards by the running std of the
    # discounted return.  The tanh encoder is shared by the actor and the
    # critic: when value targets are much larger than 1 the critic drives
    # the hidden layer into saturation chasing them, which kills gradient
    # flow for the actor as well.  Does not affect the reward definition
    # or evaluation.
    normalize_rewards: bool = True

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 <= self.lam <= 1):
            raise ValueError("gamma in (0,1], lam in [0,1]")
        if not 0 < self.clip < 1:
            raise ValueError("clip must be in (0,1)")


@dataclass
class PolicyParams:
    """Weights of the shared encoder plus actor and critic heads."""

    We: np.ndarray
    be: np.ndarray
    Wh: np.ndarray
    bh: np.ndarray
    Wa: np.ndarray
    ba: np.ndarray
    Wc: np.ndarray
    bc: np.ndarray
    k: int
    num_movements: int

    @property
    def num_phases(self):
        return self.Wa.shape[1]

    def arrays(self):
        return {key: getattr(self, key) for key in PARAM_KEYS}

    def copy(self):
        return PolicyParams(**{k: v.copy() for k, v in self.arrays().items()},
                            k=self.k, num_movements=self.num_movements)

    def check_finite(self):
        for key, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise NumericFault(f"non-finite values in parameter {key}")


def init_params(num_movements, num_phases, *, k=5, embed=32, hidden=64, seed=0):
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out, scale=1.0):
        return rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_in, fan_out))

    return PolicyParams(
        We=layer(NUM_FEATURES + num_movements, embed),
        be=np.zeros(embed),
        Wh=layer(k * embed, hidden),
        bh=np.zeros(hidden),
        Wa=layer(hidden, num_phases, scale=0.01),
        ba=np.zeros(num_phases),
        Wc=layer(hidden, 1),
        bc=np.zeros(1),
        k=k,
        num_movements=num_movements,
    )


def avail_mask(avail, num_phases):
    mask = np.zeros(num_phases, dtype=bool)
    for pid in avail:
        mask[pid - 1] = True
    return mask


# ---------------------------------------------------------------------------
# Forward / backward

def _augment(obs):
    """Append a movement-id one-hot to every movement row: (..., M, 7+M)."""
    b, k, m, _ = obs.shape
    ident = np.broadcast_to(np.eye(m), (b, k, m, m))
    return np.concatenate([obs, ident], axis=-1)


def _forward(params, obs):
    """obs: (B, K, M, 7).  Returns (logits, values, cache)."""
    aug = _augment(obs)
    e_pre = aug @ params.We + params.be
    e = np.tanh(e_pre)                       # (B, K, M, E)
    pooled = e.mean(axis=2)                  # (B, K, E)
    flat = pooled.reshape(obs.shape[0], -1)  # (B, K*E)
    h = np.tanh(flat @ params.Wh + params.bh)
    logits = h @ params.Wa + params.ba
    values = (h @ params.Wc + params.bc)[:, 0]
    return logits, values, (aug, e, flat, h)


def _backward(params, cache, dlogits, dvalues):
    """Accumulate parameter gradients for upstream dlogits/dvalues."""
    aug, e, flat, h = cache
    grads = {key: np.zeros_like(arr) for key, arr in params.arrays().items()}

    dh = dlogits @ params.Wa.T + dvalues[:, None] @ params.Wc.T
    grads["Wa"] = h.T @ dlogits
    grads["ba"] = dlogits.sum(axis=0)
    grads["Wc"] = h.T @ dvalues[:, None]
    grads["bc"] = np.array([dvalues.sum()])

    dh_pre = dh * (1.0 - h ** 2)
    grads["Wh"] = flat.T @ dh_pre
    grads["bh"] = dh_pre.sum(axis=0)

    dflat = dh_pre @ params.Wh.T
    m = aug.shape[2]
    dpooled = dflat.reshape(e.shape[0], e.shape[1], e.shape[3])
    de = np.repeat(dpooled[:, :, None, :], m, axis=2) / m
    de_pre = de * (1.0 - e ** 2)
    grads["We"] = np.einsum("bkmf,bkme->fe", aug, de_pre)
    grads["be"] = de_pre.sum(axis=(0, 1, 2))
    return grads


def masked_log_softmax(logits, masks):
    """Log-probabilities with zero mass outside the available set."""
    neg = np.where(masks, logits, -np.inf)
    mx = neg.max(axis=-1, keepdims=True)
    z = np.exp(neg - mx)
    logp = (neg - mx) - np.log(z.sum(axis=-1, keepdims=True))
    return logp


def forward(params, window_stacked, avail):
    """Single-state inference: masked logits plus the value estimate."""
    params.check_finite()
    obs = window_stacked[None, ...]
    logits, values, _ = _forward(params, obs)
    mask = avail_mask(avail, params.num_phases)
    masked = np.where(mask, logits[0], -np.inf)
    return masked, float(values[0])


def select_action(params, window_stacked, avail, mode="sample", rng=None):
    """Pick a phase from the masked distribution.

    ``greedy`` takes the argmax logit (lowest phase id wins ties); ``sample``
    draws from the masked softmax using the provided seeded generator.
    Returns (phase id, log-prob, value).
    """
    masked, value = forward(params, window_stacked, avail)
    logp = masked_log_softmax(masked[None, :], np.isfinite(masked)[None, :])[0]
    if mode == "greedy":
        idx = int(np.argmax(masked))
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode requires an rng")
        probs = np.exp(logp)
        idx = int(rng.choice(len(probs), p=probs))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return idx + 1, float(logp[idx]), value


# ---------------------------------------------------------------------------
# Rollout storage and GAE

@dataclass
class RolloutBuffer:
    obs: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logps: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    adv_norm: np.ndarray | None = None

    def add(self, obs, mask, action, logp, reward, value, done):
        self.obs.append(obs)
        self.masks.append(mask)
        self.actions.append(action)
        self.logps.append(logp)
        self.rewards.append(reward)
        self.values.append(value)
        self.dones.append(done)

    def __len__(self):
        return len(self.rewards)


def compute_gae(buffer, bootstrap_value, cfg):
    """Fill in GAE advantages and value targets.

    delta_t = r_t + gamma * V(s_{t+1}) - V(s_t) with episode-boundary masking,
    advantages are the exponentially weighted sums of the deltas, and the
    return target is advantage + V(s_t).  A standardized copy of the
    advantages is kept for the policy loss only.
    """
    t_len = len(buffer)
    if t_len == 0:
        raise ValueError("cannot compute GAE on an empty buffer")
    rewards = np.asarray(buffer.rewards, dtype=float)
    values = np.asarray(buffer.values, dtype=float)
    dones = np.asarray(buffer.dones, dtype=float)

    adv = np.zeros(t_len)
    carry = 0.0
    for t in range(t_len - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        next_value = values[t + 1] if t + 1 < t_len else bootstrap_value
        delta = rewards[t] + cfg.gamma * next_value * nonterminal - values[t]
        carry = delta + cfg.gamma * cfg.lam * nonterminal * carry
        adv[t] = carry
    buffer.advantages = adv
    buffer.returns = adv + values
    buffer.adv_norm = (adv - adv.mean()) / (adv.std() + 1e-8)
    return buffer


# ---------------------------------------------------------------------------
# PPO update

def ppo_loss_and_grads(params, batch, cfg, lr_unused=None):
    """Total PPO loss and analytic gradients on one minibatch.

    batch: dict with obs (B,K,M,7), masks (B,P) bool, actions (B,) 1-based,
    old_logp (B,), adv (B,), returns (B,).
    """
    obs = batch["obs"]
    masks = batch["masks"]
    actions = np.asarray(batch["actions"]) - 1
    old_logp = np.asarray(batch["old_logp"])
    adv = np.asarray(batch["adv"])
    rets = np.asarray(batch["returns"])
    b = obs.shape[0]

    logits, values, cache = _forward(params, obs)
    logp = masked_log_softmax(logits, masks)
    probs = np.where(masks, np.exp(logp), 0.0)
    safe_logp = np.where(masks, logp, 0.0)
    logp_a = logp[np.arange(b), actions]

    rho = np.exp(logp_a - old_logp)
    surr1 = rho * adv
    surr2 = np.clip(rho, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    policy_term = np.minimum(surr1, surr2)
    entropy = -np.sum(probs * safe_logp, axis=1)
    value_err = values - rets

    policy_loss = -policy_term.mean()
    value_loss = np.mean(value_err ** 2)
    entropy_mean = entropy.mean()
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy_mean
    if not np.isfinite(loss):
        raise NumericFault(f"non-finite loss: policy={policy_loss} value={value_loss}")

    # d loss / d logp_a: only the unclipped branch carries gradient.
    unclipped = surr1 <= surr2
    coeff = np.where(unclipped, rho * adv, 0.0) * (-1.0 / b)
    onehot = np.zeros_like(probs)
    onehot[np.arange(b), actions] = 1.0
    dlogits = coeff[:, None] * (onehot - probs)

    # Entropy bonus: dH/dz_i = -p_i (log p_i + H).
    dH = -probs * (safe_logp + entropy[:, None])
    dlogits += (-cfg.entropy_coef / b) * dH

    dvalues = cfg.value_coef * 2.0 * value_err / b
    grads = _backward(params, cache, dlogits, dvalues)
    report = {"loss": float(loss), "policy_loss": float(policy_loss),
              "value_loss": float(value_loss), "entropy": float(entropy_mean),
              "clip_bound_ok": bool(np.all(np.abs(policy_term)
                                           <= (1 + cfg.clip) * np.abs(adv) + 1e-12))}
    return loss, grads, report


class Adam:
    """Adaptive-moment descent over the parameter arrays."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        for key, arr in params.arrays().items():
            g = grads[key]
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * g ** 2
            mhat = self.m[key] / (1 - self.beta1 ** self.t)
            vhat = self.v[key] / (1 - self.beta2 ** self.t)
            arr -= lr * mhat / (np.sqrt(vhat) + self.eps)


def ppo_update(params, buffer, cfg, optimizer, lr, rng):
    """Run cfg.epochs passes of clipped-surrogate minibatch descent in place.

    Returns a per-epoch loss report (policy/value/entropy means).
    """
    if buffer.advantages is None:
        raise ValueError("buffer must be finalized with compute_gae first")
    n = len(buffer)
    obs = np.stack(buffer.obs)
    masks = np.stack(buffer.masks)
    actions = np.asarray(buffer.actions)
    old_logp = np.asarray(buffer.logps)
    adv = buffer.adv_norm
    rets = buffer.returns

    epoch_rows = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        stats = []
        for start in range(0, n, cfg.batch):
            idx = order[start:start + cfg.batch]
            batch = {"obs": obs[idx], "masks": masks[idx], "actions": actions[idx],
                     "old_logp": old_logp[idx], "adv": adv[idx], "returns": rets[idx]}
            _, grads, report = ppo_loss_and_grads(params, batch, cfg)
            optimizer.step(params, grads, lr)
            stats.append(report)
        epoch_rows.append({k: float(np.mean([s[k] for s in stats]))
                           for k in ("policy_loss", "value_loss", "entropy")})
    params.check_finite()
    return epoch_rows


# ---------------------------------------------------------------------------
# Training loop

class ReturnNormalizer:
    """Running RMS of the discounted return, used to scale rewards during
    training so value targets stay near unit magnitude.  The uncentered
    second moment (not the variance) is the right divisor here: the waiting
    penalty is persistently negative, so the return's mean dwarfs its
    fluctuations and dividing by the std alone would still leave targets
    far outside the tanh encoder's comfortable output range."""

    def __init__(self, gamma, eps=1e-8):
        self.gamma = gamma
        self.eps = eps
        self.ret = 0.0
        self.count = 0
        self.sumsq = 0.0

    def scale(self, reward, done):
        self.ret = self.gamma * self.ret + reward
        self.count += 1
        self.sumsq += self.ret ** 2
        rms = np.sqrt(self.sumsq / self.count)
        if done:
            self.ret = 0.0
        # clip to keep warm-up steps (tiny rms estimate) from producing
        # outsized targets before the statistic settles
        return float(np.clip(reward / (rms + self.eps), -10.0, 10.0))


def train(env_factory, cfg, total_steps, *, seed=0, progress=None):
    """Alternate horizon-length rollouts with PPO updates.

    ``env_factory(seed)`` must build a fresh episode environment.  Fully
    deterministic for a fixed (factory, cfg, total_steps, seed).  Returns the
    trained parameters and a per-update training-curve list.
    """
    env = env_factory(seed)
    params = init_params(env.num_movements, env.num_phases, seed=seed)
    if total_steps <= 0:
        return params, []
    optimizer = Adam(params)
    sample_rng = np.random.default_rng(seed + 1)
    shuffle_rng = np.random.default_rng(seed + 2)

    num_updates = max(1, total_steps // cfg.horizon)
    episode = 0
    normalizer = ReturnNormalizer(cfg.gamma) if cfg.normalize_rewards else None
    obs, avail = env.observe()
    curve = []
    for update in range(num_updates):
        buffer = RolloutBuffer()
        for _ in range(cfg.horizon):
            mask = avail_mask(avail, params.num_phases)
            action, logp, value = select_action(params, obs, avail, "sample", sample_rng)
            next_obs, next_avail, r, done = env.step(action)
            r_train = normalizer.scale(r, done) if normalizer else r
            buffer.add(obs, mask, action, logp, r_train, value, done)
            if done:
                episode += 1
                next_obs, next_avail = env.reset(seed + 1000 + episode)
            obs, avail = next_obs, next_avail
        if buffer.dones[-1]:
            bootstrap = 0.0
        else:
            _, bootstrap = forward(params, obs, avail)
        compute_gae(buffer, bootstrap, cfg)

        lr = cfg.lr * max(0.0, 1.0 - update / num_updates)
        epoch_rows = ppo_update(params, buffer, cfg, optimizer, lr, shuffle_rng)
        curve.append({
            "update_idx": update,
            "mean_reward": float(np.mean(buffer.rewards)),
            "policy_loss": epoch_rows[-1]["policy_loss"],
            "value_loss": epoch_rows[-1]["value_loss"],
            "entropy": epoch_rows[-1]["entropy"],
            "lr": lr,
        })
        if progress is not None:
            progress(curve[-1])
    return params, curve


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(path, params, cfg, extra=None):
    meta = {"version": CHECKPOINT_VERSION, "k": params.k,
            "num_movements": params.num_movements, "cfg": asdict(cfg),
            "extra": extra or {}}
    np.savez(path, meta=json.dumps(meta, sort_keys=True), **params.arrays())


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        arrays = {key: data[key] for key in PARAM_KEYS}
    params = PolicyParams(**arrays, k=meta["k"], num_movements=meta["num_movements"])
    params.check_finite()
    return params, PPOConfig(**meta["cfg"]), meta["extra"]
