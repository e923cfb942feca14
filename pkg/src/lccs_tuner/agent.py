"""TD3 (and DDPG as its degenerate case) tuning the PI gains of the regulator.

The environment is the closed-loop converter simulation.  Each agent step
is one control period: the observation is the scaled pair
``(integral of error, error)``, the action is a point of ``[-1, 1]^2`` mapped
affinely onto the gain box, and the reward is ``-(vref - vout)^2`` on the
true (noise-free) output voltage after the period.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .controller import PIController
from .converter import ConverterParams
from .neural import (AdamState, Mlp, adam_step, backward, forward, load_checkpoint, save_checkpoint,
                     write_npz)
from .simulator import (DEFAULT_DT, F_NOMINAL, ClosedLoop, NoiseSpec, NumericalBlowup, Scenario,
                        Schedule, fig9_scenario, settled_state)

log = logging.getLogger(__name__)

OBS_DIM = 2
ACT_DIM = 2
FAILED_EPISODE_REWARD = -1e9
INITIAL_GAINS = (5.28, 0.05)
PUBLISHED_GAINS = (0.0553, 12.9637)


class InsufficientData(RuntimeError):
    pass


class TrainingAborted(RuntimeError):
    pass


# -- observation, action, reward ---------------------------------------------

@dataclass(frozen=True)
class ActionBounds:
    kp_range: tuple = (0.0, 10.0)
    ki_range: tuple = (0.0, 50.0)

    def __post_init__(self):
        for lo, hi in (self.kp_range, self.ki_range):
            if not lo < hi:
                raise ValueError(f"action range needs lo < hi, got ({lo}, {hi})")

    @property
    def lo(self):
        return np.array([self.kp_range[0], self.ki_range[0]], dtype=float)

    @property
    def hi(self):
        return np.array([self.kp_range[1], self.ki_range[1]], dtype=float)


OBS_SCALE = (1.0 / 0.2, 1.0 / 20.0)


def reward(vref: float, vout: float) -> float:
    return -((vref - vout) ** 2)


def observe(ctrl: PIController, e: float, scales=OBS_SCALE) -> np.ndarray:
    return np.array([ctrl.integ * scales[0], e * scales[1]], dtype=float)


def map_action(a, bounds: ActionBounds = ActionBounds()):
    """Affine map of ``a`` in ``[-1, 1]^2`` (clipped) onto ``(Kp, Ki)``."""
    a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
    g = bounds.lo + (a + 1.0) * 0.5 * (bounds.hi - bounds.lo)
    return float(g[0]), float(g[1])


def unmap_action(kp: float, ki: float, bounds: ActionBounds = ActionBounds()) -> np.ndarray:
    g = np.array([kp, ki], dtype=float)
    return 2.0 * (g - bounds.lo) / (bounds.hi - bounds.lo) - 1.0


# -- replay buffer ---------------------------------------------------------------

class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored column-wise."""

    def __init__(self, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, OBS_DIM))
        self.act = np.zeros((self.capacity, ACT_DIM))
        self.rew = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, OBS_DIM))
        self.done = np.zeros(self.capacity)
        self.count = 0
        self.ptr = 0

    def __len__(self):
        return self.count

    def push(self, obs, act, rew, next_obs, done) -> None:
        vals = (np.asarray(obs, float), np.asarray(act, float), float(rew),
                np.asarray(next_obs, float), float(done))
        if not all(np.all(np.isfinite(v)) for v in vals):
            raise ValueError("transition fields must be finite")
        i = self.ptr
        self.obs[i], self.act[i], self.rew[i], self.next_obs[i], self.done[i] = vals
        self.ptr = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def slot_order(self):
        """Storage indices from oldest to newest."""
        start = self.ptr if self.count == self.capacity else 0
        return (start + np.arange(self.count)) % self.capacity

    def sample(self, M: int, rng) -> dict:
        if self.count < M:
            raise InsufficientData(f"buffer holds {self.count} transitions, batch needs {M}")
        idx = rng.choice(self.count, size=M, replace=False)
        return {"obs": self.obs[idx], "act": self.act[idx], "rew": self.rew[idx],
                "next_obs": self.next_obs[idx], "done": self.done[idx], "idx": idx}

    def stats(self) -> dict:
        n = self.count
        return {"capacity": self.capacity, "count": n, "ptr": self.ptr,
                "reward_mean": float(self.rew[:n].mean()) if n else 0.0,
                "reward_min": float(self.rew[:n].min()) if n else 0.0}


def replay_push(buf: ReplayBuffer, obs, act, rew, next_obs, done) -> None:
    buf.push(obs, act, rew, next_obs, done)


def replay_sample(buf: ReplayBuffer, M: int, rng) -> dict:
    return buf.sample(M, rng)


# -- configuration and learner state ------------------------------------------

MODES = ("td3", "ddpg")
ACTION_MODES = ("per-step", "per-episode")
STARTS = ("rest", "settled")


@dataclass
class Td3Config:
    gamma: float = 0.99
    tau: float = 5e-3
    policy_delay: int = 2
    target_noise_std: float = math.sqrt(0.1)
    target_noise_clip: float = 0.5
    explore_noise_std: float = 0.1
    batch_size: int = 128
    episodes: int = 500
    warmup_steps: int = 1000
    seed: int = 0
    mode: str = "td3"
    horizon: float = 20e-3
    action_mode: str = "per-step"
    reward_scale: float = 1e-2
    buffer_capacity: int = 1_000_000
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    actor_hidden: tuple = (64, 64)
    critic_hidden: tuple = (64, 64, 64)
    vref_range: tuple = (190.0, 210.0)
    noise: bool = True
    obs_scale: tuple = OBS_SCALE
    start: str = "rest"
    abort_window: int = 50

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.action_mode not in ACTION_MODES:
            raise ValueError(f"action_mode must be one of {ACTION_MODES}")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.policy_delay < 1 or self.batch_size < 1:
            raise ValueError("policy_delay and batch_size must be >= 1")
        if self.episodes < 0 or self.warmup_steps < 0 or self.horizon < 0:
            raise ValueError("episodes, warmup_steps and horizon must be >= 0")
        if self.start not in STARTS:
            raise ValueError(f"start must be one of {STARTS}, got {self.start!r}")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        self.actor_hidden = tuple(self.actor_hidden)
        self.critic_hidden = tuple(self.critic_hidden)
        self.vref_range = tuple(self.vref_range)
        self.obs_scale = tuple(self.obs_scale)

    @property
    def effective_delay(self) -> int:
        return 1 if self.mode == "ddpg" else self.policy_delay


def _spawn_rngs(seed: int):
    names = ("init", "env", "explore", "replay", "target")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


@dataclass
class Td3Bundle:
    actor: Mlp
    critic1: Mlp
    critic2: Mlp | None
    target_actor: Mlp
    target_critic1: Mlp
    target_critic2: Mlp | None
    opt_actor: AdamState
    opt_critic1: AdamState
    opt_critic2: AdamState | None
    buffer: ReplayBuffer
    config: Td3Config
    rngs: dict
    reward_history: list = field(default_factory=list)
    critic_updates: int = 0
    actor_updates: int = 0
    env_steps: int = 0

    @property
    def twin(self) -> bool:
        return self.critic2 is not None


def make_bundle(cfg: Td3Config, buffer_capacity: int | None = None) -> Td3Bundle:
    rngs = _spawn_rngs(cfg.seed)
    init = rngs["init"]
    actor = Mlp((OBS_DIM, *cfg.actor_hidden, ACT_DIM), head="bounded", rng=init)
    critic_sizes = (OBS_DIM + ACT_DIM, *cfg.critic_hidden, 1)
    critic1 = Mlp(critic_sizes, rng=init)
    critic2 = Mlp(critic_sizes, rng=init) if cfg.mode == "td3" else None
    return Td3Bundle(
        actor=actor, critic1=critic1, critic2=critic2,
        target_actor=actor.copy(), target_critic1=critic1.copy(),
        target_critic2=critic2.copy() if critic2 is not None else None,
        opt_actor=AdamState(actor.params, lr=cfg.actor_lr),
        opt_critic1=AdamState(critic1.params, lr=cfg.critic_lr),
        opt_critic2=AdamState(critic2.params, lr=cfg.critic_lr) if critic2 is not None else None,
        buffer=ReplayBuffer(buffer_capacity or cfg.buffer_capacity),
        config=cfg, rngs=rngs)


# -- learner updates ------------------------------------------------------------

def _q(net: Mlp, obs, act):
    return forward(net, np.concatenate([obs, act], axis=1))[:, 0]


def compute_targets(batch: dict, bundle: Td3Bundle, gamma: float | None = None,
                    eps=None) -> np.ndarray:
    """Bootstrapped critic targets ``y`` for each transition of ``batch``.

    ``eps`` overrides the sampled target-policy noise (TD3 only).
    """
    cfg = bundle.config
    gamma = cfg.gamma if gamma is None else gamma
    nxt = batch["next_obs"]
    a_next = forward(bundle.target_actor, nxt)
    if bundle.twin:
        if eps is None:
            eps = bundle.rngs["target"].normal(0.0, cfg.target_noise_std, size=a_next.shape)
        eps = np.clip(eps, -cfg.target_noise_clip, cfg.target_noise_clip)
        a_next = np.clip(a_next + eps, -1.0, 1.0)
        q_next = np.minimum(_q(bundle.target_critic1, nxt, a_next),
                            _q(bundle.target_critic2, nxt, a_next))
    else:
        q_next = _q(bundle.target_critic1, nxt, a_next)
    return batch["rew"] + (1.0 - batch["done"]) * gamma * q_next


def critic_loss_and_grads(net: Mlp, obs, act, y):
    """Loss ``(1/2M) sum (y - Q)^2`` and its parameter gradients."""
    X = np.concatenate([obs, act], axis=1)
    q = forward(net, X)[:, 0]
    M = len(y)
    diff = q - y
    loss = float(0.5 * np.dot(diff, diff) / M)
    grads, _ = backward(net, X, (diff / M)[:, None])
    return loss, grads


def update_critics(batch: dict, bundle: Td3Bundle, y=None):
    """One Adam step per critic; returns the list of losses before the step."""
    y = compute_targets(batch, bundle) if y is None else y
    losses = []
    pairs = [(bundle.critic1, bundle.opt_critic1)]
    if bundle.twin:
        pairs.append((bundle.critic2, bundle.opt_critic2))
    for net, opt in pairs:
        loss, grads = critic_loss_and_grads(net, batch["obs"], batch["act"], y)
        adam_step(net.params, grads, opt)
        losses.append(loss)
    bundle.critic_updates += 1
    return losses


def actor_objective_and_grads(bundle: Td3Bundle, obs):
    """Objective ``(1/M) sum min_k Q_k(s, actor(s))`` and the gradient of its negation.

    The returned gradients are with respect to the actor parameters, ready
    for a descent step; critic parameters are only read.
    """
    M = obs.shape[0]
    act = forward(bundle.actor, obs)
    X = np.concatenate([obs, act], axis=1)
    q1 = forward(bundle.critic1, X)[:, 0]
    up = np.full((M, 1), 1.0 / M)
    _, dx1 = backward(bundle.critic1, X, up)
    if bundle.twin:
        q2 = forward(bundle.critic2, X)[:, 0]
        _, dx2 = backward(bundle.critic2, X, up)
        use1 = q1 <= q2
        qmin = np.where(use1, q1, q2)
        dq_da = np.where(use1[:, None], dx1[:, OBS_DIM:], dx2[:, OBS_DIM:])
    else:
        qmin = q1
        dq_da = dx1[:, OBS_DIM:]
    grads, _ = backward(bundle.actor, obs, -dq_da)
    return float(qmin.mean()), grads


def update_actor(batch: dict, bundle: Td3Bundle) -> float:
    objective, grads = actor_objective_and_grads(bundle, batch["obs"])
    adam_step(bundle.actor.params, grads, bundle.opt_actor)
    bundle.actor_updates += 1
    return objective


def polyak(target: Mlp, online: Mlp, tau: float) -> None:
    for pt, po in zip(target.params, online.params):
        pt *= 1.0 - tau
        pt += tau * po


def soft_update(bundle: Td3Bundle, tau: float | None = None) -> None:
    tau = bundle.config.tau if tau is None else tau
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau!r}")
    polyak(bundle.target_actor, bundle.actor, tau)
    polyak(bundle.target_critic1, bundle.critic1, tau)
    if bundle.twin:
        polyak(bundle.target_critic2, bundle.critic2, tau)


def learn_step(bundle: Td3Bundle) -> None:
    """Critic update plus, every ``d``-th time, actor and target updates."""
    cfg = bundle.config
    if bundle.buffer.count < cfg.batch_size:
        return
    batch = bundle.buffer.sample(cfg.batch_size, bundle.rngs["replay"])
    update_critics(batch, bundle)
    if bundle.critic_updates % cfg.effective_delay == 0:
        update_actor(batch, bundle)
        soft_update(bundle)


# -- environment ----------------------------------------------------------------

class TuningEnv:
    """Closed-loop converter episodes exposed as a step-wise control task.

    Episodes start either from rest (a reference step from 0 V) or from the
    open-loop steady state at ``f_base``, and regulate towards a constant
    reference.  Measurement noise enters the
    controller's error only.
    """

    def __init__(self, params: ConverterParams | None = None, horizon: float = 20e-3, *,
                 bounds: ActionBounds = ActionBounds(), obs_scale=OBS_SCALE, noise: bool = True,
                 f_base: float = F_NOMINAL, dt: float = DEFAULT_DT, control_period: float = 100e-6,
                 variant: str = "corrected", logic: str = "commutation", bound: float = 1e6,
                 start: str = "rest"):
        self.params = params or ConverterParams()
        self.horizon = horizon
        self.bounds = bounds
        self.obs_scale = tuple(obs_scale)
        self.noise = noise
        self.f_base = f_base
        self.dt = dt
        self.control_period = control_period
        self.variant = variant
        self.logic = logic
        self.bound = bound
        if start not in STARTS:
            raise ValueError(f"start must be one of {STARTS}, got {start!r}")
        self.start = start
        self._start = None
        self.loop = None
        self.ctrl = None

    def start_state(self):
        if self.start == "rest":
            return np.zeros(7)
        if self._start is None:
            self._start = np.array(settled_state(self.params, self.f_base, dt=self.dt,
                                                 variant=self.variant, logic=self.logic))
        return np.array(self._start)

    def reset(self, vref: float, noise_seed: int = 0, record: bool = False,
              decimation: int = 1) -> np.ndarray:
        sc = Scenario(duration=self.horizon, dt=self.dt, control_period=self.control_period,
                      vref_schedule=Schedule.constant(vref),
                      noise=NoiseSpec(enabled=self.noise, seed=noise_seed),
                      initial_state=self.start_state())
        self.ctrl = PIController(f_base=self.f_base)
        self.ctrl.set_gains(*map_action(np.zeros(ACT_DIM), self.bounds))
        self.loop = ClosedLoop(sc, controller=self.ctrl, params=self.params, variant=self.variant,
                               logic=self.logic, bound=self.bound, record=record,
                               decimation=decimation)
        return self._observe()

    def _observe(self):
        _, vm, vref = self.loop.measure()
        return observe(self.ctrl, vref - vm, self.obs_scale)

    @property
    def done(self) -> bool:
        return self.loop.done

    def step(self, action):
        """Apply gains, run one control period; ``(next_obs, reward, done)``.

        Raises :class:`NumericalBlowup` from the plant unchanged.
        """
        self.ctrl.set_gains(*map_action(action, self.bounds))
        self.loop.control_step()
        v, _, vref = self.loop.measure()
        return self._observe(), reward(vref, v), self.loop.done


def draw_episode(bundle: Td3Bundle):
    """Reference voltage and noise seed of the next episode."""
    rng = bundle.rngs["env"]
    lo, hi = bundle.config.vref_range
    return float(rng.uniform(lo, hi)), int(rng.integers(0, 2**31 - 1))


@dataclass
class EpisodeResult:
    reward: float
    transitions: list
    gains: tuple
    failed: bool = False
    clipped_actions: int = 0


def episode(env: TuningEnv, bundle: Td3Bundle, explore: bool = True, *, random_actions: bool = False,
            vref: float | None = None, noise_seed: int | None = None, learn: bool = False,
            record: bool = False) -> EpisodeResult:
    """Roll out one episode; optionally push transitions and learn online."""
    cfg = bundle.config
    v_draw, s_draw = draw_episode(bundle)
    vref = v_draw if vref is None else vref
    noise_seed = s_draw if noise_seed is None else noise_seed
    obs = env.reset(vref, noise_seed, record=record)
    transitions = []
    total = 0.0
    clipped = 0
    failed = False
    a = None

    def choose(o):
        nonlocal clipped
        if random_actions:
            return bundle.rngs["explore"].uniform(-1.0, 1.0, size=ACT_DIM)
        act = forward(bundle.actor, o)
        if explore:
            act = act + bundle.rngs["explore"].normal(0.0, cfg.explore_noise_std, size=ACT_DIM)
            clipped += int(np.any(np.abs(act) > 1.0))
        return np.clip(act, -1.0, 1.0)

    obs0 = obs
    if env.done:
        return EpisodeResult(0.0, [], map_action(np.zeros(ACT_DIM), env.bounds))
    per_episode = cfg.action_mode == "per-episode"
    if per_episode:
        a = choose(obs)
    try:
        while not env.done:
            if not per_episode:
                a = choose(obs)
            next_obs, r, done = env.step(a)
            total += r
            if not per_episode:
                transitions.append((obs, a, r * cfg.reward_scale, next_obs, float(done)))
                if learn:
                    bundle.buffer.push(*transitions[-1])
                    bundle.env_steps += 1
                    learn_step(bundle)
            obs = next_obs
    except NumericalBlowup as exc:
        log.warning("episode failed: %s", exc)
        failed = True
        total = FAILED_EPISODE_REWARD
        if not per_episode and a is not None:
            transitions.append((obs, a, FAILED_EPISODE_REWARD * cfg.reward_scale, obs, 1.0))
            if learn:
                bundle.buffer.push(*transitions[-1])
                bundle.env_steps += 1
    if per_episode:
        transitions.append((obs0, a, total * cfg.reward_scale, obs0, 1.0))
        if learn:
            bundle.buffer.push(*transitions[-1])
            bundle.env_steps += 1
            learn_step(bundle)
    return EpisodeResult(total, transitions, map_action(a, env.bounds), failed, clipped)


def deployment_gains(bundle: Td3Bundle, bounds: ActionBounds = ActionBounds()):
    """Gains the actor prescribes at the zero observation."""
    return map_action(forward(bundle.actor, np.zeros(OBS_DIM)), bounds)


@dataclass
class EpisodeLog:
    episode: int
    reward: float
    reward_mean: float
    kp: float
    ki: float
    deploy_kp: float
    deploy_ki: float
    epsilon_events: int
    failed: bool
    wall_time: float

    HEADER = "episode,reward,reward_mean50,kp,ki,deploy_kp,deploy_ki,epsilon_events,failed"

    def csv_row(self) -> str:
        vals = [str(self.episode), repr(self.reward), repr(self.reward_mean), repr(self.kp),
                repr(self.ki), repr(self.deploy_kp), repr(self.deploy_ki),
                str(self.epsilon_events), "1" if self.failed else "0"]
        return ",".join(vals)


def train(cfg: Td3Config, env: TuningEnv | None = None, bundle: Td3Bundle | None = None,
          callback=None):
    """Run ``cfg.episodes`` episodes; returns ``(bundle, logs)``.

    Passing an existing ``bundle`` resumes it.  Raises
    :class:`TrainingAborted` when more than half of the episodes in the
    trailing window fail numerically.
    """
    env = env or TuningEnv(horizon=cfg.horizon, noise=cfg.noise, obs_scale=cfg.obs_scale,
                           start=cfg.start)
    bundle = bundle or make_bundle(cfg)
    logs = []
    failures = []
    n_done = len(bundle.reward_history)
    for _ in range(cfg.episodes):
        t0 = time.perf_counter()
        warm = bundle.env_steps < cfg.warmup_steps
        res = episode(env, bundle, explore=True, random_actions=warm, learn=True)
        bundle.reward_history.append(res.reward)
        failures.append(res.failed)
        window = bundle.reward_history[-cfg.abort_window:]
        kp_d, ki_d = deployment_gains(bundle, env.bounds)
        entry = EpisodeLog(n_done + len(logs), res.reward, float(np.mean(window)), res.gains[0],
                           res.gains[1], kp_d, ki_d, res.clipped_actions, res.failed,
                           time.perf_counter() - t0)
        logs.append(entry)
        if callback is not None:
            callback(entry)
        recent = failures[-cfg.abort_window:]
        if sum(recent) * 2 > cfg.abort_window:
            raise TrainingAborted(f"{sum(recent)} of the last {len(recent)} episodes failed "
                                  "numerically")
    return bundle, logs


# -- evaluation -------------------------------------------------------------------

def rollout_reward(loop: ClosedLoop) -> float:
    """Run ``loop`` to its end; sum of per-period rewards on the true output."""
    total = 0.0
    while not loop.done:
        loop.control_step()
        v, _, r = loop.measure()
        total += reward(r, v)
    return total


def evaluation_reward(kp: float, ki: float, params: ConverterParams | None = None, seed: int = 0,
                      vref: float = 200.0, duration: float = 0.1, noise: bool = True,
                      decimation: int = 0, scenario: Scenario | None = None,
                      controller: PIController | None = None, **loop_kw):
    """Total reward of constant gains on the step/line/load disturbance scenario.

    ``scenario`` and ``controller`` replace the defaults when given (the
    controller's gains are overwritten with ``kp``/``ki``).  Returns
    ``(reward, loop)``; waveforms are recorded when ``decimation`` > 0.
    """
    sc = scenario or fig9_scenario(params, vref=vref, duration=duration, noise=noise, seed=seed)
    ctrl = controller or PIController()
    ctrl.set_gains(kp, ki)
    loop = ClosedLoop(sc, controller=ctrl, params=params, record=decimation > 0,
                      decimation=max(decimation, 1), **loop_kw)
    return rollout_reward(loop), loop


def trailing_stats(history, window: int = 50):
    tail = np.asarray(history[-window:], dtype=float)
    if len(tail) == 0:
        return math.nan, math.nan
    return float(tail.mean()), float(tail.var())


# -- checkpoints ------------------------------------------------------------------

def save_bundle(bundle: Td3Bundle, path) -> None:
    """Networks and optimizers via the neural checkpoint format, with the
    buffer contents in a sibling ``.buffer.npz`` file."""
    nets = {"actor": bundle.actor, "critic1": bundle.critic1,
            "target_actor": bundle.target_actor, "target_critic1": bundle.target_critic1}
    opts = {"actor": bundle.opt_actor, "critic1": bundle.opt_critic1}
    if bundle.twin:
        nets.update(critic2=bundle.critic2, target_critic2=bundle.target_critic2)
        opts["critic2"] = bundle.opt_critic2
    meta = {"config": asdict(bundle.config),
            "rngs": {k: g.bit_generator.state for k, g in bundle.rngs.items()},
            "reward_history": [float(r) for r in bundle.reward_history],
            "critic_updates": bundle.critic_updates, "actor_updates": bundle.actor_updates,
            "env_steps": bundle.env_steps, "buffer": bundle.buffer.stats()}
    save_checkpoint(path, nets, opts, meta=json.loads(json.dumps(meta)))
    buf = bundle.buffer
    order = buf.slot_order()
    write_npz(_buffer_path(path), dict(obs=buf.obs[order], act=buf.act[order], rew=buf.rew[order],
             next_obs=buf.next_obs[order], done=buf.done[order]))


def _buffer_path(path):
    p = str(path)
    return (p[:-4] if p.endswith(".npz") else p) + ".buffer.npz"


def load_bundle(path) -> Td3Bundle:
    nets, opts, _, meta = load_checkpoint(path)
    raw = meta["config"]
    cfg = Td3Config(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
    rngs = {}
    for k, state in meta["rngs"].items():
        g = np.random.default_rng()
        g.bit_generator.state = state
        rngs[k] = g
    buf = ReplayBuffer(meta["buffer"]["capacity"])
    with np.load(_buffer_path(path)) as data:
        for d in range(len(data["rew"])):
            buf.push(data["obs"][d], data["act"][d], data["rew"][d], data["next_obs"][d],
                     data["done"][d])
    twin = "critic2" in nets
    return Td3Bundle(
        actor=nets["actor"], critic1=nets["critic1"], critic2=nets.get("critic2"),
        target_actor=nets["target_actor"], target_critic1=nets["target_critic1"],
        target_critic2=nets.get("target_critic2"),
        opt_actor=opts["actor"], opt_critic1=opts["critic1"],
        opt_critic2=opts.get("critic2") if twin else None,
        buffer=buf, config=cfg, rngs=rngs, reward_history=list(meta["reward_history"]),
        critic_updates=meta["critic_updates"], actor_updates=meta["actor_updates"],
        env_steps=meta["env_steps"])


def with_mode(cfg: Td3Config, mode: str) -> Td3Config:
    return replace(cfg, mode=mode)
