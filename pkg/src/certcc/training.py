"""Actor-critic training with the verifier reward mixed into the objective.

A pool of actors, each owning an independently sampled link, collects
transitions carrying both reward channels (raw environment reward and the
certificate distance). A single twin-critic learner with delayed policy
updates and target smoothing optimizes the mixed reward
(1 - lambda) * raw + lambda * verifier. Actors act on a periodically
synchronized snapshot of the policy, and the verifier scores that same
snapshot, so the stored verifier reward is stale by at most one sync
period.

The loop is single-threaded and fully deterministic for a fixed seed.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .certify import (PropertySpec, certify_performance, certify_robustness,
                      performance_step_reward)
from .config import format_config
from .network import Network, actor_network, critic_network, save_checkpoint
from .sim import N_FEATURES, CcEnv, LinkConfig
from .traces import constant_trace

__all__ = [
    "TrainConfig",
    "Transition",
    "ReplayBuffer",
    "Adam",
    "mixed_reward",
    "verifier_reward",
    "ActorWorker",
    "TD3Learner",
    "train",
    "CONFIG_ALIASES",
]


@dataclass(frozen=True)
class TrainConfig:
    # objective
    lam: float = 0.25            # weight of the verifier reward channel
    n_components: int = 5        # training-time certificate components
    gamma: float = 0.99
    # property under training
    property_kind: str = "performance"
    p: float = 0.75
    q: float = 0.25
    mu: float = 0.05
    epsilon: float = 0.01
    # learner
    batch_size: int = 256
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    polyak: float = 0.005
    policy_delay: int = 2
    explore_noise: float = 0.1
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    replay_capacity: int = 200_000
    warmup_epochs: int = 500
    sync_every: int = 100
    total_epochs: int = 20_000
    # networks
    hidden: int = 256
    depth: int = 2
    leaky_slope: float = 0.2
    bn_momentum: float = 0.1
    history_k: int = 10
    # environment pool
    actor_count: int = 8
    episode_s: float = 30.0
    monitor_interval_ms: float = 20.0
    bw_lo_mbps: float = 2.0
    bw_hi_mbps: float = 48.0
    rtt_lo_ms: float = 10.0
    rtt_hi_ms: float = 200.0
    # sampled per episode; spanning shallow to deep buffers exposes the
    # high-delay region that a fixed 2*BDP buffer can never reach
    buffer_bdp_lo: float = 1.0
    buffer_bdp_hi: float = 4.0
    mtu: int = 1500
    zeta: float = 1.0
    beta: float = 2.0
    # bookkeeping
    seed: int = 0
    checkpoint_window: int = 200

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if self.policy_delay < 1:
            raise ValueError("policy delay must be >= 1")
        if self.n_components < 1:
            raise ValueError("component count must be >= 1")

    @property
    def input_dim(self) -> int:
        return self.history_k * N_FEATURES

    def property_spec(self) -> PropertySpec:
        if self.property_kind == "performance":
            return PropertySpec.performance(self.history_k, N_FEATURES, self.p, self.q)
        return PropertySpec.robustness(self.history_k, N_FEATURES, self.mu, self.epsilon)


# config-file keys that do not match the field names
CONFIG_ALIASES = {"lambda": "lam", "property": "property_kind"}


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: float
    reward_raw: float
    reward_verifier: float
    next_state: np.ndarray
    done: bool

    def __post_init__(self) -> None:
        if not 0.0 <= self.reward_verifier <= 1.0:
            raise ValueError("verifier reward must lie in [0, 1]")


class ReplayBuffer:
    """Preallocated FIFO ring buffer over both reward channels."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity)
        self.rewards_raw = np.zeros(capacity)
        self.rewards_verifier = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.size = 0
        self._head = 0

    def add(self, t: Transition) -> None:
        i = self._head
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards_raw[i] = t.reward_raw
        self.rewards_verifier[i] = t.reward_verifier
        self.next_states[i] = t.next_state
        self.dones[i] = float(t.done)
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, self.size, size=batch)
        return {
            "states": self.states[idx],
            "actions": self.actions[idx],
            "rewards_raw": self.rewards_raw[idx],
            "rewards_verifier": self.rewards_verifier[idx],
            "next_states": self.next_states[idx],
            "dones": self.dones[idx],
        }


class Adam:
    """Adam over a network's parameter dictionary."""

    def __init__(self, net: Network, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in net.parameters().items()}
        self.v = {k: np.zeros_like(v) for k, v in net.parameters().items()}
        self.t = 0

    def step(self, grads: dict, maximize: bool = False) -> None:
        self.t += 1
        params = self.net.parameters()
        updates = {}
        for key, p in params.items():
            g = -grads[key] if maximize else grads[key]
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * g * g
            mhat = self.m[key] / (1 - self.beta1 ** self.t)
            vhat = self.v[key] / (1 - self.beta2 ** self.t)
            updates[key] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        self.net.set_parameters(updates)


def mixed_reward(raw: float, verifier: float, lam: float):
    """(1 - lambda) * raw + lambda * verifier."""
    if np.any(np.asarray(lam) < 0) or np.any(np.asarray(lam) > 1):
        raise ValueError("lambda must be in [0, 1]")
    return (1.0 - lam) * raw + lam * verifier


def verifier_reward(net: Network, spec: PropertySpec, state: np.ndarray,
                    cwnd_prev: float, cwnd_tcp: float, n_components: int) -> float:
    """Per-step certificate distance for either property kind."""
    if spec.kind == "performance":
        large, small = certify_performance(net, spec, state, cwnd_prev,
                                           cwnd_tcp, n_components)
        return performance_step_reward(large, small)
    report = certify_robustness(net, spec, state, cwnd_tcp, n_components)
    return report.r_verifier


def sample_link_config(cfg: TrainConfig, rng: np.random.Generator) -> LinkConfig:
    """Stable-bandwidth training link with log-uniform bandwidth."""
    mbps = float(np.exp(rng.uniform(np.log(cfg.bw_lo_mbps), np.log(cfg.bw_hi_mbps))))
    min_rtt = float(rng.uniform(cfg.rtt_lo_ms, cfg.rtt_hi_ms))
    buffer_bdp = float(rng.uniform(cfg.buffer_bdp_lo, cfg.buffer_bdp_hi))
    trace = constant_trace(mbps, cfg.episode_s, cfg.mtu)
    bdp = trace.mean_rate_pps() * min_rtt / 1000.0
    buffer_pkts = max(2, int(round(buffer_bdp * bdp)))
    return LinkConfig(trace=trace, min_rtt_ms=min_rtt, buffer_pkts=buffer_pkts,
                      mtu_bytes=cfg.mtu, monitor_interval_ms=cfg.monitor_interval_ms)


class ActorWorker:
    """One rollout worker owning its environment and exploration stream."""

    def __init__(self, cfg: TrainConfig, spec: PropertySpec, seed_seq: np.random.SeedSequence):
        self.cfg = cfg
        self.spec = spec
        self.env_rng, self.explore_rng = [np.random.default_rng(s)
                                          for s in seed_seq.spawn(2)]
        self._new_episode()

    def _new_episode(self) -> None:
        link_cfg = sample_link_config(self.cfg, self.env_rng)
        self.env = CcEnv(link_cfg, history_k=self.cfg.history_k,
                         seed=int(self.env_rng.integers(2 ** 31)),
                         zeta=self.cfg.zeta, beta=self.cfg.beta)
        self.state = self.env.reset()

    def step(self, policy: Network, explore: bool, warmup: bool) -> Transition:
        s = self.state
        if warmup:
            a = float(self.explore_rng.uniform(-1.0, 1.0))
        else:
            a = policy.forward(s)
            if explore:
                a += self.explore_rng.normal(0.0, self.cfg.explore_noise)
            a = float(np.clip(a, -1.0, 1.0))
        next_state, r_raw, done, obs = self.env.mi_step(a)
        # certificate of the state the action produced: the enforced window
        # and the backbone suggestion both carry the action's effect, so the
        # critic can attribute certificate quality to the action
        r_ver = verifier_reward(policy, self.spec, next_state, obs.cwnd_prev,
                                obs.cwnd_tcp, self.cfg.n_components)
        t = Transition(state=s, action=a, reward_raw=r_raw, reward_verifier=r_ver,
                       next_state=next_state, done=done)
        if done:
            self._new_episode()
        else:
            self.state = next_state
        return t


class TD3Learner:
    """Twin critics, delayed deterministic policy updates, Polyak targets."""

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        dim = cfg.input_dim
        self.cfg = cfg
        self.rng = rng
        self.actor = actor_network(dim, cfg.hidden, cfg.depth, cfg.leaky_slope,
                                   cfg.bn_momentum, rng)
        self.critic1 = critic_network(dim, 1, cfg.hidden, cfg.depth, cfg.leaky_slope, rng)
        self.critic2 = critic_network(dim, 1, cfg.hidden, cfg.depth, cfg.leaky_slope, rng)
        self.target_actor = self.actor.copy()
        self.target_critic1 = self.critic1.copy()
        self.target_critic2 = self.critic2.copy()
        self.opt_actor = Adam(self.actor, cfg.actor_lr)
        self.opt_critic1 = Adam(self.critic1, cfg.critic_lr)
        self.opt_critic2 = Adam(self.critic2, cfg.critic_lr)
        self.steps = 0

    @staticmethod
    def _q_input(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.concatenate([states, actions.reshape(-1, 1)], axis=1)

    def _target_q(self, batch: dict) -> np.ndarray:
        cfg = self.cfg
        a, _ = self.target_actor.forward_batch(batch["next_states"], training=False)
        next_a = a.ravel()
        noise = np.clip(self.rng.normal(0.0, cfg.target_noise, size=next_a.shape),
                        -cfg.target_noise_clip, cfg.target_noise_clip)
        next_a = np.clip(next_a + noise, -1.0, 1.0)
        xq = self._q_input(batch["next_states"], next_a)
        q1, _ = self.target_critic1.forward_batch(xq, training=False)
        q2, _ = self.target_critic2.forward_batch(xq, training=False)
        r = mixed_reward(batch["rewards_raw"], batch["rewards_verifier"], cfg.lam)
        return r + cfg.gamma * (1.0 - batch["dones"]) * np.minimum(q1, q2).ravel()

    def _critic_update(self, critic: Network, opt: Adam, x: np.ndarray,
                       y: np.ndarray) -> float:
        q, caches = critic.forward_batch(x, training=True)
        err = q.ravel() - y
        loss = float(np.mean(err ** 2))
        dy = (2.0 * err / err.size).reshape(-1, 1)
        _, grads = critic.backward(dy, caches)
        opt.step(grads)
        return loss

    def _actor_update(self, states: np.ndarray) -> float:
        # deterministic policy gradient through critic1
        a, actor_caches = self.actor.forward_batch(states, training=True,
                                                   update_running=True)
        x = self._q_input(states, a.ravel())
        q, critic_caches = self.critic1.forward_batch(x, training=False)
        objective = float(np.mean(q))
        dq = np.full_like(q, 1.0 / q.size)
        dx, _ = self.critic1.backward(dq, critic_caches)
        da = dx[:, -1:]
        _, grads = self.actor.backward(da, actor_caches)
        self.opt_actor.step(grads, maximize=True)
        return objective

    def _polyak(self, online: Network, target: Network, rho: float) -> None:
        src = online.state_arrays()
        dst = target.state_arrays()
        blended = {k: (1.0 - rho) * dst[k] + rho * src[k] for k in src}
        target._load_state(blended)

    def step(self, replay: ReplayBuffer) -> dict:
        cfg = self.cfg
        batch = replay.sample(cfg.batch_size, self.rng)
        y = self._target_q(batch)
        x = self._q_input(batch["states"], batch["actions"])
        loss1 = self._critic_update(self.critic1, self.opt_critic1, x, y)
        loss2 = self._critic_update(self.critic2, self.opt_critic2, x, y)
        raw_mean = float(np.mean(batch["rewards_raw"]))
        ver_mean = float(np.mean(batch["rewards_verifier"]))
        diag = {"critic_loss": 0.5 * (loss1 + loss2),
                "q_target_mean": float(np.mean(y)),
                "batch_reward_raw": raw_mean,
                "batch_reward_verifier": ver_mean,
                "batch_reward_mixed": mixed_reward(raw_mean, ver_mean, cfg.lam)}
        self.steps += 1
        if self.steps % cfg.policy_delay == 0:
            diag["actor_objective"] = self._actor_update(batch["states"])
            for online, target in ((self.actor, self.target_actor),
                                   (self.critic1, self.target_critic1),
                                   (self.critic2, self.target_critic2)):
                self._polyak(online, target, cfg.polyak)
        return diag

    def assert_finite(self) -> None:
        for net_name, net in (("actor", self.actor), ("critic1", self.critic1),
                              ("critic2", self.critic2)):
            for key, arr in net.state_arrays().items():
                if not np.all(np.isfinite(arr)):
                    raise RuntimeError(f"non-finite parameters in {net_name} {key}")

    def networks(self) -> dict[str, Network]:
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
                "target_actor": self.target_actor,
                "target_critic1": self.target_critic1,
                "target_critic2": self.target_critic2}


TRAIN_LOG_HEADER = ["epoch", "reward_raw", "reward_verifier", "reward_mixed",
                    "epoch_rate", "wallclock"]


def train(cfg: TrainConfig, run_dir, progress_every: int = 0) -> dict:
    """Run the full training loop; writes the log, config, and checkpoints.

    One epoch is one environment step per actor followed by one learner
    update. Returns a summary with the best checkpoint path and the final
    reward statistics.
    """
    os.makedirs(run_dir, exist_ok=True)
    seed_root = np.random.SeedSequence(cfg.seed)
    learner_seq, *actor_seqs = seed_root.spawn(1 + cfg.actor_count)
    learner = TD3Learner(cfg, np.random.default_rng(learner_seq))
    spec = cfg.property_spec()
    actors = [ActorWorker(cfg, spec, seq) for seq in actor_seqs]
    replay = ReplayBuffer(cfg.replay_capacity, cfg.input_dim)
    snapshot = learner.actor.copy()

    with open(os.path.join(run_dir, "config.txt"), "w") as fh:
        fh.write(format_config(cfg))

    log_path = os.path.join(run_dir, "train_log.csv")
    best_path = os.path.join(run_dir, "checkpoint_best.npz")
    last_path = os.path.join(run_dir, "checkpoint_last.npz")
    window: list[float] = []
    best_mixed = -np.inf
    learner_steps = 0
    t_start = time.perf_counter()
    t_prev = t_start
    rate_smooth = None

    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAIN_LOG_HEADER)
        for epoch in range(cfg.total_epochs):
            warmup = epoch < cfg.warmup_epochs
            raws, vers = [], []
            for actor in actors:
                t = actor.step(snapshot, explore=True, warmup=warmup)
                replay.add(t)
                raws.append(t.reward_raw)
                vers.append(t.reward_verifier)
            if not warmup and replay.size >= cfg.batch_size:
                learner.step(replay)
                learner_steps += 1
                if learner_steps % cfg.sync_every == 0:
                    snapshot = learner.actor.copy()
                if learner_steps % 500 == 0:
                    learner.assert_finite()
            now = time.perf_counter()
            dt = max(now - t_prev, 1e-9)
            t_prev = now
            rate = 1.0 / dt
            rate_smooth = rate if rate_smooth is None else 0.98 * rate_smooth + 0.02 * rate
            raw_mean = float(np.mean(raws))
            ver_mean = float(np.mean(vers))
            mix_mean = mixed_reward(raw_mean, ver_mean, cfg.lam)
            writer.writerow([epoch, repr(raw_mean), repr(ver_mean), repr(mix_mean),
                             repr(rate_smooth), repr(now - t_start)])
            window.append(mix_mean)
            if len(window) >= cfg.checkpoint_window:
                mean_mixed = float(np.mean(window))
                window.clear()
                if mean_mixed > best_mixed:
                    best_mixed = mean_mixed
                    save_checkpoint(best_path, {"actor": learner.actor},
                                    step=epoch, config=asdict(cfg))
            if progress_every and (epoch + 1) % progress_every == 0:
                print(f"epoch {epoch + 1}/{cfg.total_epochs} raw={raw_mean:.3f} "
                      f"verifier={ver_mean:.3f} rate={rate_smooth:.1f}/s", flush=True)

    if best_mixed == -np.inf:
        save_checkpoint(best_path, {"actor": learner.actor},
                        step=cfg.total_epochs, config=asdict(cfg))
    save_checkpoint(last_path, learner.networks(), step=cfg.total_epochs,
                    config=asdict(cfg))
    elapsed = time.perf_counter() - t_start
    return {
        "run_dir": str(run_dir),
        "best_checkpoint": best_path,
        "last_checkpoint": last_path,
        "train_log": log_path,
        "epochs": cfg.total_epochs,
        "wallclock_s": elapsed,
        "epoch_rate": cfg.total_epochs / max(elapsed, 1e-9),
        "best_mixed_reward": None if best_mixed == -np.inf else best_mixed,
    }
