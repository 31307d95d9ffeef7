"""Discrete-time single-bottleneck link simulator with a cubic-style backbone.

The link advances in 1 ms ticks. Each tick: acks whose round trip has
completed are processed, the sender injects packets up to its window,
and the bottleneck queue drains at the traced capacity. Drained packets
return an ack one minimum RTT after leaving the queue, which is when the
delivered counter and RTT statistics update (the sender's view). Packets
that arrive at a full queue are dropped.

Everything is deterministic given the configuration and the seed; the
only randomness is optional observation noise.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .traces import Trace

__all__ = [
    "LinkConfig",
    "Observation",
    "Link",
    "CubicBackbone",
    "apply_action",
    "cwnd_modulation",
    "orca_reward",
    "ConnectionStats",
    "observation_features",
    "CcEnv",
    "FEATURE_NAMES",
    "DELAY_FEATURE",
    "N_FEATURES",
]


@dataclass(frozen=True)
class LinkConfig:
    trace: Trace
    min_rtt_ms: float
    buffer_pkts: int
    mtu_bytes: int = 1500  # reporting and Mbps conversion only
    monitor_interval_ms: float = 20.0
    # optional multiplicative observation noise: (statistic name, relative bound)
    noise: tuple[str, float] | None = None

    def __post_init__(self) -> None:
        if self.min_rtt_ms < 1.0:
            raise ValueError("min RTT must be at least 1 ms")
        if self.buffer_pkts < 1:
            raise ValueError("buffer must hold at least one packet")
        if self.monitor_interval_ms < 1.0:
            raise ValueError("monitor interval must be at least 1 ms")
        if self.noise is not None:
            stat, bound = self.noise
            if stat not in ("delay", "thr", "loss_rate", "srtt"):
                raise ValueError(f"unknown noisy statistic {stat!r}")
            if not 0.0 <= bound < 1.0:
                raise ValueError("noise bound must be in [0, 1)")

    @property
    def bdp_pkts(self) -> float:
        return self.trace.mean_rate_pps() * self.min_rtt_ms / 1000.0


@dataclass(frozen=True)
class Observation:
    """Statistics of one monitor interval, as seen by the controller."""

    thr: float          # delivered packets per second
    loss_rate: float    # dropped / sent over the interval
    delay: float        # mean queuing delay of delivered packets, ms
    n: int              # acked packets in the interval
    m: float            # interval length, ms
    srtt: float         # smoothed RTT, ms
    delay_norm: float   # delay / (delay + min_rtt), in [0, 1)
    cwnd_tcp: float     # backbone suggestion for the next decision
    cwnd_prev: float    # window enforced during this interval


class Link:
    """Bottleneck queue plus propagation pipe; owns all packet bookkeeping."""

    def __init__(self, cfg: LinkConfig, seed: int = 0):
        self.cfg = cfg
        self.clock_ms = 0.0
        self.queue: deque[float] = deque()          # enqueue timestamps
        self.pipe: deque[tuple[float, float]] = deque()  # (ack due, queuing delay)
        self.drain_credit = 0.0
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.capacity_offered = 0.0   # integral of capacity over elapsed time, packets
        self.srtt_ms = cfg.min_rtt_ms
        self._have_rtt_sample = False
        self.rng = np.random.default_rng(seed)
        self.all_qdelays: list[float] = []
        self._reset_interval_stats()

    def _reset_interval_stats(self) -> None:
        self.mi_acked = 0
        self.mi_sent = 0
        self.mi_dropped = 0
        self.mi_qdelay_sum = 0.0
        self.mi_elapsed = 0.0

    @property
    def inflight(self) -> int:
        """Packets past the queue whose ack has not yet returned."""
        return len(self.pipe)

    @property
    def queued(self) -> int:
        return len(self.queue)

    def conservation_holds(self) -> bool:
        return self.sent == self.delivered + self.dropped + self.inflight + self.queued

    @property
    def done(self) -> bool:
        return self.clock_ms >= self.cfg.trace.duration_ms

    def step(self, cwnd: int, dt_ms: float = 1.0) -> None:
        """Advance the link one tick under the given congestion window."""
        now = self.clock_ms
        # 1. acks whose round trip completed
        while self.pipe and self.pipe[0][0] <= now:
            _, qdelay = self.pipe.popleft()
            self.delivered += 1
            self.mi_acked += 1
            self.mi_qdelay_sum += qdelay
            self.all_qdelays.append(qdelay)
            rtt = self.cfg.min_rtt_ms + qdelay
            if self._have_rtt_sample:
                self.srtt_ms += (rtt - self.srtt_ms) / 8.0
            else:
                self.srtt_ms = rtt
                self._have_rtt_sample = True
        # 2. window-limited injection; overflow beyond the buffer is dropped
        outstanding = len(self.queue) + len(self.pipe)
        to_send = max(0, int(cwnd) - outstanding)
        if to_send:
            space = self.cfg.buffer_pkts - len(self.queue)
            admitted = min(to_send, space)
            for _ in range(admitted):
                self.queue.append(now)
            lost = to_send - admitted
            self.sent += to_send
            self.mi_sent += to_send
            self.dropped += lost
            self.mi_dropped += lost
        # 3. drain at the traced capacity
        cap = self.cfg.trace.capacity_at(now)
        self.capacity_offered += cap * dt_ms / 1000.0
        self.drain_credit += cap * dt_ms / 1000.0
        while self.drain_credit >= 1.0 and self.queue:
            enq = self.queue.popleft()
            self.pipe.append((now + self.cfg.min_rtt_ms, now - enq))
            self.drain_credit -= 1.0
        if not self.queue:
            self.drain_credit = 0.0  # idle link holds no partial transmission
        self.clock_ms = now + dt_ms
        self.mi_elapsed += dt_ms

    def interval_stats(self) -> dict:
        """Collect and reset the statistics of the elapsed monitor interval."""
        m = self.mi_elapsed
        acked = self.mi_acked
        thr = acked / (m / 1000.0) if m > 0 else 0.0
        loss_rate = self.mi_dropped / max(1, self.mi_sent)
        delay = self.mi_qdelay_sum / acked if acked else 0.0
        if self.cfg.noise is not None:
            stat, bound = self.cfg.noise
            eta = self.rng.uniform(-bound, bound)
            if stat == "delay":
                delay = max(0.0, delay * (1.0 + eta))
            elif stat == "thr":
                thr = max(0.0, thr * (1.0 + eta))
            elif stat == "loss_rate":
                loss_rate = min(1.0, max(0.0, loss_rate * (1.0 + eta)))
            elif stat == "srtt":
                self.srtt_ms = max(self.cfg.min_rtt_ms, self.srtt_ms * (1.0 + eta))
        stats = {
            "thr": thr,
            "loss_rate": loss_rate,
            "delay": delay,
            "n": acked,
            "m": m,
            "srtt": self.srtt_ms,
            "delay_norm": delay / (delay + self.cfg.min_rtt_ms),
        }
        self._reset_interval_stats()
        return stats

    def utilization(self) -> float:
        return self.delivered / max(self.capacity_offered, 1e-9)


class CubicBackbone:
    """Simplified cubic window growth with multiplicative decrease.

    In congestion avoidance the window follows
    W(t) = C * (t - K)^3 + w_max with t in seconds since the last loss
    epoch and K = cbrt(w_max * 0.3 / C). Below ssthresh the window grows
    by one packet per ack (doubling per RTT). A loss multiplies the
    window by 0.7 and starts a new epoch; at most one decrease per
    minimum RTT.
    """

    GROWTH_C = 0.4
    DECREASE = 0.7

    def __init__(self, initial_cwnd: float = 10.0, min_rtt_ms: float = 100.0,
                 cwnd_cap: float = float("inf")):
        if initial_cwnd < 2:
            raise ValueError("initial window must be at least 2")
        self.cwnd = float(initial_cwnd)
        self.ssthresh = float("inf")
        self.w_max = float(initial_cwnd)
        self.k_sec = 0.0
        self.epoch_start_ms: float | None = None
        self.min_rtt_ms = float(min_rtt_ms)
        self.recovery_until_ms = -1.0
        # socket-buffer-style ceiling; without it an aggressive learned
        # action can compound the window faster than loss response shrinks it
        self.cwnd_cap = float(cwnd_cap)

    def _clamp(self) -> None:
        self.cwnd = min(max(self.cwnd, 1.0), self.cwnd_cap)

    def _w_cubic(self, t_sec: float) -> float:
        return self.GROWTH_C * (t_sec - self.k_sec) ** 3 + self.w_max

    def on_acks(self, n: int, now_ms: float) -> None:
        if n <= 0:
            return
        if self.cwnd < self.ssthresh:
            self.cwnd += n
            self._clamp()
            return
        self.advance(now_ms)

    def advance(self, now_ms: float) -> None:
        """Time-driven cubic growth while in congestion avoidance."""
        if self.epoch_start_ms is None:
            return
        t = (now_ms - self.epoch_start_ms) / 1000.0
        self.cwnd = self._w_cubic(t)
        self._clamp()

    def on_loss(self, now_ms: float) -> None:
        if now_ms < self.recovery_until_ms:
            return
        self.w_max = self.cwnd
        self.cwnd = max(1.0, self.DECREASE * self.cwnd)
        self.ssthresh = self.cwnd
        self.k_sec = np.cbrt(self.w_max * (1.0 - self.DECREASE) / self.GROWTH_C)
        self.epoch_start_ms = now_ms
        self.recovery_until_ms = now_ms + self.min_rtt_ms

    def enforce(self, cwnd: float, now_ms: float) -> None:
        """Override the window (the learned action is authoritative).

        In congestion avoidance the epoch is re-anchored so that the curve
        continues smoothly from the enforced value.
        """
        self.cwnd = float(cwnd)
        self._clamp()
        if self.epoch_start_ms is not None:
            offset = self.k_sec + np.cbrt((self.cwnd - self.w_max) / self.GROWTH_C)
            self.epoch_start_ms = now_ms - offset * 1000.0


def cwnd_modulation(action: float, cwnd_tcp: float) -> float:
    """Real-valued window modulation 2^(2a) * cwnd_tcp."""
    return float(np.exp2(2.0 * action) * cwnd_tcp)


def apply_action(action: float, cwnd_tcp: float) -> int:
    """Modulated window rounded half-up to at least one packet."""
    if cwnd_tcp < 1:
        raise ValueError("cwnd_tcp must be at least one packet")
    if not -1.0 <= action <= 1.0:
        raise ValueError("action must lie in [-1, 1]")
    return max(1, int(math.floor(cwnd_modulation(action, cwnd_tcp) + 0.5)))


def orca_reward(obs: Observation, running: tuple[float, float],
                zeta: float = 1.0, beta: float = 2.0) -> float:
    """Power-style reward normalized by the running extrema.

    `running` is (thr_max, d_min). The delay signal is the smoothed RTT,
    which keeps d_min's minimum-RTT initialization on the same scale.
    Loss enters as lost throughput, loss_rate * thr.
    """
    thr_max, d_min = running
    if thr_max <= 0 or d_min <= 0:
        raise ValueError("running extrema must be positive")
    if beta <= 1:
        raise ValueError("beta must exceed 1")
    delay = obs.srtt
    delay_eff = d_min if d_min <= delay <= beta * d_min else delay
    lost = obs.loss_rate * obs.thr
    return ((obs.thr - zeta * lost) / delay_eff) / (thr_max / d_min)


FEATURE_NAMES = ("delay_norm", "rtt_ratio", "thr_ratio", "loss_rate",
                 "ack_norm", "mi_norm")
DELAY_FEATURE = 0
N_FEATURES = len(FEATURE_NAMES)

ACK_SCALE = 1000.0
MI_SCALE = 1000.0


class ConnectionStats:
    """Running per-connection extrema feeding the reward and the features."""

    def __init__(self, min_rtt_ms: float, thr_floor: float = 1e-9):
        self.min_rtt_ms = min_rtt_ms
        self.thr_max = thr_floor
        self.d_min = min_rtt_ms

    def update(self, obs: Observation) -> None:
        self.thr_max = max(self.thr_max, obs.thr)
        self.d_min = max(self.min_rtt_ms, min(self.d_min, obs.srtt))

    @property
    def running(self) -> tuple[float, float]:
        return self.thr_max, self.d_min


def observation_features(obs: Observation, stats: ConnectionStats) -> np.ndarray:
    """Map one observation to the bounded feature vector fed to the controller."""
    return np.array([
        obs.delay_norm,
        stats.min_rtt_ms / obs.srtt,
        min(1.0, obs.thr / stats.thr_max),
        obs.loss_rate,
        obs.n / (obs.n + ACK_SCALE),
        obs.m / (obs.m + MI_SCALE),
    ])


class CcEnv:
    """Controller-facing environment: link + backbone + stacked features.

    One `mi_step` applies an action, runs a monitor interval, and returns
    the next stacked state together with the raw reward.
    """

    def __init__(self, cfg: LinkConfig, history_k: int, seed: int = 0,
                 initial_cwnd: float = 10.0, zeta: float = 1.0, beta: float = 2.0,
                 dt_ms: float = 1.0):
        if cfg.monitor_interval_ms % dt_ms != 0:
            raise ValueError("tick must divide the monitor interval")
        self.cfg = cfg
        self.k = history_k
        self.seed = seed
        self.initial_cwnd = initial_cwnd
        self.zeta = zeta
        self.beta = beta
        self.dt_ms = dt_ms
        self.reset()

    def reset(self) -> np.ndarray:
        self.link = Link(self.cfg, seed=self.seed)
        # beyond queue + pipe capacity every extra packet drops, so a window
        # above 2 * (BDP + buffer) has no use; it only destabilizes training
        cap = max(4.0 * self.initial_cwnd,
                  2.0 * (self.cfg.bdp_pkts + self.cfg.buffer_pkts))
        self.backbone = CubicBackbone(self.initial_cwnd, self.cfg.min_rtt_ms,
                                      cwnd_cap=cap)
        self.stats = ConnectionStats(self.cfg.min_rtt_ms)
        self.history = deque([np.zeros(N_FEATURES) for _ in range(self.k)],
                             maxlen=self.k)
        self.cwnd_prev = float(self.initial_cwnd)
        self.last_obs: Observation | None = None
        return self.state()

    def state(self) -> np.ndarray:
        """Stacked feature history, oldest first."""
        return np.concatenate(list(self.history))

    @property
    def cwnd_tcp(self) -> float:
        return self.backbone.cwnd

    def mi_step(self, action: float) -> tuple[np.ndarray, float, bool, Observation]:
        """Apply an action, simulate one monitor interval, observe, reward."""
        cwnd = apply_action(action, self.backbone.cwnd)
        self.backbone.enforce(cwnd, self.link.clock_ms)
        ticks = int(round(self.cfg.monitor_interval_ms / self.dt_ms))
        for _ in range(ticks):
            delivered_before = self.link.delivered
            dropped_before = self.link.dropped
            self.link.step(cwnd, self.dt_ms)
            self.backbone.on_acks(self.link.delivered - delivered_before,
                                  self.link.clock_ms)
            if self.link.dropped > dropped_before:
                self.backbone.on_loss(self.link.clock_ms)
            self.backbone.advance(self.link.clock_ms)
        raw = self.link.interval_stats()
        obs = Observation(cwnd_tcp=self.backbone.cwnd, cwnd_prev=float(cwnd), **raw)
        self.stats.update(obs)
        reward = orca_reward(obs, self.stats.running, self.zeta, self.beta)
        self.history.append(observation_features(obs, self.stats))
        self.cwnd_prev = float(cwnd)
        self.last_obs = obs
        return self.state(), reward, self.link.done, obs
