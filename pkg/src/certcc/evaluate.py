"""Trace-driven evaluation: empirical metrics plus certified satisfaction.

Each trace is replayed `repeats` times with the deterministic policy. At
every monitor step the certificate is computed with the evaluation-grade
component count (50 by default), and the per-step reports are aggregated
into FCC and FCS. With a noise bound set, every run is paired with a
noise-free twin under the same seed and the percentage change of each
metric is reported.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .certify import (CertificateReport, PropertySpec, aggregate_fcc_fcs,
                      certify_performance, certify_robustness,
                      performance_step_reward, write_certificate_csv)
from .network import Network
from .sim import CcEnv, LinkConfig
from .traces import Trace

__all__ = [
    "TraceRun",
    "evaluate",
    "certify_state_log",
    "read_state_log",
    "STATE_LOG_PREFIX",
]

STATE_LOG_PREFIX = ["trace", "repeat", "step", "cwnd_prev", "cwnd_tcp"]


@dataclass
class TraceRun:
    """Raw outcome of one trace replay."""

    utilization: float
    avg_delay_ms: float
    p95_delay_ms: float
    loss_rate: float
    reward_raw_mean: float
    reward_verifier_mean: float
    cert_metrics: dict
    step_reports: list = field(default_factory=list)
    state_rows: list = field(default_factory=list)


def _performance_cert_metrics(step_pairs: list[tuple[CertificateReport, CertificateReport]]) -> dict:
    large = [a for a, _ in step_pairs]
    small = [b for _, b in step_pairs]
    fcc_large, fcs_large = aggregate_fcc_fcs(large)
    fcc_small, fcs_small = aggregate_fcc_fcs(small)
    joint_fracs, joint_full = [], []
    for a, b in step_pairs:
        both = [ca.certified and cb.certified
                for ca, cb in zip(a.components, b.components)]
        joint_fracs.append(sum(both) / len(both))
        joint_full.append(all(both))
    return {
        "fcc_large": fcc_large, "fcc_small": fcc_small,
        "fcc_joint": float(np.mean(joint_fracs)),
        "fcs_large": fcs_large, "fcs_small": fcs_small,
        "fcs_joint": float(np.mean(joint_full)),
    }


def _robustness_cert_metrics(reports: list[CertificateReport]) -> dict:
    fcc, fcs = aggregate_fcc_fcs(reports)
    return {"fcc": fcc, "fcs": fcs}


def run_trace(net: Network, spec: PropertySpec, trace: Trace, *, min_rtt_ms: float,
              buffer_bdp: float, mtu: int, monitor_interval_ms: float,
              n_components: int, seed: int, noise_bound: float | None = None,
              zeta: float = 1.0, beta: float = 2.0, initial_cwnd: float = 10.0,
              trace_name: str = "", repeat: int = 0) -> TraceRun:
    """Replay one trace with per-step certification."""
    bdp = trace.mean_rate_pps() * min_rtt_ms / 1000.0
    cfg = LinkConfig(trace=trace, min_rtt_ms=min_rtt_ms,
                     buffer_pkts=max(2, int(round(buffer_bdp * bdp))),
                     mtu_bytes=mtu, monitor_interval_ms=monitor_interval_ms,
                     noise=("delay", noise_bound) if noise_bound else None)
    env = CcEnv(cfg, history_k=spec.k, seed=seed, initial_cwnd=initial_cwnd,
                zeta=zeta, beta=beta)
    state = env.reset()
    rewards_raw, rewards_ver = [], []
    step_reports = []
    state_rows = []
    step = 0
    done = False
    while not done:
        action = net.forward(state)
        cwnd_prev, cwnd_tcp = env.cwnd_prev, env.cwnd_tcp
        if spec.kind == "performance":
            pair = certify_performance(net, spec, state, cwnd_prev, cwnd_tcp,
                                       n_components)
            rewards_ver.append(performance_step_reward(*pair))
            step_reports.append(pair)
        else:
            report = certify_robustness(net, spec, state, cwnd_tcp, n_components)
            rewards_ver.append(report.r_verifier)
            step_reports.append(report)
        state_rows.append([trace_name, repeat, step, repr(float(cwnd_prev)),
                           repr(float(cwnd_tcp))] + [repr(float(v)) for v in state])
        state, r_raw, done, _ = env.mi_step(action)
        rewards_raw.append(r_raw)
        step += 1
    qdelays = np.asarray(env.link.all_qdelays) if env.link.all_qdelays else np.zeros(1)
    if spec.kind == "performance":
        cert = _performance_cert_metrics(step_reports)
    else:
        cert = _robustness_cert_metrics(step_reports)
    return TraceRun(
        utilization=env.link.utilization(),
        avg_delay_ms=float(np.mean(qdelays)),
        p95_delay_ms=float(np.percentile(qdelays, 95)),
        loss_rate=env.link.dropped / max(1, env.link.sent),
        reward_raw_mean=float(np.mean(rewards_raw)),
        reward_verifier_mean=float(np.mean(rewards_ver)),
        cert_metrics=cert,
        step_reports=step_reports,
        state_rows=state_rows,
    )


_SCALAR_METRICS = ("utilization", "avg_delay_ms", "p95_delay_ms", "loss_rate")


def _mean_run(runs: list[TraceRun]) -> dict:
    out = {name: float(np.mean([getattr(r, name) for r in runs]))
           for name in _SCALAR_METRICS}
    cert_keys = runs[0].cert_metrics.keys()
    out["cert"] = {k: float(np.mean([r.cert_metrics[k] for r in runs]))
                   for k in cert_keys}
    out["reward_raw"] = float(np.mean([r.reward_raw_mean for r in runs]))
    out["reward_verifier"] = float(np.mean([r.reward_verifier_mean for r in runs]))
    return out


def _pct_change(clean: float, other: float) -> float:
    if clean == 0.0:
        return 0.0 if other == 0.0 else float("inf")
    return 100.0 * (other - clean) / clean


def evaluate(net: Network, spec: PropertySpec, traces: dict[str, Trace], *,
             min_rtt_ms: float = 50.0, buffer_bdp: float = 2.0, mtu: int = 1500,
             monitor_interval_ms: float = 20.0, n_components: int = 50,
             repeats: int = 5, noise_bound: float | None = None, seed: int = 0,
             zeta: float = 1.0, beta: float = 2.0, initial_cwnd: float = 10.0,
             out_dir=None) -> dict:
    """Evaluate a policy over traces; returns the summary dictionary.

    When `out_dir` is given, also writes eval_summary.json, the per-trace
    CSV, the certificate dump, and the state log (first repeat of the
    noise-free pass per trace).
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if not traces:
        raise ValueError("no traces to evaluate")
    per_trace: dict[str, dict] = {}
    dump_reports: list[tuple[str, list]] = []
    state_rows_all: list[list] = []

    for t_idx, (name, trace) in enumerate(sorted(traces.items())):
        clean_runs, noisy_runs = [], []
        for rep in range(repeats):
            rep_seed = int(np.random.SeedSequence(
                [seed, t_idx, rep]).generate_state(1)[0] % (2 ** 31))
            kwargs = dict(min_rtt_ms=min_rtt_ms, buffer_bdp=buffer_bdp, mtu=mtu,
                          monitor_interval_ms=monitor_interval_ms,
                          n_components=n_components, seed=rep_seed, zeta=zeta,
                          beta=beta, initial_cwnd=initial_cwnd,
                          trace_name=name, repeat=rep)
            clean = run_trace(net, spec, trace, noise_bound=None, **kwargs)
            clean_runs.append(clean)
            if rep == 0:
                dump_reports.append((name, clean.step_reports))
                state_rows_all.extend(clean.state_rows)
            if noise_bound:
                noisy_runs.append(run_trace(net, spec, trace,
                                            noise_bound=noise_bound, **kwargs))
        entry = _mean_run(clean_runs)
        if noise_bound:
            noisy = _mean_run(noisy_runs)
            entry["noise"] = noisy
            entry["noise_delta_pct"] = {
                m: _pct_change(entry[m], noisy[m]) for m in _SCALAR_METRICS}
        per_trace[name] = entry

    agg = {}
    for m in _SCALAR_METRICS:
        vals = [per_trace[name][m] for name in per_trace]
        agg[m] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    cert_keys = next(iter(per_trace.values()))["cert"].keys()
    agg["cert"] = {}
    for k in cert_keys:
        vals = [per_trace[name]["cert"][k] for name in per_trace]
        agg["cert"][k] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    if noise_bound:
        agg["noise_delta_pct"] = {}
        for m in _SCALAR_METRICS:
            vals = [per_trace[name]["noise_delta_pct"][m] for name in per_trace]
            agg["noise_delta_pct"][m] = {"mean": float(np.mean(vals)),
                                         "std": float(np.std(vals)),
                                         "worst_abs": float(np.max(np.abs(vals)))}

    summary = {
        "property": {"kind": spec.kind, "p": spec.p, "q": spec.q, "mu": spec.mu,
                     "epsilon": spec.epsilon, "k": spec.k,
                     "n_features": spec.n_features},
        "settings": {"min_rtt_ms": min_rtt_ms, "buffer_bdp": buffer_bdp,
                     "mtu": mtu, "monitor_interval_ms": monitor_interval_ms,
                     "n_components": n_components, "repeats": repeats,
                     "noise_bound": noise_bound, "seed": seed,
                     "zeta": zeta, "beta": beta},
        "traces": per_trace,
        "aggregate": agg,
    }

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "eval_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        _write_pertrace_csv(os.path.join(out_dir, "eval_pertrace.csv"), per_trace)
        cert_path = os.path.join(out_dir, "certificates.csv")
        first = True
        for name, reports in dump_reports:
            rows = _flatten_reports(reports)
            write_certificate_csv(cert_path, rows, extra_columns={"trace": name},
                                  append=not first)
            first = False
        _write_state_log(os.path.join(out_dir, "state_log.csv"), state_rows_all,
                         spec.input_dim)
    return summary


def _flatten_reports(step_reports) -> list[tuple[int, CertificateReport]]:
    rows = []
    for step, entry in enumerate(step_reports):
        if isinstance(entry, tuple):
            for rep in entry:
                rows.append((step, rep))
        else:
            rows.append((step, entry))
    return rows


def _write_pertrace_csv(path, per_trace: dict) -> None:
    cert_keys = sorted(next(iter(per_trace.values()))["cert"].keys())
    header = ["trace"] + list(_SCALAR_METRICS) + [f"cert_{k}" for k in cert_keys]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for name in sorted(per_trace):
            entry = per_trace[name]
            writer.writerow([name] + [repr(entry[m]) for m in _SCALAR_METRICS]
                            + [repr(entry["cert"][k]) for k in cert_keys])


def _write_state_log(path, rows: list, input_dim: int) -> None:
    header = STATE_LOG_PREFIX + [f"s{i}" for i in range(input_dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_state_log(path) -> list[dict]:
    """Read rows written by evaluate(); returns dicts with parsed arrays."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_state = len(header) - len(STATE_LOG_PREFIX)
        if n_state <= 0 or header[:len(STATE_LOG_PREFIX)] != STATE_LOG_PREFIX:
            raise ValueError(f"{path} is not a state log")
        for row in reader:
            out.append({
                "trace": row[0],
                "repeat": int(row[1]),
                "step": int(row[2]),
                "cwnd_prev": float(row[3]),
                "cwnd_tcp": float(row[4]),
                "state": np.array([float(v) for v in row[5:]]),
            })
    return out


def certify_state_log(net: Network, spec: PropertySpec, rows: list[dict],
                      n_components: int = 50) -> tuple[list, dict]:
    """Offline certification of a recorded state log.

    Returns (per-step reports, aggregate metrics) in the same shape that
    live evaluation produces.
    """
    if not rows:
        raise ValueError("state log is empty")
    if rows[0]["state"].size != spec.input_dim:
        raise ValueError(f"state log dimension {rows[0]['state'].size} does not "
                         f"match property input dimension {spec.input_dim}")
    step_reports = []
    for row in rows:
        if spec.kind == "performance":
            step_reports.append(certify_performance(
                net, spec, row["state"], row["cwnd_prev"], row["cwnd_tcp"],
                n_components))
        else:
            step_reports.append(certify_robustness(
                net, spec, row["state"], row["cwnd_tcp"], n_components))
    if spec.kind == "performance":
        metrics = _performance_cert_metrics(step_reports)
    else:
        metrics = _robustness_cert_metrics(step_reports)
    return step_reports, metrics
