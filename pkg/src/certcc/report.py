"""Run-directory reporting: one JSON summary, tidy CSVs, and figures.

The report is recomputable: FCC/FCS values found in the evaluation summary
are re-derived from the certificate dump and the comparison is embedded in
the output, so any mismatch between the dump and the reported metrics is
visible in the report itself.
"""

from __future__ import annotations

import csv
import json
import os
from collections import defaultdict

from .figures import render_eval_summary, render_noise_deltas, render_training_curves

__all__ = ["build_report", "audit_certificates", "read_train_log"]


def read_train_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def audit_certificates(cert_path) -> dict:
    """Recompute FCC/FCS per trace and case from the certificate dump."""
    per_step = defaultdict(lambda: defaultdict(dict))
    with open(cert_path, newline="") as fh:
        for row in csv.DictReader(fh):
            trace = row.get("trace", "")
            key = (row["case"], int(row["step"]))
            per_step[trace][key][int(row["component_index"])] = bool(int(row["certified"]))
    audit = {}
    for trace, steps in per_step.items():
        by_case = defaultdict(list)
        for (case, _step), comps in sorted(steps.items(), key=lambda kv: kv[0][1]):
            flags = [comps[i] for i in sorted(comps)]
            by_case[case].append(flags)
        entry = {}
        cases = sorted(by_case)
        for case, rows in by_case.items():
            fcc = sum(sum(r) / len(r) for r in rows) / len(rows)
            fcs = sum(all(r) for r in rows) / len(rows)
            entry[f"fcc_{case}"] = fcc
            entry[f"fcs_{case}"] = fcs
        if cases == ["large", "small"]:
            joint = [[a and b for a, b in zip(ra, rb)]
                     for ra, rb in zip(by_case["large"], by_case["small"])]
            entry["fcc_joint"] = sum(sum(r) / len(r) for r in joint) / len(joint)
            entry["fcs_joint"] = sum(all(r) for r in joint) / len(joint)
        audit[trace] = entry
    return audit


def _training_section(run_dir, artifacts) -> dict | None:
    log_path = os.path.join(run_dir, "train_log.csv")
    if not os.path.exists(log_path):
        return None
    rows = read_train_log(log_path)
    if not rows:
        return None
    artifacts["train_log"] = rows
    last = rows[-1]
    tail = rows[max(0, len(rows) - 200):]
    mean = lambda key: sum(float(r[key]) for r in tail) / len(tail)
    return {
        "epochs": len(rows),
        "final_epoch_rate": float(last["epoch_rate"]),
        "wallclock_s": float(last["wallclock"]),
        "tail_mean_reward_raw": mean("reward_raw"),
        "tail_mean_reward_verifier": mean("reward_verifier"),
        "tail_mean_reward_mixed": mean("reward_mixed"),
    }


def build_report(run_dir, out_dir=None) -> dict:
    """Assemble report.json plus plot-ready CSVs and PNG figures.

    Raises FileNotFoundError when the run directory holds no known logs.
    """
    out_dir = out_dir or run_dir
    os.makedirs(out_dir, exist_ok=True)
    artifacts: dict = {}
    report: dict = {"run_dir": str(run_dir)}

    training = _training_section(run_dir, artifacts)
    if training:
        report["training"] = training

    config_path = os.path.join(run_dir, "config.txt")
    if os.path.exists(config_path):
        with open(config_path) as fh:
            report["config"] = {
                k.strip(): v.strip()
                for k, v in (line.split("=", 1) for line in fh if "=" in line)}

    eval_path = os.path.join(run_dir, "eval_summary.json")
    if os.path.exists(eval_path):
        with open(eval_path) as fh:
            report["evaluation"] = json.load(fh)

    cert_path = os.path.join(run_dir, "certificates.csv")
    if os.path.exists(cert_path):
        report["certificate_audit"] = audit_certificates(cert_path)
        if "evaluation" in report:
            report["certificate_audit_matches"] = _audit_matches(
                report["certificate_audit"], report["evaluation"])

    if len(report) <= 1:
        raise FileNotFoundError(f"no run logs found under {run_dir}")

    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)

    if "train_log" in artifacts:
        _write_training_csv(os.path.join(out_dir, "training_curve.csv"),
                            artifacts["train_log"])
        render_training_curves(artifacts["train_log"],
                               os.path.join(out_dir, "training_curves.png"))
    if "evaluation" in report:
        render_eval_summary(report["evaluation"],
                            os.path.join(out_dir, "eval_summary.png"))
        if report["evaluation"]["settings"].get("noise_bound"):
            render_noise_deltas(report["evaluation"],
                                os.path.join(out_dir, "noise_deltas.png"))
    return report


def _audit_matches(audit: dict, evaluation: dict, tol: float = 1e-9) -> bool:
    """True iff every dumped trace's recomputed metrics equal the summary's.

    The dump holds the first repeat of the noise-free pass; without noise
    repeats are bit-identical, so the recomputed values must match.
    """
    for trace, metrics in audit.items():
        reported = evaluation["traces"].get(trace, {}).get("cert")
        if reported is None:
            return False
        for key, value in metrics.items():
            # robustness reports use bare fcc/fcs keys
            lookup = key.replace("_robustness", "") if key.endswith("_robustness") else key
            ref = reported.get(lookup)
            if ref is None or abs(ref - value) > tol:
                return False
    return True


def _write_training_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
