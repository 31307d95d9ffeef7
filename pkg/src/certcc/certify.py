"""Per-step certificates, interval distances, and certified-satisfaction metrics.

A property pins selected input dimensions of the controller to intervals
(the precondition) and demands that a derived output quantity stays inside
a target interval (the postcondition). The precondition box is cut into N
equal components along the dimension of interest, each component is pushed
through the controller's abstract pass, and the resulting output interval
is compared against the target. The comparison yields both a boolean
certificate per component and a smooth distance in [0, 1] used as the
verifier reward.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .boxdomain import BoxState, Interval, split
from .network import Network

__all__ = [
    "PropertySpec",
    "ComponentResult",
    "CertificateReport",
    "interval_distance",
    "build_performance_precondition",
    "build_robustness_precondition",
    "certify_performance",
    "certify_robustness",
    "performance_step_reward",
    "aggregate_fcc_fcs",
    "cwnd_interval",
    "CERT_CSV_HEADER",
    "write_certificate_csv",
]

PERFORMANCE = "performance"
ROBUSTNESS = "robustness"


@dataclass(frozen=True)
class PropertySpec:
    """Property parameters plus the layout of the stacked observation state.

    The controller input is k stacked feature vectors of length n_features,
    oldest first. `feature` is the column index of the dimension of
    interest (the normalized-delay feature by default).
    """

    kind: str
    k: int
    n_features: int
    feature: int = 0
    p: float = 0.75
    q: float = 0.25
    mu: float = 0.05
    epsilon: float = 0.01

    def __post_init__(self) -> None:
        if self.kind not in (PERFORMANCE, ROBUSTNESS):
            raise ValueError(f"unknown property kind {self.kind!r}")
        if self.k < 1 or self.n_features < 1:
            raise ValueError("history length and feature count must be positive")
        if not 0 <= self.feature < self.n_features:
            raise ValueError("dimension of interest out of range")
        if self.kind == PERFORMANCE and not 0.0 <= self.q < self.p <= 1.0:
            raise ValueError(f"need 0 <= q < p <= 1, got p={self.p}, q={self.q}")
        # mu = 0 degenerates to a point precondition (certifies trivially)
        if self.kind == ROBUSTNESS and (self.mu < 0.0 or self.epsilon <= 0.0):
            raise ValueError("robustness needs mu >= 0 and epsilon > 0")

    @property
    def input_dim(self) -> int:
        return self.k * self.n_features

    def interest_dims(self) -> np.ndarray:
        """Flat indices of the dimension of interest at every history step."""
        return np.arange(self.k) * self.n_features + self.feature

    @property
    def latest_interest_dim(self) -> int:
        """Flat index of the dimension of interest at the newest history step."""
        return (self.k - 1) * self.n_features + self.feature

    @classmethod
    def performance(cls, k: int, n_features: int, p: float = 0.75, q: float = 0.25,
                    feature: int = 0) -> "PropertySpec":
        return cls(kind=PERFORMANCE, k=k, n_features=n_features, feature=feature, p=p, q=q)

    @classmethod
    def robustness(cls, k: int, n_features: int, mu: float = 0.05, epsilon: float = 0.01,
                   feature: int = 0) -> "PropertySpec":
        return cls(kind=ROBUSTNESS, k=k, n_features=n_features, feature=feature,
                   mu=mu, epsilon=epsilon)


@dataclass(frozen=True)
class ComponentResult:
    output: Interval
    target: Interval
    distance: float
    certified: bool


@dataclass(frozen=True)
class CertificateReport:
    """Certificate outcome of one property case at one step."""

    case: str
    components: tuple[ComponentResult, ...] = field(default_factory=tuple)

    @property
    def fcc_step(self) -> float:
        return sum(c.certified for c in self.components) / len(self.components)

    @property
    def fully_certified(self) -> bool:
        return all(c.certified for c in self.components)

    @property
    def r_verifier(self) -> float:
        return sum(c.distance for c in self.components) / len(self.components)


def interval_distance(target: Interval, out: Interval) -> float:
    """Distance in [0, 1] between an output interval and its target.

    0 when disjoint, 1 when the output is contained in the target, and
    otherwise the fraction of the output's volume that overlaps the target.
    A zero-width output never reaches the ratio branch: it is either inside
    the target (1) or outside (0).
    """
    if target.lo > out.hi or target.hi < out.lo:
        return 0.0
    if target.lo <= out.lo and out.hi <= target.hi:
        return 1.0
    overlap = min(target.hi, out.hi) - max(target.lo, out.lo)
    return overlap / out.width


def _one_sided_target(out: Interval, sign: str) -> Interval:
    """Clip a one-sided target ((-inf,0] or [0,inf)) to the output's own bound.

    This keeps distance volumes finite and makes d the fraction of the
    output interval lying on the compliant side.
    """
    if sign == "le":
        return Interval(min(out.lo, 0.0), 0.0)
    if sign == "ge":
        return Interval(0.0, max(out.hi, 0.0))
    raise ValueError(f"unknown target side {sign!r}")


def cwnd_interval(action: Interval, cwnd_tcp: float) -> Interval:
    """Lift the window modulation 2^(2a) * cwnd_tcp over an action interval.

    The map is strictly increasing in a, so endpoint images are exact.
    """
    if cwnd_tcp <= 0:
        raise ValueError("cwnd_tcp must be positive")
    return Interval(np.exp2(2.0 * action.lo) * cwnd_tcp,
                    np.exp2(2.0 * action.hi) * cwnd_tcp)


def _point_box(state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center = np.asarray(state, dtype=np.float64).reshape(-1).copy()
    return center, np.zeros_like(center)


def build_performance_precondition(spec: PropertySpec, observed_state: np.ndarray,
                                   case: str) -> BoxState:
    """Observed state with the delay dims replaced by [p,1] or [0,q] at all k steps."""
    center, dev = _point_box(observed_state)
    if center.size != spec.input_dim:
        raise ValueError(f"state has dimension {center.size}, expected {spec.input_dim}")
    if case == "large":
        lo, hi = spec.p, 1.0
    elif case == "small":
        lo, hi = 0.0, spec.q
    else:
        raise ValueError(f"unknown performance case {case!r}")
    dims = spec.interest_dims()
    center[dims] = 0.5 * (lo + hi)
    dev[dims] = 0.5 * (hi - lo)
    return BoxState(center=center, deviation=dev)


def build_robustness_precondition(spec: PropertySpec, observed_state: np.ndarray) -> BoxState:
    """Observed state with multiplicative noise bounds on the perturbed dims."""
    center, dev = _point_box(observed_state)
    if center.size != spec.input_dim:
        raise ValueError(f"state has dimension {center.size}, expected {spec.input_dim}")
    dims = spec.interest_dims()
    v = center[dims]
    lo = np.minimum(v * (1.0 - spec.mu), v * (1.0 + spec.mu))
    hi = np.maximum(v * (1.0 - spec.mu), v * (1.0 + spec.mu))
    center[dims] = 0.5 * (lo + hi)
    dev[dims] = 0.5 * (hi - lo)
    return BoxState(center=center, deviation=dev)


def _certify_case(net: Network, box: BoxState, split_dim: int, n_components: int,
                  case: str, cwnd_prev: float, cwnd_tcp: float, sign: str) -> CertificateReport:
    components = []
    for piece in split(box, split_dim, n_components):
        action = net.forward_abstract(piece)
        delta = cwnd_interval(action, cwnd_tcp).shift(-cwnd_prev)
        target = _one_sided_target(delta, sign)
        d = interval_distance(target, delta)
        certified = (delta.hi <= 0.0) if sign == "le" else (delta.lo >= 0.0)
        components.append(ComponentResult(output=delta, target=target,
                                          distance=d, certified=certified))
    return CertificateReport(case=case, components=tuple(components))


def certify_performance(net: Network, spec: PropertySpec, observed_state: np.ndarray,
                        cwnd_prev: float, cwnd_tcp: float,
                        n_components: int) -> tuple[CertificateReport, CertificateReport]:
    """Certificates for the large-delay (no increase) and small-delay (no
    decrease) cases of the performance property.

    The derived output per component is delta_cwnd = 2^(2a) * cwnd_tcp -
    cwnd_prev; the large case demands delta <= 0 and the small case
    delta >= 0, boundary inclusive.
    """
    if spec.kind != PERFORMANCE:
        raise ValueError("property is not a performance property")
    if cwnd_prev <= 0 or cwnd_tcp <= 0:
        raise ValueError("cwnd_prev and cwnd_tcp must be positive")
    if n_components < 1:
        raise ValueError("component count must be >= 1")
    dim = spec.latest_interest_dim
    large_box = build_performance_precondition(spec, observed_state, "large")
    small_box = build_performance_precondition(spec, observed_state, "small")
    large = _certify_case(net, large_box, dim, n_components, "large",
                          cwnd_prev, cwnd_tcp, "le")
    small = _certify_case(net, small_box, dim, n_components, "small",
                          cwnd_prev, cwnd_tcp, "ge")
    return large, small


def performance_step_reward(large: CertificateReport, small: CertificateReport) -> float:
    """Two-constraint verifier reward: the mean of the two case distances."""
    return 0.5 * (large.r_verifier + small.r_verifier)


def certify_robustness(net: Network, spec: PropertySpec, observed_state: np.ndarray,
                       cwnd_tcp: float, n_components: int) -> CertificateReport:
    """Certificate that bounded relative input noise keeps the relative
    window change within epsilon.

    The derived output per component is (2^(2a#) * cwnd_tcp - cwnd_i) /
    cwnd_i where cwnd_i comes from the unperturbed observed state; the
    target is [-epsilon, epsilon].
    """
    if spec.kind != ROBUSTNESS:
        raise ValueError("property is not a robustness property")
    if n_components < 1:
        raise ValueError("component count must be >= 1")
    if cwnd_tcp <= 0:
        raise ValueError("cwnd_tcp must be positive")
    state = np.asarray(observed_state, dtype=np.float64).reshape(-1)
    cwnd_i = np.exp2(2.0 * net.forward(state)) * cwnd_tcp
    if cwnd_i == 0:
        raise ValueError("unperturbed cwnd is zero; cannot normalize the change")
    box = build_robustness_precondition(spec, state)
    target = Interval(-spec.epsilon, spec.epsilon)
    components = []
    for piece in split(box, spec.latest_interest_dim, n_components):
        action = net.forward_abstract(piece)
        cw = cwnd_interval(action, cwnd_tcp)
        change = Interval((cw.lo - cwnd_i) / cwnd_i, (cw.hi - cwnd_i) / cwnd_i)
        d = interval_distance(target, change)
        components.append(ComponentResult(output=change, target=target,
                                          distance=d, certified=target.encloses(change)))
    return CertificateReport(case=ROBUSTNESS, components=tuple(components))


def aggregate_fcc_fcs(steps: Sequence[CertificateReport]) -> tuple[float, float]:
    """FCC = mean per-step certified fraction; FCS = fraction of fully
    certified steps."""
    if len(steps) == 0:
        raise ValueError("no certificate reports to aggregate")
    fcc = sum(r.fcc_step for r in steps) / len(steps)
    fcs = sum(r.fully_certified for r in steps) / len(steps)
    return fcc, fcs


CERT_CSV_HEADER = ["step", "case", "component_index", "out_lo", "out_hi",
                   "y_lo", "y_hi", "distance", "certified"]


def write_certificate_csv(path, step_reports: Iterable[tuple[int, CertificateReport]],
                          extra_columns: dict[str, object] | None = None,
                          append: bool = False) -> None:
    """Dump one row per (step, case, component).

    `extra_columns` prepends constant context columns (e.g. trace name)
    to every row.
    """
    extra = extra_columns or {}
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if not append:
            writer.writerow(list(extra.keys()) + CERT_CSV_HEADER)
        for step, report in step_reports:
            for idx, comp in enumerate(report.components):
                writer.writerow(list(extra.values()) + [
                    step, report.case, idx,
                    repr(comp.output.lo), repr(comp.output.hi),
                    repr(comp.target.lo), repr(comp.target.hi),
                    repr(comp.distance), int(comp.certified),
                ])
