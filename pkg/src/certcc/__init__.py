"""certcc: certified training and evaluation of learned congestion controllers.

The package couples a box-domain abstract interpreter with a small
actor-critic learner and a deterministic bottleneck-link simulator. The
abstract interpreter turns worst-case property satisfaction into a smooth
reward signal that is mixed into the training objective, and the same
machinery certifies trained controllers at evaluation time.
"""

from .boxdomain import BoxState, Interval
from .certify import (CertificateReport, PropertySpec, aggregate_fcc_fcs,
                      certify_performance, certify_robustness, interval_distance)
from .network import Network, actor_network, critic_network, load_checkpoint, save_checkpoint
from .sim import CcEnv, CubicBackbone, Link, LinkConfig, Observation, apply_action, orca_reward
from .traces import Trace, generate_trace, load_trace, save_trace
from .training import TrainConfig, Transition, mixed_reward, train

__version__ = "0.1.0"

__all__ = [
    "BoxState", "Interval",
    "PropertySpec", "CertificateReport", "interval_distance",
    "certify_performance", "certify_robustness", "aggregate_fcc_fcs",
    "Network", "actor_network", "critic_network", "save_checkpoint", "load_checkpoint",
    "LinkConfig", "Observation", "Link", "CubicBackbone", "CcEnv",
    "apply_action", "orca_reward",
    "Trace", "generate_trace", "save_trace", "load_trace",
    "TrainConfig", "Transition", "mixed_reward", "train",
]
