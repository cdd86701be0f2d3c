"""Privacy-preserving push-pull (PPSD) decentralized optimization over digraphs."""

from .analysis import fit_linear_rate, spectral_radius, step_size_advisor, theoretical_constants
from .engine import NetworkState, RunRecord, init_state, ppsd_step, pushpull_step, replay, run
from .objective import linear_regression, make_regression, make_rendezvous, rendezvous
from .privacy import (
    ShadowSpec,
    construct_shadow,
    eavesdropper_view,
    inference_attack,
    privacy_sweep,
    record_view,
    verify_eavesdropper,
    verify_indistinguishable,
)
from .schedule import IterationWeights, WeightHistory, init_weights_k0, validate, weights_k
from .topology import Digraph, five_agent_testbed, is_strongly_connected, random_strongly_connected, ring

__version__ = "0.1.0"
