"""Desk-scale lab for flow-based latent video editing.

Core pieces: seeded counter-based noise streams and a binary grid codec,
unified deterministic/stochastic samplers over one velocity-field
interface, closed-form Gaussian oracle models, a tiny trainable
full-attention denoiser, the delta-flow edit engine with attention-derived
masks and embedding reinforcement, two baseline editors, pixel-fidelity
metrics, and an analytical attention-memory cost model.
"""

__version__ = "0.1.0"

from .editing import (
    AvgPool2xCodec,
    ControlSpec,
    EditOptions,
    EditResult,
    EditState,
    IdentityCodec,
    control_term,
    controlled_step,
    delta_flow_oracle,
    edit_step,
    init_edit,
    run_edit,
)
from .grids import GridLedger, elementwise, reduce_norm
from .masks import ERSpec, GuidanceMask, binarize_mask, combine_masks, embedding_reinforce, extract_ica, mask_schedule
from .metrics import VideoPair, frame_consistency, masked_psnr, psnr
from .models import AnalyticGaussianModel, ConditionId
from .rng import NoiseStream, gaussian_draw
from .sampling import ConditionedModel, FlowSample, Trajectory, euler_step, sample_pf_ode, sample_sde
from .schedules import FLOW_MATCHING, VP_SDE, Schedule, forward_marginal, velocity_from_score

__all__ = [
    "__version__",
    "AnalyticGaussianModel",
    "AvgPool2xCodec",
    "ConditionId",
    "ConditionedModel",
    "ControlSpec",
    "EditOptions",
    "EditResult",
    "EditState",
    "ERSpec",
    "FLOW_MATCHING",
    "FlowSample",
    "GridLedger",
    "GuidanceMask",
    "IdentityCodec",
    "NoiseStream",
    "Schedule",
    "Trajectory",
    "VideoPair",
    "VP_SDE",
    "binarize_mask",
    "combine_masks",
    "control_term",
    "controlled_step",
    "delta_flow_oracle",
    "edit_step",
    "elementwise",
    "embedding_reinforce",
    "euler_step",
    "extract_ica",
    "forward_marginal",
    "frame_consistency",
    "gaussian_draw",
    "init_edit",
    "mask_schedule",
    "masked_psnr",
    "psnr",
    "reduce_norm",
    "run_edit",
    "sample_pf_ode",
    "sample_sde",
    "velocity_from_score",
]
