"""Cycle-consistent dual-diffusion domain translation.

Two denoising diffusion models, trained independently on a source and a
target domain, are bridged by deterministic DDIM integration through a
shared terminal-noise latent space: encode with the source model, decode
with the target model.  The package covers synthetic 2D/document-patch
data, training, the two-way ODE integrator, patch tiling for large
images, quality metrics, a two-party latent-exchange protocol, and a CLI.
"""

from .ddim_ode import (
    IntegrationPlan,
    LatentBatch,
    decode,
    ddim_step_forward,
    ddim_step_reverse,
    encode,
    load_latents,
    make_plan,
    s_ode,
    save_latents,
)
from .diffusion import (
    ArchConfig,
    DenoiserModel,
    NoiseSchedule,
    TrainConfig,
    TrainResult,
    denoise_loss,
    forward_sample,
    load_checkpoint,
    make_schedule,
    predict_eps,
    save_checkpoint,
    train,
    zero_model,
)
from .errors import (
    ConfigError,
    CycleDiffError,
    FormatError,
    NumericError,
    ProtocolError,
    RoleError,
    TrainingDivergedError,
)
from .metrics import cycle_l2, manifold_proximity, psnr, ssim
from .patches import PatchGrid, slide_window, stitch, sub_window
from .synth_data import (
    AffineWhitener,
    DegradeConfig,
    Domain,
    GeneratorConfig,
    GrayPatch,
    PointSet,
    StrokeConfig,
    degrade,
    make_dataset,
    render_strokes,
    whiten,
)
from .pipeline import (
    CycleReport,
    CycleStages,
    DomainPair,
    PartyRole,
    cycle_check,
    cycle_stages,
    party_decode,
    party_encode,
    train_pair,
    translate,
)

__version__ = "0.1.0"
