"""Video inpainting with learnable gated temporal shift modules, on a small numpy autograd engine."""
from .autograd import NonFiniteError, Parameter, Tensor, backward, no_grad, verification_mode
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .data import Batch, FrameSequence, SyntheticSceneSpec, denormalize, make_batch, normalize, synth_video
from .kernels import bilinear_resize, conv2d_per_frame, conv3d, gram_matrix, temporal_conv1d_depthwise
from .losses import (FeatureExtractor, LossWeights, d_hinge_loss, g_adv_loss, l1_loss, perceptual_loss,
                     style_loss, total_loss)
from .maskgen import MaskRatioError, MaskSpec, MaskVideo, apply_mask, generate_mask, ratio
from .netpbm import read_pbm, read_ppm, write_pbm, write_ppm
from .networks import (Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelBundle,
                       build_3dconv_variant, composite_output, param_count)
from .optim import Adam
from .tsm import (GatedLayer, LearnableShiftKernels, ShiftSpec, SpectralNormState, init_tsm_equivalent,
                  learnable_temporal_shift, spectral_normalize, temporal_shift_fixed)
from .train import TrainConfig, Trainer

__version__ = "0.1.0"
