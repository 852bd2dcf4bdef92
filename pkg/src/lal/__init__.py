"""Label adversarial learning for skeleton-to-pixel adjustable vessel segmentation."""
from .metrics import MetricRecord, compute_metrics, eval_against_gt, fd, ni, vc, vd, vdi, vlf
from .morphology import binarize, connected_components, skeletonize
from .network import ModelParams, NetworkConfig, build_unet_lal, forward
from .phantom import PhantomConfig, generate_dataset, generate_phantom
from .sweep import SweepResult, denoise, recommend_w, sweep, uncertainty_map
from .training import LabelPair, TrainConfig, bce, lal_loss, train

__version__ = "0.1.0"
