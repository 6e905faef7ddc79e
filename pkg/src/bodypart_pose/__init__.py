"""Non-neural core of a bottom-up multi-person pose pipeline.

Ground-truth keypoint and body-part heatmaps, the focal L2 loss with its
gradient, greedy decoding of heatmaps into poses, and OKS evaluation.
"""

from .decoder import DecodeConfig, assemble, decode, decode_detailed, nms_peaks, score_part
from .encoder import EncoderConfig, HeatmapStack, build_pyramid, downsample_stack, encode_stack
from .loss import LossConfig, focal_l2, focal_l2_grad, total_loss
from .oks import OksConfig, evaluate, oks
from .skeleton import Pose, SkeletonSpec, Visibility, default_skeleton, map_to_image, validate_skeleton

__all__ = [
    "DecodeConfig", "assemble", "decode", "decode_detailed", "nms_peaks", "score_part",
    "EncoderConfig", "HeatmapStack", "build_pyramid", "downsample_stack", "encode_stack",
    "LossConfig", "focal_l2", "focal_l2_grad", "total_loss",
    "OksConfig", "evaluate", "oks",
    "Pose", "SkeletonSpec", "Visibility", "default_skeleton", "map_to_image", "validate_skeleton",
]
__version__ = "0.1.0"
