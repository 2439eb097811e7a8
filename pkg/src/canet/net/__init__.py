from .attention import aac_backward, aac_forward, attention_flops, axial_attention, axial_attention_backward
from .model import Network, NetworkConfig, build, filter_schedule, param_count
from .ops import conv3d, conv3d_backward, instance_norm_act, instance_norm_act_backward, transposed_conv3d
from .checkpoint import load_checkpoint, save_checkpoint
