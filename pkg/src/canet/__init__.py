"""CANet: channel-extended encoder-decoder with axial attention for multi-structure kidney segmentation."""
from .voxcore import LabelMap, Rng, Volume, percentile, rng_normal, softmax_channels

__version__ = "0.1.0"
