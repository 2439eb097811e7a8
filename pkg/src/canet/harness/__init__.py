from .config import TrainConfig, load_configs, resolved
from .folds import FoldSplit, make_folds
from .phantom import PhantomConfig, gen_phantom
from .vvol import read_vvol, vvol_bytes, vvol_from_bytes, write_vvol

__all__ = [
    "FoldSplit", "PhantomConfig", "TrainConfig", "gen_phantom", "load_configs", "make_folds",
    "read_vvol", "resolved", "vvol_bytes", "vvol_from_bytes", "write_vvol",
]
