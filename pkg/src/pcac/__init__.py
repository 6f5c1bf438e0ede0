"""Lossless (and scalably lossy) multiscale point-cloud attribute codec."""

from .codec import (CodecModel, ModelCheckpoint, decode, decode_scalable,
                    encode, estimate_bits, measure_bpp, truncate_bitstream)
from .pc_io import PointCloud, partition_blocks, read_ply, voxelize, write_ply
from .sparse_nn import ModelConfig
from .tensor_core import SparseTensor, build_pyramid, build_sparse_tensor
from .trainer import TrainConfig, evaluate, train

__all__ = [
    "CodecModel", "ModelCheckpoint", "ModelConfig", "PointCloud",
    "SparseTensor", "TrainConfig", "build_pyramid", "build_sparse_tensor",
    "decode", "decode_scalable", "encode", "estimate_bits", "evaluate",
    "measure_bpp", "partition_blocks", "read_ply", "train",
    "truncate_bitstream", "voxelize", "write_ply",
]

__version__ = "0.1.0"
