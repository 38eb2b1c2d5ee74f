from .base import Dataset
from .loaders import (
    fetch,
    cifar10_files,
    load_cifar10_binary,
    load_cifar10_dir,
    load_dataset,
    load_mnist_dir,
    load_mnist_idx,
    mnist_files,
    save_dataset,
)
from .synthetic import SpiralParams, gen_blobs, gen_spiral, spiral_point, unscale_spiral
from .transforms import concat, random_relabel, split, subsample

__all__ = [
    "Dataset",
    "SpiralParams",
    "cifar10_files",
    "concat",
    "fetch",
    "gen_blobs",
    "gen_spiral",
    "load_cifar10_binary",
    "load_cifar10_dir",
    "load_dataset",
    "load_mnist_dir",
    "load_mnist_idx",
    "mnist_files",
    "random_relabel",
    "save_dataset",
    "spiral_point",
    "split",
    "subsample",
    "unscale_spiral",
]
