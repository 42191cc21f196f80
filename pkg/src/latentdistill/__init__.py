"""Storage-budgeted distillation of latent datasets.

Per-class diverse selection with determinantal point processes, truncated
HOSVD compression of the selected stack, exact byte accounting, and a
two-stage (INT8 / FP16) quantizer for tensor archives.
"""

from .archive_io import (
    DistilledArchive,
    LatentDataset,
    TensorArchive,
    read_distilled,
    read_latent_dataset,
    read_tensor_archive,
    write_distilled,
    write_latent_dataset,
    write_tensor_archive,
)
from .dpp import greedy_map, median_heuristic_sigma, rbf_kernel, sample_kdpp, subset_log_prob
from .hosvd import hosvd_decompose, hosvd_reconstruct, storage_bytes, svd_compress
from .pipeline import DistillConfig, decode, distill, evaluate, sweep
from .quantize import QuantPolicy, archive_quantize, dequantize, quantize_affine
from .synth import SynthSpec, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "DistillConfig",
    "DistilledArchive",
    "LatentDataset",
    "QuantPolicy",
    "SynthSpec",
    "TensorArchive",
    "archive_quantize",
    "decode",
    "dequantize",
    "distill",
    "evaluate",
    "generate_synthetic",
    "greedy_map",
    "hosvd_decompose",
    "hosvd_reconstruct",
    "median_heuristic_sigma",
    "quantize_affine",
    "rbf_kernel",
    "read_distilled",
    "read_latent_dataset",
    "read_tensor_archive",
    "sample_kdpp",
    "storage_bytes",
    "subset_log_prob",
    "svd_compress",
    "sweep",
    "write_distilled",
    "write_latent_dataset",
    "write_tensor_archive",
]
