"""Cross-view geo-localisation toolkit built around a birds-eye-view POV branch.

The pipeline crops a limited-FOV view out of a street-level panorama, maps
image-plane features onto a metric BEV grid, compresses both branches into
unit-norm 512-d descriptors and retrieves aerial matches with an exact
cosine KD-tree.
"""
from .errors import (BevCvError, DegenerateBatch, DimensionMismatch, DuplicateId, DuplicateTensorName,
                     InvalidPartition, MalformedFile, MalformedImage, MissingTruth, ParseError,
                     ShapeMismatch, UnsupportedFormat, ValidationError)
from .imaging import CropSpec, ImageRaster, fov_crop, load_image, resize_bilinear
from .geometry import (BevGridSpec, CameraIntrinsics, DepthPartition, ResampleMap, build_depth_partition,
                       build_resample_map, column_to_azimuth, msd_transform)
from .loss import LossConfig, cosine_kernel, ntxent_loss, triplet_loss
from .index import EmbeddingIndex, RetrievalResult, brute_force_topk, build_index, query_topk
from .evaluation import (ComplexityReport, RecallReport, complexity_report, evaluate, offset_sweep,
                         recall_at_k, top_percent_k)
from .data import (EMBEDDING_VERSION, WEIGHTS_VERSION, ManifestEntry, parse_manifest, read_embeddings,
                   read_weights, write_embeddings, write_weights)
from .config import RunConfig, load_config
from .train import TrainerConfig, train_heads

__version__ = "0.1.0"
