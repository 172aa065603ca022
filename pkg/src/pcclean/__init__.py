"""Point cloud outlier removal and denoising with graph-convolution patch networks."""
from .geometry import (BoundingBox, EmptyCloudError, Patch, PatchBatch, PointCloud, SpatialIndex,
                       bounding_box, build_spatial_index, extract_patch, extract_patches)
from .graph import NeighborGraph, edge_features, knn_graph
from .network import GraphConvVariant, Model, ModelConfig
from .detector import OutlierDecision, classify_outliers, remove_outliers
from .denoiser import apply_denoise, loss_alpha, loss_r, loss_s
from .data import ContaminationSpec, PairedCloud, contaminate, generate_shape
from .metrics import aupr, chamfer_distance, pr_curve
from .cloud_io import read_cloud, write_cloud
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
