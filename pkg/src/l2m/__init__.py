"""Lift single RGB-D views to 3D and synthesize labelled image pairs.

Submodules cover cameras (``camera``), lifting (``lift``), forward warping
and ground-truth labels (``synth_warp``), mesh rendering (``render``),
feature Gaussians (``gaussians``), pose evaluation (``evaluation``) and the
batch generator (``generate``, ``pipeline``, ``cli``).
"""

from .camera import Intrinsics, Pose, project, relative_pose, unproject
from .config import GenConfig
from .errors import L2MError
from .lift import DepthMap, PointCloud

__version__ = "0.1.0"

__all__ = ["DepthMap", "GenConfig", "Intrinsics", "L2MError", "PointCloud", "Pose", "project", "relative_pose",
           "unproject", "__version__"]
