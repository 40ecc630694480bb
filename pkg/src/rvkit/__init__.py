"""LiDAR range-view perception toolkit.

Range-image projection, centric label assignment, view-adaptive box
regression, detection post-processing, panoptic clustering, evaluation
metrics, and a synthetic simulator used as the verification substrate.
"""

__version__ = "0.1.0"

from .geom import Box3D, bev_iou, box_corners, iou_3d, point_in_box  # noqa: F401
from .rangeimage import PointCloud, RangeImage, SensorSpec, build_range_image  # noqa: F401
