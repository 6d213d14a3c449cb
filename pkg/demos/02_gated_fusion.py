"""
Gated fusion of camera and LiDAR maps
=====================================

Each modality gets a spatial attention map from a 3x3 convolution and a
sigmoid. With all gate parameters at zero both maps are exactly 0.5, so the
joint map is half the channel concatenation. Shifting the camera bias moves
the balance towards the camera.
"""
import numpy as np

from cvfusion.fusion import GatedFusionParams, gated_fuse
from cvfusion.tensor import Tensor

rng = np.random.default_rng(0)
cam = Tensor(rng.normal(size=(4, 25, 44)))
lidar = Tensor(rng.normal(size=(8, 25, 44)))

# all-zero gates
zero = GatedFusionParams.zeros(4, 8)
out = gated_fuse(cam, lidar, zero)
half = 0.5 * np.concatenate([cam.data, lidar.data])
print("zero gates give 0.5 * concat exactly:", np.array_equal(out.joint.data, half))

# random gates, then push the camera bias up and down
p = GatedFusionParams.init(4, 8, rng, scale=0.3)
for b in (-3.0, 0.0, 3.0):
    p.cam_bias.data[:] = b
    f = gated_fuse(cam, lidar, p)
    print(f"camera bias {b:+.0f}: mean camera attention {f.cam_attention.data.mean():.3f}, "
          f"mean LiDAR attention {f.lidar_attention.data.mean():.3f}")
