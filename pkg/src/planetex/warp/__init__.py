"""Line-guided alignment, adaptive-mesh warping and sequential stitching."""
