"""Anchors, heads, losses, NMS and RoI pooling for the two detection stages."""
