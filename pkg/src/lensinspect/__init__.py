"""Optical-lens defect inspection toolkit.

Anchor-free single-stage detector inference (NCHW primitives, network
graph, DFL decoding, NMS), detection-quality evaluation (IoU matching,
mAP, PR curves, confusion matrix), dataset preparation and bbox-aware
augmentation, plus a conveyor-stream simulator with per-stage latency
accounting.
"""

__version__ = "0.1.0"
