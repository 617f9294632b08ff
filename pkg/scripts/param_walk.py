#!/usr/bin/env python3
"""Independent parameter-count walk over the nano detection architecture.

Recomputes every weight shape from the architecture table with flat
arithmetic, without importing the package. Used once to pin the golden
parameter count asserted by the test suite.

Usage: python3 scripts/param_walk.py [num_classes] [reg_max]
"""

import sys


def conv_params(in_ch, out_ch, k, batchnorm=True):
    params = out_ch * in_ch * k * k + out_ch  # weight + bias
    if batchnorm:
        params += 4 * out_ch  # gamma, beta, mean, var (eps is a constant)
    return params


def c2f_params(in_ch, out_ch, n):
    hidden = out_ch // 2
    total = conv_params(in_ch, 2 * hidden, 1)
    for _ in range(n):
        total += conv_params(hidden, hidden, 3)
        total += conv_params(hidden, hidden, 3)
    total += conv_params((2 + n) * hidden, out_ch, 1)
    return total


def detect_params(scale_channels, num_classes, reg_max):
    box_hidden = max(16, scale_channels[0] // 4, 4 * reg_max)
    cls_hidden = max(scale_channels[0], min(num_classes, 100))
    total = 0
    for c in scale_channels:
        total += conv_params(c, box_hidden, 3)
        total += conv_params(box_hidden, box_hidden, 3)
        total += conv_params(box_hidden, 4 * reg_max, 1, batchnorm=False)
        total += conv_params(c, cls_hidden, 3)
        total += conv_params(cls_hidden, cls_hidden, 3)
        total += conv_params(cls_hidden, num_classes, 1, batchnorm=False)
    return total


def total_params(num_classes, reg_max):
    total = 0
    # backbone
    total += conv_params(3, 16, 3)      # conv0
    total += conv_params(16, 32, 3)     # conv1
    total += c2f_params(32, 32, 1)      # c2f0
    total += conv_params(32, 64, 3)     # conv2
    total += c2f_params(64, 64, 2)      # c2f1
    total += conv_params(64, 128, 3)    # conv3
    total += c2f_params(128, 128, 2)    # c2f2
    total += conv_params(128, 256, 3)   # conv4
    total += c2f_params(256, 256, 1)    # c2f3
    # sppf: reduce, chain of pools (no params), project from 4 branches
    total += conv_params(256, 128, 1)
    total += conv_params(4 * 128, 256, 1)
    # neck
    total += c2f_params(256 + 128, 128, 1)  # c2f4 (upsampled sppf + c2f2)
    total += c2f_params(128 + 64, 64, 1)    # c2f5 (upsampled c2f4 + c2f1)
    total += conv_params(64, 64, 3)         # conv5
    total += c2f_params(64 + 128, 128, 1)   # c2f6 (conv5 + c2f4)
    total += conv_params(128, 128, 3)       # conv6
    total += c2f_params(128 + 256, 256, 1)  # c2f7 (conv6 + sppf)
    # head on (c2f5, c2f6, c2f7)
    total += detect_params((64, 128, 256), num_classes, reg_max)
    return total


if __name__ == "__main__":
    nc = int(sys.argv[1]) if len(sys.argv) > 1 else 2
    rm = int(sys.argv[2]) if len(sys.argv) > 2 else 16
    print(f"num_classes={nc} reg_max={rm}: {total_params(nc, rm)} parameters")
