"""Multi-instance peak extraction by connected component analysis.

The heatmap is binarized at a fraction of its maximum, 8-connected
components are ranked by their internal maximum, and the top components'
argmax positions become the instance coordinates. If too few components
appear, the threshold halves (at most 5 times) before padding with the
global argmax. All ties break toward the smaller (row, col) position.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)
MAX_THRESHOLD_DROPS = 5


def _component_peaks(heatmap: np.ndarray, mask: np.ndarray) -> list[tuple[float, int, int]]:
    """(max value, v, u) per 8-connected component of ``mask``."""
    labels, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    peaks = []
    for index in range(1, count + 1):
        component = labels == index
        max_val = heatmap[component].max()
        candidates = component & (heatmap == max_val)
        v, u = np.argwhere(candidates)[0]  # argwhere is row-major: smallest (v, u) first
        peaks.append((float(max_val), int(v), int(u)))
    return peaks


def extract_instances(heatmap: np.ndarray, num_instances: int,
                      threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray, bool]:
    """Top-``num_instances`` peak coordinates of a heatmap.

    Returns (coords (K, 2) float (u, v), peak values (K,), low_confidence).
    An all-zero map yields K copies of the map center, flagged low
    confidence. Output is invariant to positive scaling of the heatmap.
    """
    if num_instances < 1:
        raise ValueError("num_instances must be >= 1")
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if heatmap.ndim != 2:
        raise ValueError(f"heatmap must be 2-D, got shape {heatmap.shape}")
    h, w = heatmap.shape
    max_val = heatmap.max()
    if max_val <= 0.0:
        center = np.array([[w // 2, h // 2]] * num_instances, dtype=np.float64)
        return center, np.zeros(num_instances), True

    tau = threshold
    peaks = _component_peaks(heatmap, heatmap >= tau * max_val)
    drops = 0
    while len(peaks) < num_instances and drops < MAX_THRESHOLD_DROPS:
        tau *= 0.5
        drops += 1
        peaks = _component_peaks(heatmap, heatmap >= tau * max_val)

    peaks.sort(key=lambda p: (-p[0], p[1], p[2]))
    peaks = peaks[:num_instances]
    if len(peaks) < num_instances:
        gv, gu = np.argwhere(heatmap == max_val)[0]
        peaks.extend([(float(max_val), int(gv), int(gu))] * (num_instances - len(peaks)))

    coords = np.array([[u, v] for _, v, u in peaks], dtype=np.float64)
    values = np.array([p[0] for p in peaks])
    return coords, values, False
