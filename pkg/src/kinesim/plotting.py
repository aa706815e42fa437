"""Figures for workspace runs, rendered off-screen next to the PLY/CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .workspace import manipulability_colors  # noqa: E402

def plot_workspace(clouds, path, title=None, max_points: int = 20000):
    """3-D scatter of each normalized cloud plus a w_norm histogram.

    Point colors use the same red-to-green mapping as the PLY export. Large
    clouds are thinned with a fixed stride so the figure stays light.
    """
    clouds = list(clouds)
    fig = plt.figure(figsize=(6 * len(clouds), 9))
    for k, cloud in enumerate(clouds):
        stride = max(1, len(cloud) // max_points)
        xyz = cloud.positions[::stride]
        rgb = manipulability_colors(cloud.w_norm)[::stride] / 255.0
        ax = fig.add_subplot(2, len(clouds), k + 1, projection="3d")
        ax.scatter(xyz[:, 0], xyz[:, 1], xyz[:, 2], c=rgb, s=1, depthshade=False)
        ax.set_title(f"{cloud.base_link} -> {cloud.tip_link} ({len(cloud)} pts)")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_zlabel("z [m]")
        hist = fig.add_subplot(2, len(clouds), len(clouds) + k + 1)
        hist.hist(cloud.w_norm, bins=50, color="0.4")
        hist.set_xlabel("normalized manipulability")
        hist.set_ylabel("samples")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
