"""Report figures (matplotlib, written straight to PNG files)."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .losses import TERMS  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=100, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_loss_curves(log, path):
    """Total loss plus each weighted-in term against iteration."""
    fig, ax = plt.subplots(figsize=(7, 4))
    if log.records:
        it = np.array([r["iteration"] for r in log.records])
        ax.semilogy(it, np.maximum([r["total"] for r in log.records], 1e-12), "k", lw=1.5,
                    label="total")
        for t in TERMS:
            vals = np.array([r[t] for r in log.records])
            if np.any(vals > 0):
                ax.semilogy(it, np.maximum(vals, 1e-12), lw=0.8, label=t)
        for ev in log.densify_events:
            ax.axvline(ev["iteration"], color="0.8", lw=0.5, zorder=0)
        ax.legend(fontsize=8, ncol=2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    return _save(fig, path)


def plot_range_comparison(pred, gt, valid, path, title="range image"):
    """Predicted depth, ground truth and absolute error side by side."""
    fig, axs = plt.subplots(3, 1, figsize=(9, 6), sharex=True)
    vmax = float(np.max(gt[valid])) if valid.any() else 1.0
    for ax, img, name in zip(axs[:2], (pred, np.where(valid, gt, 0.0)), ("rendered", "ground truth")):
        im = ax.imshow(img, aspect="auto", cmap="viridis", vmin=0, vmax=vmax)
        ax.set_ylabel(name)
    fig.colorbar(im, ax=axs[:2], label="range [m]")
    err = np.where(valid, np.abs(pred - gt), 0.0)
    im = axs[2].imshow(err, aspect="auto", cmap="magma")
    axs[2].set_ylabel("|error|")
    fig.colorbar(im, ax=axs[2], label="m")
    axs[0].set_title(title)
    return _save(fig, path)


def plot_images(pred, gt, path, title="camera"):
    fig, axs = plt.subplots(1, 3, figsize=(12, 3.5))
    axs[0].imshow(np.clip(pred, 0, 1))
    axs[0].set_title("rendered")
    axs[1].imshow(np.clip(gt, 0, 1))
    axs[1].set_title("ground truth")
    im = axs[2].imshow(np.abs(pred - gt).mean(axis=-1), cmap="magma")
    axs[2].set_title("mean |error|")
    fig.colorbar(im, ax=axs[2])
    for ax in axs:
        ax.set_axis_off()
    fig.suptitle(title)
    return _save(fig, path)


def plot_point_clouds(pred, gt, path, title="point clouds (top view)"):
    fig, ax = plt.subplots(figsize=(6, 6))
    if len(gt):
        ax.scatter(gt[:, 0], gt[:, 1], s=1, c="0.6", label="ground truth")
    if len(pred):
        ax.scatter(pred[:, 0], pred[:, 1], s=1, c="tab:red", label="rendered")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(markerscale=6)
    ax.set_title(title)
    return _save(fig, path)
