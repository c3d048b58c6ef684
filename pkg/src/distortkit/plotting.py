"""Report figures written next to the CSV/JSON outputs of the CLI."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}
_SAVE_KW = {"metadata": {"Software": None}}


def _figure(width=4.5, height=None):
    golden = (np.sqrt(5) - 1.0) / 2.0
    height = height or width * golden
    return plt.subplots(figsize=(width, height))


def _save(fig, path):
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_dolly(rows, path):
    """Re-projection error and tau against subject distance."""
    tz = np.array([r.Tz for r in rows])
    err = np.array([r.error_px for r in rows])
    tau = np.array([r.tau for r in rows])
    with plt.rc_context(_STYLE):
        fig, ax = _figure()
        ax.plot(tz, err, "o-", color="C0", label="weak vs. perspective error")
        ax.axhline(1.0, color="0.6", ls="--", lw=0.8)
        ax.set_xlabel("distance $T_z$ (m)")
        ax.set_ylabel("mean error (px)")
        ax2 = ax.twinx()
        ax2.spines["right"].set_visible(True)
        ax2.plot(tz, tau, "s--", color="C1", label=r"$\tau$")
        ax2.set_ylabel(r"max distortion scale $\tau$")
        lines = ax.get_lines()[:1] + ax2.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], frameon=False, loc="upper right")
        _save(fig, path)


def plot_protocol_metrics(aggregate: dict, path):
    """Bar chart of MPJPE / PA-MPJPE / PVE per protocol bucket."""
    names = [k for k in aggregate if k != "all"]
    names.sort(key=int, reverse=True)
    names.append("all")
    keys = [k for k in ("mpjpe", "pa_mpjpe", "pve") if any(aggregate[n].get(k) is not None for n in names)]
    x = np.arange(len(names))
    width = 0.8 / max(len(keys), 1)
    with plt.rc_context(_STYLE):
        fig, ax = _figure(width=max(4.5, 0.9 * len(names) + 1.5))
        for i, key in enumerate(keys):
            vals = [aggregate[n].get(key) or 0.0 for n in names]
            ax.bar(x + (i - (len(keys) - 1) / 2) * width, vals, width, label=key.upper().replace("_", "-"))
        labels = []
        for n in names:
            thr = aggregate[n].get("tau_threshold")
            labels.append(n if thr is None else f"P{n}\n" + r"$\tau$" + f"={thr:g}")
        ax.set_xticks(x, labels)
        ax.set_ylabel("error (mm)")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_fit_summary(gt_tz, fit_tz, gt_f, fit_f, path):
    """Recovered vs. ground-truth distance and focal length."""
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.2))
        for ax, gt, est, label in ((axes[0], gt_tz, fit_tz, "$T_z$ (m)"), (axes[1], gt_f, fit_f, "$f$ (px)")):
            gt, est = np.asarray(gt, float), np.asarray(est, float)
            lim = [0.0, float(max(gt.max(initial=1.0), est.max(initial=1.0))) * 1.05]
            ax.plot(lim, lim, color="0.6", lw=0.8)
            ax.plot(gt, est, "o", alpha=0.7)
            ax.set_xlabel("ground truth " + label)
            ax.set_ylabel("recovered " + label)
        fig.tight_layout()
        _save(fig, path)


def plot_tau_histogram(taus, thresholds, path):
    with plt.rc_context(_STYLE):
        fig, ax = _figure()
        taus = np.asarray(taus, float)
        if taus.size:
            ax.hist(taus, bins=min(30, max(5, taus.size // 3)), color="C0", alpha=0.8)
        for thr in thresholds:
            ax.axvline(thr, color="C3", ls=":", lw=0.8)
        ax.set_xlabel(r"max distortion scale $\tau$")
        ax.set_ylabel("scenes")
        _save(fig, path)


def plot_distortion(buffers, path):
    """Distortion image with background masked."""
    with plt.rc_context(_STYLE):
        fig, ax = _figure(width=4.0, height=4.0)
        img = np.ma.masked_where(~buffers.covered, buffers.distortion)
        im = ax.imshow(img, cmap="viridis")
        ax.set_axis_off()
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="distortion")
        _save(fig, path)
