"""Matplotlib figures rendered alongside the bench CSV output."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def metric_curves(rows, out_path):
    """RSE and MSSIM versus sampling rate, one line per method/SNR."""
    series = {}
    for row in rows:
        key = (row["method"], row["snr"])
        series.setdefault(key, []).append(
            (float(row["tau"]), float(row["rse"]), float(row["mssim"])))
    fig, (ax_rse, ax_ssim) = plt.subplots(1, 2, figsize=(9, 3.6))
    for (method, snr), pts in sorted(series.items()):
        pts.sort()
        taus = [p[0] for p in pts]
        label = method if snr in ("", "clean") else f"{method} @ {snr} dB"
        ax_rse.plot(taus, [p[1] for p in pts], marker="o", label=label)
        ax_ssim.plot(taus, [p[2] for p in pts], marker="o", label=label)
    ax_rse.set_xlabel("sampling rate")
    ax_rse.set_ylabel("mean RSE")
    ax_ssim.set_xlabel("sampling rate")
    ax_ssim.set_ylabel("mean MSSIM")
    ax_rse.grid(alpha=0.3)
    ax_ssim.grid(alpha=0.3)
    ax_rse.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def runtime_bars(rows, out_path):
    """Mean wall time per method (seconds)."""
    stats = {}
    for row in rows:
        stats.setdefault(row["method"], []).append(float(row["seconds"]))
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    methods = sorted(stats)
    ax.bar(methods, [sum(stats[m]) / len(stats[m]) for m in methods])
    ax.set_ylabel("mean seconds per solve")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def convergence_curve(deltas, rhos, out_path):
    """Residual and penalty trajectories of one run."""
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    ax.semilogy(range(1, len(deltas) + 1), deltas, label="residual")
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual")
    ax.grid(alpha=0.3)
    twin = ax.twinx()
    twin.semilogy(range(1, len(rhos) + 1), rhos, color="tab:orange",
                  label="penalty")
    twin.set_ylabel("penalty")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
