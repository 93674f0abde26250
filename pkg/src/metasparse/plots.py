"""Figure rendering for experiment outputs.

Phase figures follow the layout of the simulation plots: recovery
probability against the rescaled sample size C on the left, sup-norm
estimation error on the right, one series per (method, l, p) combination.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import PhaseRecord
from .realdata import RealRecord


def _series_label(method: str, l: int, p: int, vary_l: bool, vary_p: bool) -> str:
    parts = [method]
    if vary_l:
        parts.append(f"l={l}")
    if vary_p:
        parts.append(f"p={p}")
    return ", ".join(parts)


def phase_figure(records: Sequence[PhaseRecord], path) -> None:
    """Render recovery-probability and error curves to an image file."""
    if not records:
        raise ValueError("no records to plot")
    ls = {r.l for r in records}
    ps = {r.p for r in records}
    keys = sorted({(r.method, r.l, r.p) for r in records})

    fig, (ax_p, ax_e) = plt.subplots(1, 2, figsize=(10, 4))
    for method, l, p in keys:
        sel = [r for r in records if (r.method, r.l, r.p) == (method, l, p)]
        sel.sort(key=lambda r: r.C)
        C = np.array([r.C for r in sel])
        label = _series_label(method, l, p, len(ls) > 1, len(ps) > 1)
        ax_p.errorbar(
            C, [r.p_exact for r in sel], yerr=[r.p_std for r in sel],
            marker="o", capsize=3, label=label,
        )
        ax_e.errorbar(
            C, [r.err_mean for r in sel], yerr=[r.err_std for r in sel],
            marker="o", capsize=3, label=label,
        )
    ax_p.set_xlabel("C = T*l / (k log(p-k))")
    ax_p.set_ylabel("P(exact support recovery)")
    ax_p.set_ylim(-0.05, 1.05)
    ax_e.set_xlabel("C = T*l / (k log(p-k))")
    ax_e.set_ylabel("sup-norm error")
    ax_p.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def real_figure(records: Sequence[RealRecord], path) -> None:
    """Bar chart of novel-task MSE and estimated support size per method."""
    if not records:
        raise ValueError("no records to plot")
    methods = [r.method for r in records]
    x = np.arange(len(methods))

    fig, (ax_m, ax_s) = plt.subplots(1, 2, figsize=(10, 4))
    ax_m.bar(x, [r.mse_mean for r in records], yerr=[r.mse_std for r in records], capsize=4)
    ax_m.set_xticks(x, methods, rotation=20)
    ax_m.set_ylabel("novel-task MSE")
    ax_s.bar(
        x, [r.support_size_mean for r in records],
        yerr=[r.support_size_std for r in records], capsize=4,
    )
    ax_s.set_xticks(x, methods, rotation=20)
    ax_s.set_ylabel("estimated support size")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
