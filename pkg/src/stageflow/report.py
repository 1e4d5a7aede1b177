"""Delimited report files and the matplotlib figures rendered beside them."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .analysis import CostReport, GammaSweepRow, TimingReport  # noqa: E402


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return p


def save_loss_trace(trace: Sequence[float], csv_path, fig_path) -> None:
    write_csv(csv_path, ["step", "loss"], [(i, f"{v:.8g}") for i, v in enumerate(trace)])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(trace)), trace, lw=0.8)
    if len(trace) >= 20:
        window = max(1, len(trace) // 50)
        kernel = [1.0 / window] * window
        smooth = [
            sum(trace[max(0, i - window + 1) : i + 1]) / len(trace[max(0, i - window + 1) : i + 1])
            for i in range(len(trace))
        ]
        ax.plot(range(len(trace)), smooth, lw=1.5, label=f"mean over {window}")
        ax.legend()
        del kernel
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def save_cost_report(report: CostReport, csv_path, fig_path) -> None:
    header = [
        "stage", "dim", "L_k_hat", "L_k_decomposed", "residual_energy",
        "signal_energy", "se",
    ]
    rows = []
    for k in range(1, report.K + 1):
        rows.append(
            (
                k,
                report.dims[k - 1],
                f"{report.L_k_hat[k - 1]:.6g}",
                f"{report.L_k_decomposed[k - 1]:.6g}",
                f"{report.residual_energy[k - 1]:.6g}",
                f"{report.signal_energy[k - 1]:.6g}",
                f"{report.standard_errors[f'L_{k}']:.6g}",
            )
        )
    rows.append(
        ("single_stage", report.dims[-1], f"{report.L_A_hat:.6g}", "", "", "",
         f"{report.standard_errors['L_A']:.6g}")
    )
    rows.append(
        ("cascade_total", "", f"{report.L_B_hat:.6g}", "", "", "",
         f"{report.standard_errors['L_B']:.6g}")
    )
    rows.append(("noise_load_closed_A", "", f"{report.noise_load_closed_A:.6g}", "", "", "", ""))
    rows.append(("noise_load_closed_B", "", f"{report.noise_load_closed_B:.6g}", "", "", "", ""))
    rows.append(("noise_load_mc_A", "", f"{report.noise_load_mc_A:.6g}", "", "", "",
                 f"{report.standard_errors['noise_load_A']:.6g}"))
    rows.append(("noise_load_mc_B", "", f"{report.noise_load_mc_B:.6g}", "", "", "",
                 f"{report.standard_errors['noise_load_B']:.6g}"))
    write_csv(csv_path, header, rows)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    stages = list(range(1, report.K + 1))
    ax1.bar([s - 0.15 for s in stages], report.L_k_hat, width=0.3, label="direct")
    ax1.bar([s + 0.15 for s in stages], report.L_k_decomposed, width=0.3, label="decomposed")
    ax1.set_xlabel("stage")
    ax1.set_ylabel("transport cost")
    ax1.set_xticks(stages)
    ax1.legend()
    ax2.bar([0, 1], [report.L_A_hat, report.L_B_hat], width=0.5, color=["tab:red", "tab:green"])
    ax2.set_xticks([0, 1])
    ax2.set_xticklabels(["single stage", "cascade"])
    ax2.set_ylabel("total transport cost")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def save_timing_report(report: TimingReport, csv_path, fig_path) -> None:
    rows = [
        (f"stage_{k + 1}", report.resolutions[k], report.nfe[k],
         f"{report.per_stage_seconds[k]:.6g}")
        for k in range(len(report.per_stage_seconds))
    ]
    rows.append(("cascade_total", report.resolutions[-1], sum(report.nfe),
                 f"{report.total_seconds:.6g}"))
    rows.append(("single_stage", report.resolutions[-1], sum(report.nfe),
                 f"{report.single_stage_seconds:.6g}"))
    write_csv(csv_path, ["run", "resolution", "nfe", "median_seconds"], rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [f"stage {k + 1}\n({r}px)" for k, r in enumerate(report.resolutions)]
    ax.bar(labels, report.per_stage_seconds, color="tab:green")
    ax.bar(["single stage\n(matched NFE)"], [report.single_stage_seconds], color="tab:red")
    ax.axhline(report.total_seconds, ls="--", color="tab:green",
               label=f"cascade total ({report.total_seconds:.3f}s)")
    ax.set_ylabel("median seconds")
    ax.legend()
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def save_marginals(distances: Sequence[float], csv_path, fig_path,
                   baseline: Sequence[float] | None = None) -> None:
    header = ["stage", "sw_distance"] + (["baseline_sw_distance"] if baseline else [])
    rows = []
    for k, d in enumerate(distances, start=1):
        row = [k, f"{d:.6g}"]
        if baseline:
            row.append(f"{baseline[k - 1]:.6g}")
        rows.append(row)
    write_csv(csv_path, header, rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    stages = list(range(1, len(distances) + 1))
    ax.plot(stages, distances, "o-", label="trained")
    if baseline:
        ax.plot(stages, baseline, "s--", label="untrained baseline")
        ax.legend()
    ax.set_xlabel("stage")
    ax.set_ylabel("sliced-Wasserstein distance")
    ax.set_xticks(stages)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def save_gamma_sweep(rows: Sequence[GammaSweepRow], csv_path, fig_path) -> None:
    write_csv(
        csv_path,
        ["gamma", "sw_distance", "inference_seconds"],
        [(f"{r.gamma:g}", f"{r.sw_distance:.6g}", f"{r.inference_seconds:.6g}") for r in rows],
    )
    fig, ax1 = plt.subplots(figsize=(6, 4))
    gammas = [r.gamma for r in rows]
    ax1.plot(gammas, [r.sw_distance for r in rows], "o-", color="tab:blue")
    ax1.set_xlabel("noise decay factor")
    ax1.set_ylabel("sliced-Wasserstein distance", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(gammas, [r.inference_seconds for r in rows], "s--", color="tab:orange")
    ax2.set_ylabel("median inference seconds", color="tab:orange")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
