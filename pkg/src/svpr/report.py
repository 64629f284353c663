"""Figures and summary tables for a run directory.

Reads whatever the pipeline has produced so far (``reports/eval-*.json``,
``reports/partition.json``, ``reports/sweep_nt.csv``, ``metrics.csv``) and
writes PNG figures under ``figures/`` plus ``reports/summary.json`` and
``reports/summary.csv``.  Missing inputs are skipped, not errors.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

GROUP_NAMES = ("D1", "D2", "D3", "D4")
# PNG metadata carries the matplotlib version by default; drop it so bytes depend only on data
PNG_META = {"Software": None}


def write_json(doc, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _save(fig, path: Path) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=PNG_META)
    plt.close(fig)
    return path.name


def recall_figure(evals: dict[str, dict], path: Path) -> str:
    names = sorted(evals)
    ns = evals[names[0]]["ns"]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(ns)
    for k, n in enumerate(ns):
        vals = [100 * evals[m]["recall"][str(n)] for m in names]
        ax.bar([i + k * width for i in range(len(names))], vals, width, label=f"R@{n}")
    ax.set_xticks([i + width * (len(ns) - 1) / 2 for i in range(len(names))], names)
    ax.set_ylabel("recall (%)")
    ax.set_ylim(0, 100)
    ax.legend(loc="lower right")
    ax.set_title("Validation recall")
    fig.tight_layout()
    return _save(fig, path)


def group_figure(part: dict, path: Path) -> str:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ratios = [100 * part["ratios"][g] for g in GROUP_NAMES]
    ax.bar(GROUP_NAMES, ratios, color=["tab:green", "tab:blue", "tab:orange", "tab:red"])
    for i, r in enumerate(ratios):
        ax.text(i, r + 1, f"{r:.1f}", ha="center")
    ax.set_ylabel("share of training pairs (%)")
    ax.set_title(f"Group partition, N_t={part['n_t']}")
    ax.set_ylim(0, 100)
    fig.tight_layout()
    return _save(fig, path)


def sweep_figure(rows: list[dict], path: Path) -> str:
    finite = [float(r["n_t"]) for r in rows if r["n_t"] != "inf"]
    far = 1.5 * max(finite, default=1.0)  # where N_t = inf is drawn
    n_t = [far if r["n_t"] == "inf" else float(r["n_t"]) for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax in (a1, a2):
        ax.set_xticks(n_t, [r["n_t"] for r in rows])
    for g in GROUP_NAMES:
        a1.plot(n_t, [100 * float(r[f"ratio_{g.lower()}"]) for r in rows], marker="o", label=g)
    s1 = [100 * sum(float(r[f"ratio_d{i}"]) for i in (1, 2, 3)) for r in rows]
    a1.plot(n_t, s1, marker="s", ls="--", color="k", label="S1")
    a1.set_xlabel("N_t")
    a1.set_ylabel("share of pairs (%)")
    a1.legend()
    a1.set_title("Group ratios")
    for n in ("r@1", "r@5", "r@10"):
        vals = [r[n] for r in rows]
        if all(v != "" for v in vals):
            a2.plot(n_t, [100 * float(v) for v in vals], marker="o", label=n.upper())
    a2.set_xlabel("N_t")
    a2.set_ylabel("recall (%)")
    a2.set_ylim(0, 100)
    a2.set_title("Student recall")
    if a2.lines:
        a2.legend()
    else:
        a2.text(0.5, 0.5, "no retrain runs", ha="center", va="center", transform=a2.transAxes)
    fig.tight_layout()
    return _save(fig, path)


def loss_figure(rows: list[dict], path: Path) -> str:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    stages = []
    for r in rows:
        key = (r["stage"], r["phase"])
        if key not in stages:
            stages.append(key)
    x0 = 0
    for stage, phase in stages:
        sel = [r for r in rows if (r["stage"], r["phase"]) == (stage, phase)]
        xs = range(x0, x0 + len(sel))
        ax.plot(xs, [float(r["triplet"]) for r in sel], marker=".", label=f"{stage}/{phase} triplet")
        if any(float(r["kd"]) for r in sel):
            ax.plot(xs, [float(r["kd"]) for r in sel], ls="--", label=f"{stage}/{phase} kd")
        x0 += len(sel)
    ax.set_xlabel("epoch (concatenated over stages)")
    ax.set_ylabel("mean loss (symlog)")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend(fontsize=7)
    ax.set_title("Training losses")
    fig.tight_layout()
    return _save(fig, path)


def summary_csv(evals: dict[str, dict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["model", "r@1", "r@5", "r@10", "n_queries"])
    for name in sorted(evals):
        rec = evals[name]["recall"]
        w.writerow([name] + [rec.get(str(n), "") for n in (1, 5, 10)] + [evals[name]["n_queries"]])
    return out.getvalue()


def build_report(run: Path) -> dict:
    """Render every available figure and table for ``run``; returns the summary document."""
    run = Path(run)
    reports, figs = run / "reports", run / "figures"
    evals = {p.stem[len("eval-"):]: json.loads(p.read_text()) for p in sorted(reports.glob("eval-*.json"))}
    summary: dict = {"figures": [], "recall": {}, "partition": None, "sweep_nt": None}
    if evals:
        summary["figures"].append(recall_figure(evals, figs / "recall.png"))
        summary["recall"] = {m: e["recall"] for m, e in evals.items()}
        (reports / "summary.csv").write_text(summary_csv(evals))
    part = reports / "partition.json"
    if part.exists():
        doc = json.loads(part.read_text())
        summary["figures"].append(group_figure(doc, figs / "groups.png"))
        summary["partition"] = {"counts": doc["counts"], "ratios": doc["ratios"], "n_t": doc["n_t"]}
    sweep = reports / "sweep_nt.csv"
    if sweep.exists():
        rows = read_csv(sweep)
        summary["figures"].append(sweep_figure(rows, figs / "sweep_nt.png"))
        summary["sweep_nt"] = rows
    metrics = run / "metrics.csv"
    if metrics.exists() and read_csv(metrics):
        summary["figures"].append(loss_figure(read_csv(metrics), figs / "losses.png"))
    write_json(summary, reports / "summary.json")
    return summary
