# output/plots.py
from collections import defaultdict
from typing import Dict, List, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from src.logger import log_error, log_success

# fixed ids and no timestamp in the SVG, so reruns give identical files
plt.rcParams["svg.hashsalt"] = "kolmogorov-fem"
_SVG_METADATA = {"Date": None}


def _save(fig, path: str) -> bool:
    try:
        fig.savefig(path, format="svg", metadata=_SVG_METADATA)
        log_success(f"Plot written to {path}")
        return True
    except (OSError, ValueError) as e:
        log_error(f"Failed to write plot {path}: {e}")
        return False
    finally:
        plt.close(fig)


def _series_by_degree(records: Sequence[Mapping]) -> Dict[tuple, List[Mapping]]:
    series = defaultdict(list)
    for rec in records:
        series[(rec["p"], rec["q"])].append(rec)
    return dict(series)


class ConvergencePlot:
    """Log-log error plots, one line per (p, q), with reference slopes h^p."""

    def __init__(self, title: str = ""):
        self.title = title

    def send(self, records: Sequence[Mapping], path: str, x_key: str = "h_max",
             y_key: str = "err_st") -> bool:
        if not records:
            log_error("ConvergencePlot: no records to plot")
            return False
        fig, ax = plt.subplots(figsize=(6.4, 4.8))
        for (p, q), rows in sorted(_series_by_degree(records).items()):
            xs = [float(r[x_key]) for r in rows]
            ys = [float(r[y_key]) for r in rows]
            ax.loglog(xs, ys, "o-", label=f"p={p}, q={q}")
            if x_key == "h_max" and len(xs) > 1:
                ref = [ys[-1] * (x / xs[-1]) ** p for x in xs]
                ax.loglog(xs, ref, "k:", linewidth=0.8)
        ax.set_xlabel("h" if x_key == "h_max" else "space-time dofs")
        ax.set_ylabel(y_key)
        if self.title:
            ax.set_title(self.title)
        ax.grid(True, which="both", linewidth=0.3)
        ax.legend()
        return _save(fig, path)


class DecayPlot:
    """Semilog plot of ||U(t_n^-)||_A with the theoretical envelopes."""

    def __init__(self, title: str = ""):
        self.title = title

    def send(self, curves: Sequence[Mapping], path: str) -> bool:
        """
        Each curve: {"label", "t", "norm", "envelope"} with optional
        "envelope_sharp".
        """
        if not curves:
            log_error("DecayPlot: no curves to plot")
            return False
        fig, ax = plt.subplots(figsize=(6.4, 4.8))
        for curve in curves:
            line, = ax.semilogy(curve["t"], curve["norm"], "-", label=curve["label"])
            ax.semilogy(curve["t"], curve["envelope"], "--", color=line.get_color(), linewidth=0.8)
            if curve.get("envelope_sharp") is not None:
                ax.semilogy(curve["t"], curve["envelope_sharp"], ":", color=line.get_color(), linewidth=0.8)
        ax.set_xlabel("t")
        ax.set_ylabel("||U(t)||_A")
        if self.title:
            ax.set_title(self.title)
        ax.grid(True, which="both", linewidth=0.3)
        ax.legend()
        return _save(fig, path)
