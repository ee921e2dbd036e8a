"""Q-Q diagnostic figures written straight to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import InvalidArgumentError  # noqa: E402
from .study import QqSeries  # noqa: E402


def plot_qq(series: QqSeries, path, *, title: str | None = None) -> Path:
    """Draw estimate quantiles against reference quantiles with vertical CI bars.

    The output format follows the file suffix (SVG, PNG or PDF).  SVG output
    is byte-stable for identical input: the hash salt and date are pinned.
    """
    pts = series.points
    if pts.shape[0] == 0:
        raise InvalidArgumentError("cannot plot an empty Q-Q series")
    path = Path(path)
    ref, est, lo, hi = pts.T
    with plt.rc_context({"svg.hashsalt": "sipkit", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        try:
            span = [min(ref.min(), lo.min(), 0.0), max(ref.max(), hi.max(), 1.0)]
            ax.plot(span, span, color="0.5", lw=1, ls="--", label="y = x")
            crosses = series.crosses
            for mask, color, name in ((crosses, "tab:blue", "bar crosses"), (~crosses, "tab:red", "bar misses")):
                if mask.any():
                    # Percentile bars need not contain the estimate, so draw plain segments.
                    ax.vlines(ref[mask], lo[mask], hi[mask], color=color, lw=1.2)
                    ax.plot(ref[mask], est[mask], "o", ms=4, color=color, label=name)
            ax.set_xlabel("reference SIP quantile")
            ax.set_ylabel("estimated SIP quantile")
            ax.set_xlim(span)
            ax.set_ylim(span)
            ax.set_aspect("equal")
            ax.set_title(title if title is not None else (series.label or "Q-Q"))
            ax.legend(loc="upper left", fontsize="small")
            fig.tight_layout()
            meta = {"Date": None} if path.suffix.lower() in (".svg", ".pdf") else {}
            fig.savefig(path, metadata=meta)
        finally:
            plt.close(fig)
    return path
