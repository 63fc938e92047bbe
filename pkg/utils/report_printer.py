# utils/report_printer.py
import logging
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

# --- Rich Imports for terminal tables ---
try:
    from rich.console import Console
    from rich.table import Table
    from rich.text import Text

    RICH_AVAILABLE = True
except ImportError:
    RICH_AVAILABLE = False
    Console = None  # type: ignore
    Table = None  # type: ignore
    Text = None  # type: ignore
    logging.warning("ReportPrinter: 'rich' library not found. Reports will be printed as plain text.")
# --- End Rich Imports ---

from core.models import (CLASS_PAIRS, EvaluationReport, LandmarkEvaluation, Prediction, SaliencyTable,
                         SalientSelection, pair_key)
from core.pipeline_enums import ExpressionLabel, LbpVariant

logger = logging.getLogger(__name__)

TITLE_STYLE = "bold cyan"
HEADER_STYLE = "bold"
GOOD_STYLE = "bold green"
WARN_STYLE = "bold orange3"
ERROR_STYLE = "bold red"


class ReportPrinter:
    """
    Renders evaluation results on the terminal: rich tables when rich is
    installed, aligned plain text otherwise.
    """

    def __init__(self, stream=None, plain: bool = False):
        self._stream = stream or sys.stdout
        self._console: Optional[Console] = None
        if RICH_AVAILABLE and Console and not plain:
            self._console = Console(file=self._stream, highlight=False)
        logger.debug(f"ReportPrinter initialized (rich={'yes' if self._console else 'no'}).")

    # --- Primitives ---

    def message(self, text: str, style: str = "") -> None:
        if self._console and Text:
            self._console.print(Text(text, style=style))
        else:
            print(text, file=self._stream)

    def table(self, title: str, headers: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
        if self._console and Table:
            table = Table(title=title, title_style=TITLE_STYLE, header_style=HEADER_STYLE)
            for i, header in enumerate(headers):
                table.add_column(header, justify="left" if i == 0 else "right")
            for row in rows:
                table.add_row(*row)
            self._console.print(table)
            return
        widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
                  for i, h in enumerate(headers)]
        print(title, file=self._stream)
        print("  ".join(str(h).ljust(w) if i == 0 else str(h).rjust(w)
                        for i, (h, w) in enumerate(zip(headers, widths))), file=self._stream)
        for row in rows:
            print("  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)
                            for i, (c, w) in enumerate(zip(row, widths))), file=self._stream)

    # --- Reports ---

    def print_report(self, report: EvaluationReport) -> None:
        names = [label.display_name for label in ExpressionLabel.ordered()]
        rows = []
        for i, name in enumerate(names):
            rows.append([name] + [f"{v:.2f}" for v in report.confusion[i]] + [str(int(report.sample_counts[i]))])
        self.table(f"Confusion matrix (%) {report.label}".strip(), ["truth \\ predicted"] + names + ["n"], rows)

        per_class = [[name, f"{100 * report.precision[i]:.2f}", f"{100 * report.recall[i]:.2f}"]
                     for i, name in enumerate(names)]
        per_class.append(["macro", f"{100 * report.macro_precision:.2f}", f"{100 * report.macro_recall:.2f}"])
        self.table("Per-class metrics (%)", ["class", "precision", "recall"], per_class)
        self.message(f"Macro F-score {100 * report.macro_f:.2f}%  accuracy {100 * report.accuracy:.2f}%",
                     GOOD_STYLE)
        self.print_failures(report.failures)

    def print_failures(self, failures: Sequence[Tuple[str, str]]) -> None:
        if not failures:
            return
        self.message(f"{len(failures)} image(s) skipped:", WARN_STYLE)
        for path, reason in failures:
            self.message(f"  {path}: {reason}", WARN_STYLE)

    def print_reference(self, rows: Sequence[Tuple[str, float, float]], tag: str) -> None:
        self.table(f"Comparison with reference figures ({tag}, informational)",
                   ["metric", "measured %", "reference %"],
                   [[name, f"{measured:.2f}", f"{reference:.2f}"] for name, measured, reference in rows])

    def print_fused(self, reports: Dict[str, EvaluationReport]) -> None:
        for report in reports.values():
            self.print_report(report)
        self.table("Fused protocol summary", ["source", "accuracy %", "macro F %"],
                   [[source, f"{100 * r.accuracy:.2f}", f"{100 * r.macro_f:.2f}"] for source, r in reports.items()])

    # --- Saliency ---

    def print_saliency(self, table: SaliencyTable, selection: SalientSelection) -> None:
        headers = ["pair"] + [f"P{p}" for p in range(1, table.scores.shape[1] + 1)]
        rows = [[pair_key(pair)] + [f"{v:.2f}" for v in table.scores[i]] for i, pair in enumerate(table.pairs)]
        self.table(f"Saliency scores ({table.folds}-fold)", headers, rows)
        self.table(f"Top-{selection.k} salient patches", ["pair", "patches"],
                   [[pair_key(pair), " ".join(f"P{p}" for p in selection.for_pair(pair))] for pair in CLASS_PAIRS])

    def print_overlap(self, overlap: Dict[Tuple[int, int], int], mean: float) -> None:
        rows = [[pair_key(pair), f"{overlap[pair]}/4"] for pair in CLASS_PAIRS]
        self.table("Overlap with reference top-4 sets", ["pair", "overlap"], rows)
        self.message(f"Mean overlap {mean:.2f} of 4")

    # --- Sweeps ---

    def print_sweep(self, rows: Sequence[Tuple[int, LbpVariant, int, float]]) -> None:
        self.table("Macro F-score by resolution and binning", ["R", "variant", "dims", "macro F %"],
                   [[str(r), v.value, str(d), f"{100 * f:.2f}"] for r, v, d, f in rows])

    def print_topk(self, rows: Sequence[Tuple[int, int, float]]) -> None:
        self.table("Macro F-score by salient patch count", ["k", "dims", "macro F %"],
                   [[str(k), str(d), f"{100 * f:.2f}"] for k, d, f in rows])

    # --- Landmarks & prediction ---

    def print_landmark_evaluation(self, evaluation: LandmarkEvaluation) -> None:
        errors = np.asarray([e for _, e in evaluation.errors])
        if errors.size:
            self.message(f"{errors.size} image(s): mean error {errors.mean():.4f}, median {np.median(errors):.4f}, "
                         f"max {errors.max():.4f}")
        step = max(1, len(evaluation.thresholds) // 10)
        rows = [[f"{t:.2f}", f"{100 * c:.1f}"]
                for t, c in list(zip(evaluation.thresholds, evaluation.cdf))[::step]]
        self.table("Cumulative landmark error", ["e <=", "images %"], rows)
        self.message(f"Landmark time per image: mean {evaluation.mean_time_ms:.1f} ms, "
                     f"max {evaluation.max_time_ms:.1f} ms")
        self.print_failures(evaluation.failures)

    def print_landmarks(self, rows: List[Tuple[str, float, float, str]]) -> None:
        self.table("Landmarks", ["name", "x", "y", "source"],
                   [[name, f"{x:.2f}", f"{y:.2f}", source] for name, x, y, source in rows])

    def print_prediction(self, path: str, prediction: Prediction) -> None:
        if prediction.no_face:
            self.message(f"{path}: no face found", ERROR_STYLE)
            return
        self.message(f"{path}: {prediction.label.display_name}", GOOD_STYLE)
        self.table("Votes", ["class", "votes"],
                   [[label.display_name, str(prediction.votes[label.index])] for label in ExpressionLabel.ordered()])
