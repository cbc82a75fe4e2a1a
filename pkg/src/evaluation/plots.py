"""SVG plots of training logs and success/precision curves, read from the CSVs the CLI writes."""

import logging
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "weaktrack"
MARKERS = ["-", "--", "-.", ":"]

TRAINING_COLUMNS = ["iteration", "val_ss"]
CURVE_COLUMNS = ["threshold", "fraction"]


class MalformedCsvError(ValueError):
    """Raised when an input CSV cannot be plotted; carries the offending 1-based line number."""

    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def _header_line(path: str) -> int:
    """1-based line number of the CSV header, after the leading '#' metadata lines."""
    line = 1
    with open(path) as f:
        for text in f:
            if not text.startswith("#"):
                break
            line += 1
    return line


def read_csv_checked(path: str, required: list[str]) -> pd.DataFrame:
    """
    Reads an artifact CSV and checks it can be plotted.

    Args:
        path: CSV path; leading '#' lines are metadata.
        required: Columns that must be present and numeric.

    Returns:
        The parsed DataFrame.

    Raises:
        MalformedCsvError: Empty file, missing column or non-numeric value, with its line number.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"No such CSV file: {path}")
    header = _header_line(path)
    try:
        df = pd.read_csv(path, comment="#")
    except pd.errors.EmptyDataError:
        raise MalformedCsvError(path, header, "no header or data rows") from None
    except pd.errors.ParserError as e:
        raise MalformedCsvError(path, header, str(e)) from e
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise MalformedCsvError(path, header, f"missing column(s) {missing}")
    if df.empty:
        raise MalformedCsvError(path, header + 1, "no data rows")
    for column in required:
        values = pd.to_numeric(df[column], errors="coerce")
        bad = values.isna() & df[column].notna()
        if bad.any():
            row = int(bad.to_numpy().argmax())
            raise MalformedCsvError(path, header + 1 + row, f"non-numeric {column} '{df[column].iloc[row]}'")
        df[column] = values
    return df


def _label(path: str) -> str:
    parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
    return f"{parent}/{os.path.splitext(os.path.basename(path))[0]}"


def _save(fig, out_path: str, description: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None, "Description": description})
    plt.close(fig)
    logger.info(f"Saved plot to {out_path}")


def plot_training_logs(paths: list[str], out_path: str, labels: list[str] | None = None,
                       description: str = "") -> None:
    """Validation success score vs iteration, one line per training log (overlaid for comparisons)."""
    logs = [read_csv_checked(p, TRAINING_COLUMNS) for p in paths]
    labels = labels or [_label(p) for p in paths]

    fig, ax = plt.subplots()
    for k, (df, label) in enumerate(zip(logs, labels)):
        val = df.dropna(subset=["val_ss"])
        ax.plot(val["iteration"], val["val_ss"], MARKERS[k % len(MARKERS)], label=label)
    ax.set(xlabel="Iteration", ylabel="Validation success score", ylim=(0, 1), title="Adaptation")
    ax.grid(True)
    ax.legend(loc="lower right")
    fig.tight_layout()
    _save(fig, out_path, description)


def plot_curves(paths: list[str], kind: str, out_path: str, labels: list[str] | None = None,
                description: str = "") -> None:
    """Success (IoU threshold) or precision (center-distance threshold) curves with their AUC in the legend."""
    if kind not in ("success", "precision"):
        raise ValueError(f"Unknown curve kind '{kind}'")
    curves = [read_csv_checked(p, CURVE_COLUMNS) for p in paths]
    labels = labels or [_label(p) for p in paths]

    fig, ax = plt.subplots()
    for k, (df, label) in enumerate(zip(curves, labels)):
        auc = float(df["fraction"].mean())
        ax.plot(df["threshold"], df["fraction"], MARKERS[k % len(MARKERS)], label=f"{label} [{auc:.3f}]")
    if kind == "success":
        ax.set(xlabel="Overlap threshold", ylabel="Success rate", xlim=(0, 1), title="Success plots")
    else:
        ax.set(xlabel="Location error threshold (px)", ylabel="Precision", title="Precision plots")
    ax.set_ylim(0, 1)
    ax.grid(True)
    ax.legend(loc="lower left" if kind == "success" else "lower right")
    fig.tight_layout()
    _save(fig, out_path, description)
