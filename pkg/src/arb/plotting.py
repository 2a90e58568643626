"""Figure rendering for run metrics CSVs.

Two figure kinds, chosen by sniffing each CSV's header: online-data-ratio
curves (with the buffer's overall online fraction as a grey reference line)
and normalized-score curves.  Output is SVG with a fixed hash salt and no
date metadata, so regenerating from identical CSVs is byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "arb", "figure.figsize": (6.4, 4.0)}


class MetricsFormatError(ValueError):
    """Raised when an input CSV is not one of the known metric schemas."""


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines:
        raise MetricsFormatError(f"{path}: empty file")
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise MetricsFormatError(f"{path}:{i}: expected {len(header)} columns")
    return header, rows


def _column(header, rows, name) -> list[float | None]:
    j = header.index(name)
    return [float(r[j]) if r[j] else None for r in rows]


def _label(path) -> str:
    parts = Path(path).parts
    return "/".join(parts[-3:-1]) if len(parts) >= 3 else Path(path).stem


def _save(fig, path) -> None:
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)


def plot(csv_paths, out_path) -> list[Path]:
    """Render the given metrics CSVs; returns the written image paths.

    Ratio CSVs and eval CSVs may be mixed; with both kinds present the
    output name gains ``_ratio``/``_score`` suffixes, otherwise ``out_path``
    is written as-is.
    """
    out_path = Path(out_path)
    ratio_inputs, eval_inputs = [], []
    for path in csv_paths:
        header, rows = _read_csv(path)
        if header[:3] == ["step", "minibatch_online_ratio", "buffer_online_fraction"]:
            ratio_inputs.append((path, header, rows))
        elif header == ["step", "mean_return", "normalized_score"]:
            eval_inputs.append((path, header, rows))
        else:
            raise MetricsFormatError(f"{path}: unrecognized metrics header {header}")

    written: list[Path] = []
    both = bool(ratio_inputs) and bool(eval_inputs)

    def target(kind: str) -> Path:
        if not both:
            return out_path
        return out_path.with_name(f"{out_path.stem}_{kind}{out_path.suffix or '.svg'}")

    with plt.rc_context(_RC):
        if ratio_inputs or not eval_inputs:
            fig, ax = plt.subplots()
            for i, (path, header, rows) in enumerate(ratio_inputs):
                steps = _column(header, rows, "step")
                ratio = _column(header, rows, "minibatch_online_ratio")
                pts = [(s, r) for s, r in zip(steps, ratio) if r is not None]
                if pts:
                    ax.plot(*zip(*pts), label=_label(path))
                if i == 0:
                    frac = _column(header, rows, "buffer_online_fraction")
                    ref = [(s, f) for s, f in zip(steps, frac) if f is not None]
                    if ref:
                        ax.plot(*zip(*ref), color="grey", linestyle="--",
                                label="buffer online fraction")
            ax.set_xlabel("environment steps")
            ax.set_ylabel("minibatch online data ratio")
            ax.set_ylim(-0.05, 1.05)
            if ax.get_legend_handles_labels()[0]:
                ax.legend(fontsize=8)
            out = target("ratio")
            _save(fig, out)
            written.append(out)
        if eval_inputs:
            fig, ax = plt.subplots()
            for path, header, rows in eval_inputs:
                steps = _column(header, rows, "step")
                score = _column(header, rows, "normalized_score")
                ax.plot(steps, score, label=_label(path))
            ax.set_xlabel("environment steps")
            ax.set_ylabel("normalized score")
            if ax.get_legend_handles_labels()[0]:
                ax.legend(fontsize=8)
            out = target("score")
            _save(fig, out)
            written.append(out)
    return written
