"""
Result Files
CSV/JSON tables with a key=value header, JSON summaries, SVG plots and the
one-line summary message printed at the end of a run.
"""

import json
import logging
import math
import os
import re
from datetime import datetime, timezone

import numpy as np
import pandas as pd
import plotly.graph_objects as go

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
FIGURE_UID = "squeezelab"


class PlotExportError(RuntimeError):
    """A requested SVG plot could not be rendered or written."""


def _plain(value):
    """Converts numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if value is pd.NA:
        return None
    return value


def _timestamp():
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def header_lines(header, timestamp=True):
    """
    `# key=value` lines written above a CSV table.

    Args:
        header (dict): run settings
        timestamp (bool): append a `# generated=` line

    Returns:
        list of str
    """
    lines = [f"# {key}={'' if value is None else value}" for key, value in header.items()]
    if timestamp:
        lines.append(f"# generated={_timestamp()}")
    return lines


def write_table(frame, path, header=None, fmt="csv", timestamp=True):
    """
    Writes one result table.

    CSV files carry the header as comment lines; JSON files hold
    {"config": header, "rows": [...]}.

    Returns:
        str: the path written
    """
    header = dict(header or {})
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            for line in header_lines(header, timestamp):
                f.write(line + "\n")
            frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    elif fmt == "json":
        payload = {"config": _plain(header), "rows": _plain(frame.to_dict(orient="records"))}
        if timestamp:
            payload["generated"] = _timestamp()
        with open(path, "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
    else:
        raise ValueError(f"unknown table format {fmt!r}")
    logger.debug(f"💾 Wrote {len(frame)} rows to {path}")
    return path


def write_summary(summary, path, header=None, timestamp=True):
    payload = {"config": _plain(dict(header or {})), "summary": _plain(summary)}
    if timestamp:
        payload["generated"] = _timestamp()
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    return path


def build_figure(plot):
    """
    Line chart of one plot spec from the experiment batches.

    Args:
        plot (dict): name, frame, x, y, title and an optional reference level
    """
    frame = plot["frame"]
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=frame[plot["x"]], y=frame[plot["y"]], mode="lines", name=plot["y"],
                             uid=plot["name"]))
    if plot.get("reference") is not None:
        fig.add_hline(y=plot["reference"], line_dash="dash", line_color="gray")
    fig.update_layout(
        title=plot.get("title", plot["name"]),
        xaxis_title=plot["x"],
        yaxis_title=plot["y"],
        template="plotly_white",
        width=800,
        height=500,
    )
    return fig


def write_plot_svg(plot, path, timestamp=True):
    """
    Renders a plot spec to SVG.

    The renderer's random layout uid is replaced by a fixed one, so equal
    plots give equal bytes.

    Returns:
        str: the path

    Raises:
        PlotExportError: when the renderer fails
    """
    fig = build_figure(plot)
    try:
        svg = fig.to_image(format="svg").decode("utf-8")
    except Exception as exc:
        raise PlotExportError(f"SVG export of {plot['name']} failed: {exc}") from exc
    svg = stable_svg_ids(svg)
    if timestamp:
        svg = f"<!-- generated={_timestamp()} -->\n" + svg
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        f.write(svg)
    return path


def stable_svg_ids(svg):
    """Rewrites the per-render layout uid (seen in the defs id) to FIGURE_UID."""
    match = re.search(r'id="defs-([0-9a-zA-Z]+)"', svg)
    if match is None:
        return svg
    uid = re.escape(match.group(1))
    return re.sub(rf"(defs-|clip|legend){uid}", rf"\g<1>{FIGURE_UID}", svg)


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def format_summary_message(command, summary):
    """
    Formats a run summary into a short readable message.
    """
    icon = "✅" if summary.get("passed") else "❌"
    msg = f"{icon} {command}: {'PASS' if summary.get('passed') else 'VIOLATION'}\n"
    for key, value in summary.items():
        if key in ("command", "passed"):
            continue
        if isinstance(value, dict):
            inner = ", ".join(f"{k}={_fmt(v)}" for k, v in value.items())
            msg += f"  {key}: {inner}\n"
        elif isinstance(value, list):
            msg += f"  {key}: {', '.join(_fmt(v) for v in value) or '-'}\n"
        else:
            msg += f"  {key}: {_fmt(value)}\n"
    return msg.rstrip("\n")
