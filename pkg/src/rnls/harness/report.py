"""Writing a ReportBundle to disk: report.json, data/*.csv, plots/*.svg, provenance.json."""

from __future__ import annotations

import csv
import json
import math
import platform
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import RNLSError
from .experiments import PlotSpec, ReportBundle, Table


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        # strict JSON has no inf/nan
        return x if math.isfinite(x) else repr(x)
    return x


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_table(path: Path, table: Table):
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(table.columns), lineterminator="\n")
        w.writeheader()
        for row in table.rows:
            w.writerow({k: _cell(v) for k, v in row.items()})


def _column(table: Table, name: str) -> np.ndarray:
    return np.array([float(r[name]) if r[name] != "" else np.nan for r in table.rows])


def _render(spec: PlotSpec, table: Table, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "rnls", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        x = _column(table, spec.x)
        for y in spec.ys:
            yy = _column(table, y)
            if spec.logy:
                yy = np.where(yy > 0, yy, np.nan)
            if spec.kind == "scatter":
                ax.scatter(x, yy, s=14, label=y)
            else:
                ax.plot(x, yy, label=y)
        for v in spec.vlines:
            ax.axvline(v, color="k", ls="--", lw=0.8)
        for h in spec.hlines:
            ax.axhline(h, color="k", ls=":", lw=0.8)
        if spec.logx:
            ax.set_xscale("log")
        if spec.logy:
            ax.set_yscale("log")
        ax.set_title(spec.title)
        ax.set_xlabel(spec.xlabel or spec.x)
        ax.set_ylabel(spec.ylabel)
        if len(spec.ys) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def provenance(bundle: ReportBundle) -> dict:
    import scipy

    return {
        "config": bundle.config.to_dict(),
        "code_version": __version__,
        "grid": bundle.grid,
        "ground_state_cache_keys": sorted(bundle.cache_keys),
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def emit_report(bundle: ReportBundle, out_dir) -> list[Path]:
    """Write the bundle. Timestamps live only in provenance.json."""
    out = Path(out_dir)
    paths: list[Path] = []
    current = out
    try:
        out.mkdir(parents=True, exist_ok=True)
        current = out / "report.json"
        current.write_text(_dump(bundle.report()))
        paths.append(current)
        if bundle.tables:
            (out / "data").mkdir(exist_ok=True)
            for name in sorted(bundle.tables):
                current = out / "data" / f"{name}.csv"
                _write_table(current, bundle.tables[name])
                paths.append(current)
        if bundle.plots:
            (out / "plots").mkdir(exist_ok=True)
            for name in sorted(bundle.plots):
                spec = bundle.plots[name]
                current = out / "plots" / f"{name}.svg"
                _render(spec, bundle.tables[spec.table], current)
                paths.append(current)
        current = out / "provenance.json"
        current.write_text(_dump(provenance(bundle)))
        paths.append(current)
    except OSError as exc:
        raise RNLSError(f"cannot write {current}: {exc}") from exc
    return paths
