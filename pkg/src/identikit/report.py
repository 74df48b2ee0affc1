"""Deterministic CSV / JSON / SVG writers and the output manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


class Outputs:
    """Collects files written into one output directory and their hashes."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def _record(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.root / name

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        path = self._record(name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        return path

    def text(self, name: str, content: str) -> Path:
        path = self._record(name)
        path.write_text(content)
        return path

    def json(self, name: str, obj) -> Path:
        return self.text(name, json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")

    def svg_lines(self, name: str, x: np.ndarray, series: Mapping[str, np.ndarray],
                  title: str = "", xlabel: str = "t",
                  bands: Mapping[str, tuple[np.ndarray, np.ndarray]] | None = None) -> Path:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        path = self._record(name)
        with matplotlib.rc_context({"svg.hashsalt": "identikit", "svg.fonttype": "none"}):
            fig, ax = plt.subplots(figsize=(6, 4))
            for label, y in series.items():
                line, = ax.plot(x, y, label=label)
                if bands and label in bands:
                    lo, hi = bands[label]
                    ax.fill_between(x, lo, hi, color=line.get_color(), alpha=0.2)
            ax.set_xlabel(xlabel)
            ax.set_title(title)
            ax.legend()
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
        return path

    def manifest(self) -> Path:
        entries = []
        for name in sorted(self.files):
            digest = hashlib.sha256((self.root / name).read_bytes()).hexdigest()
            entries.append({"file": name, "sha256": digest})
        path = self.root / "manifest.json"
        path.write_text(json.dumps({"files": entries}, indent=2, sort_keys=True) + "\n")
        return path
