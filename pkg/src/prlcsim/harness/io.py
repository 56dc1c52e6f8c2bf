"""Series export/import, run manifests and atomic file writes."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .. import __version__
from ..simulator import IterationRecord, MetricsSeries

CSV_HEADER = ("t", "eta", "loss", "sq_grad_norm", "avg_cum_pulls", "avg_local_gap", "opt_gap")


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else format(x, ".17g")


def atomic_write(path, data: str | bytes) -> Path:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def series_to_csv(series: MetricsSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in series.records:
        w.writerow([r.t, _fmt(r.eta), _fmt(r.global_loss), _fmt(r.global_sq_grad_norm),
                    _fmt(r.avg_cum_pulls), _fmt(r.avg_local_gap), _fmt(r.optimality_gap)])
    return buf.getvalue()


def series_to_json(series: MetricsSeries) -> str:
    doc = {
        "config_digest": series.config_digest,
        "T": series.T,
        "record_every": series.record_every,
        "records": [asdict(r) for r in series.records],
    }
    return json.dumps(doc, indent=1) + "\n"


def read_series_csv(path) -> list[IterationRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        out = []
        for row in reader:
            t, eta, loss, g2, pulls, gap, opt = row
            out.append(IterationRecord(int(t), float(eta), float(loss), float(g2), float(pulls),
                                       float(gap), float(opt) if opt else None))
    return out


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config: dict
    config_digest: str
    code_version: str = __version__
    started_at: str = ""
    finished_at: str = ""
    outputs: list = field(default_factory=list)
    artifact_digests: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def now_iso() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _json_safe(summary: dict) -> dict:
    out = {}
    for k, v in summary.items():
        if hasattr(v, "tolist"):
            v = v.tolist()
        out[k] = v
    return out


def export_series(series: MetricsSeries, path, config: Optional[dict] = None,
                  fmt: str = "csv", started_at: str = "") -> tuple[Path, Path]:
    """Write the series and a ``<name>.manifest.json`` next to it."""
    path = Path(path)
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    body = series_to_csv(series) if fmt == "csv" else series_to_json(series)
    try:
        atomic_write(path, body)
        manifest = RunManifest(
            config=config or {},
            config_digest=series.config_digest,
            started_at=started_at or now_iso(),
            finished_at=now_iso(),
            outputs=[str(path)],
            artifact_digests={path.name: sha256_file(path)},
            summary=_json_safe({k: v for k, v in series.summary.items() if k != "asgd_staleness_trace"}),
        )
        mpath = path.with_name(path.stem + ".manifest.json")
        atomic_write(mpath, manifest.to_json())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path, mpath
