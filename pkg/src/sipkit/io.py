"""Cohort ingestion, config files, and table/manifest emission."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .datagen import SimStudyConfig, builtin_configs
from .errors import CohortFormatError, InvalidArgumentError
from .glm import Dataset
from .study import QqSeries, StudySummaryRow

OUTPUT_DIR_ENV = "SIPKIT_OUTPUT_DIR"
DECIMALS = 5

STUDY_COLUMNS = (
    "label", "covariate", "true_value", "mean", "true_sd",
    "resampling_sd", "coverage", "mean_rank", "beta",
)
COHORT_COLUMNS = ("label", "mean", "true_sd", "resampling_sd", "mean_rank", "beta", "covariate")
QQ_COLUMNS = ("reference_quantile", "estimate_quantile", "ci_lower", "ci_upper", "covariate", "crosses")


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV, "sipkit-output"))


def load_cohort(path, treatment_column: str, id_column: str | None = None) -> Dataset:
    """Read a header-first CSV; every column except treatment (and ID) is a covariate."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise CohortFormatError(f"cannot open cohort file {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise CohortFormatError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        for col in [treatment_column] + ([id_column] if id_column else []):
            if col not in header:
                raise CohortFormatError(f"{path}: column {col!r} not in header {header}")
        t_idx = header.index(treatment_column)
        id_idx = header.index(id_column) if id_column else None
        cov_idx = [i for i in range(len(header)) if i not in (t_idx, id_idx)]
        z, X, ids = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CohortFormatError(
                    f"{path}:{line_no}: expected {len(header)} fields, found {len(row)}"
                )
            values = []
            for i in cov_idx + [t_idx]:
                cell = row[i].strip()
                if not cell:
                    raise CohortFormatError(f"{path}:{line_no}: missing value in column {header[i]!r}")
                try:
                    v = float(cell)
                except ValueError:
                    raise CohortFormatError(
                        f"{path}:{line_no}: non-numeric value {cell!r} in column {header[i]!r}"
                    ) from None
                if not math.isfinite(v):
                    raise CohortFormatError(f"{path}:{line_no}: non-finite value in column {header[i]!r}")
                values.append(v)
            if values[-1] not in (0.0, 1.0):
                raise CohortFormatError(
                    f"{path}:{line_no}: treatment {row[t_idx].strip()!r} is not binary (0/1)"
                )
            z.append(int(values[-1]))
            X.append(values[:-1])
            if id_idx is not None:
                ids.append(row[id_idx].strip())
    if not z:
        raise CohortFormatError(f"{path}: cohort has no data rows")
    if not cov_idx:
        raise CohortFormatError(f"{path}: no covariate columns")
    try:
        return Dataset(
            np.array(z), np.array(X, dtype=float).reshape(len(z), len(cov_idx)),
            tuple(header[i] for i in cov_idx), ids if id_idx is not None else None,
        )
    except InvalidArgumentError as exc:
        raise CohortFormatError(f"{path}: {exc}") from None


def resolve_study(name_or_path: str) -> SimStudyConfig:
    """A built-in study name or a JSON config file path."""
    configs = builtin_configs()
    if name_or_path in configs:
        return configs[name_or_path]
    path = Path(name_or_path)
    if not path.is_file():
        raise InvalidArgumentError(f"{name_or_path!r} is neither a built-in study {sorted(configs)} nor a file")
    with path.open() as fh:
        data = json.load(fh)
    return SimStudyConfig.from_dict(data.get("study", data))


def save_config(config: SimStudyConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


def fmt(value, decimals: int = DECIMALS) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, str):
        return value
    v = float(value)
    if math.isnan(v):
        return ""
    return f"{v:.{decimals}f}"


def row_dict(row: StudySummaryRow) -> dict:
    return {
        "label": row.label,
        "covariate": row.covariate,
        "true_value": row.true_value,
        "mean": row.mean,
        "true_sd": row.true_sd,
        "resampling_sd": row.resampling_sd,
        "coverage": row.coverage,
        "mean_rank": row.mean_rank,
        "beta": row.beta,
    }


def write_csv(path, columns: Sequence[str], records: Iterable[dict]) -> Path:
    """RFC-4180 CSV with every number fixed at 5 decimals; NaN becomes an empty cell."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(columns)
            for rec in records:
                w.writerow([fmt(rec.get(c)) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def text_table(title: str, columns: Sequence[str], records: Sequence[dict]) -> str:
    cells = [[fmt(r.get(c)) for c in columns] for r in records]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    line = "  ".join("-" * w for w in widths)
    out = [title, line, "  ".join(c.rjust(w) for c, w in zip(columns, widths)), line]
    out += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    out.append(line)
    return "\n".join(out) + "\n"


def qq_records(series: QqSeries) -> list[dict]:
    if series.points.shape[0] == 0:
        raise InvalidArgumentError("Q-Q series is empty")
    names = series.names or ("",) * series.points.shape[0]
    return [
        {
            "reference_quantile": p[0],
            "estimate_quantile": p[1],
            "ci_lower": p[2],
            "ci_upper": p[3],
            "covariate": name,
            "crosses": bool(c),
        }
        for p, name, c in zip(series.points, names, series.crosses)
    ]


def config_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    command: str
    seed: int | None
    config_digest: str
    resolved_config: str
    tool_version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: list[str] = field(default_factory=list)


class RunWriter:
    """Collects a run's output files, then writes the resolved config and manifest."""

    def __init__(self, out_dir, command: str, seed: int | None, resolved: dict):
        self.out_dir = Path(out_dir)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.out_dir}: {exc}") from exc
        self.command = command
        self.seed = seed
        self.resolved = resolved
        self.outputs: list[Path] = []
        self.started = _now()

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.outputs.append(p)
        return p

    def finish(self) -> RunManifest:
        cfg_path = self.out_dir / f"{self.command}_resolved_config.json"
        payload = (json.dumps(self.resolved, indent=2, sort_keys=True) + "\n").encode()
        cfg_path.write_bytes(payload)
        manifest = RunManifest(
            command=self.command,
            seed=self.seed,
            config_digest=config_digest(payload),
            resolved_config=cfg_path.name,
            started=self.started,
            finished=_now(),
            outputs=[p.name for p in self.outputs],
        )
        (self.out_dir / f"{self.command}_manifest.json").write_text(
            json.dumps(manifest.__dict__, indent=2) + "\n"
        )
        return manifest


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
