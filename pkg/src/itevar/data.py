"""Observed-data container and dataset CSV round-trip.

Estimators only ever see ObservedData; the simulator's hidden ground
truth lives on the dataset object and is not part of this view.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

OBSERVED_COLUMNS = ("x_sex", "x_sbp", "x0", "a", "y")
ORACLE_COLUMNS = OBSERVED_COLUMNS + ("y0", "y1", "ite")


class MalformedCSVError(ValueError):
    pass


@dataclass(frozen=True)
class ObservedData:
    """What an estimator is allowed to see: features, treatment, outcome."""

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] = ("x_sex", "x_sbp", "x0")

    def __post_init__(self):
        if self.x.ndim != 2:
            raise ValueError("x must be a 2-d feature matrix")
        n = self.x.shape[0]
        if self.a.shape != (n,) or self.y.shape != (n,):
            raise ValueError("a and y must be vectors matching x rows")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def subset(self, rows: np.ndarray) -> "ObservedData":
        return ObservedData(
            x=np.ascontiguousarray(self.x[rows]),
            a=self.a[rows].copy(),
            y=self.y[rows].copy(),
            feature_names=self.feature_names,
        )


def fingerprint_of(config) -> str:
    """Stable hash of a resolved configuration mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"),
                      default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_dataset_csv(path, obs: ObservedData, hidden=None,
                      header_comments: list[str] | None = None) -> None:
    """Write the observed view; pass hidden=(y0, y1, ite) to append the
    oracle columns (evaluation only)."""
    cols = [obs.x[:, 0], obs.x[:, 1], obs.x[:, 2],
            obs.a.astype(np.int64), obs.y]
    names = list(OBSERVED_COLUMNS)
    if hidden is not None:
        y0, y1, ite = hidden
        cols += [y0, y1, ite]
        names = list(ORACLE_COLUMNS)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header_comments or []:
            fh.write(f"# {line}\n")
        fh.write(",".join(names) + "\n")
        n = obs.n
        for i in range(n):
            parts = []
            for name, col in zip(names, cols):
                if name in ("x_sex", "a"):
                    parts.append(str(int(col[i])))
                else:
                    parts.append(_fmt(col[i]))
            fh.write(",".join(parts) + "\n")


def read_dataset_csv(path) -> tuple[ObservedData, list[str]]:
    """Read the observed view back (oracle columns are ignored if
    present). Returns the data and any header comment lines."""
    comments: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        line = fh.readline()
        while line.startswith("#"):
            comments.append(line[1:].strip())
            line = fh.readline()
        header = [c.strip() for c in line.strip().split(",")]
        if header[:5] != list(OBSERVED_COLUMNS):
            raise MalformedCSVError(
                f"{path}: expected columns {OBSERVED_COLUMNS}, got {header[:5]}"
            )
        try:
            body = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise MalformedCSVError(f"{path}: {exc}") from None
    if body.size == 0:
        raise MalformedCSVError(f"{path}: no data rows")
    if body.shape[1] != len(header):
        raise MalformedCSVError(
            f"{path}: {body.shape[1]} columns in body, {len(header)} in header"
        )
    x = np.ascontiguousarray(body[:, :3])
    a = body[:, 3]
    if not np.isin(a, (0.0, 1.0)).all():
        bad = int(np.nonzero(~np.isin(a, (0.0, 1.0)))[0][0])
        raise MalformedCSVError(f"{path}: non-binary treatment at row {bad}")
    return ObservedData(x=x, a=a, y=body[:, 4].copy()), comments
