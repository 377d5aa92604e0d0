"""Chain traces: thinned records plus whole-run summaries, and CSV/JSON I/O.

The trace CSV has the fixed column order step, manifold, m, then the
model observables.  Floats are written with 17 significant digits so a
written trace reloads bit-exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

REASONS = (
    "accepted",
    "newton_fail",
    "alpha_negative",
    "inequality_violated",
    "metropolis_reject",
    "reverse_newton_fail",
    "reverse_mismatch",
    "reverse_alpha_negative",
)


@dataclass
class ChainTrace:
    """Thinned records of a run plus per-step counters."""

    model_name: str
    observable_names: tuple
    step: np.ndarray
    manifold: list
    m: np.ndarray
    obs: np.ndarray
    n_steps: int = 0
    thin: int = 1
    seed: int | None = None
    backend: str = "python"
    params: dict = field(default_factory=dict)
    model_params: dict = field(default_factory=dict)
    visit_counts: dict = field(default_factory=dict)
    reason_counts: dict = field(default_factory=dict)
    move_reason_counts: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def __len__(self):
        return self.step.shape[0]

    def observable(self, name: str) -> np.ndarray:
        """Column of one named observable over the records."""
        if name == "m":
            return self.m.astype(float)
        try:
            k = self.observable_names.index(name)
        except ValueError:
            raise KeyError(f"no observable {name!r}; have {self.observable_names}")
        return self.obs[:, k]

    def record_fractions(self) -> dict:
        """Fraction of records on each manifold (what `analyze` recomputes)."""
        ids, counts = np.unique(np.asarray(self.manifold, dtype=object),
                                return_counts=True)
        total = len(self)
        return {str(i): int(c) / total for i, c in zip(ids, counts)}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "manifold", "m", *self.observable_names])
            for k in range(len(self)):
                row = [int(self.step[k]), self.manifold[k], int(self.m[k])]
                row += ["%.17g" % v for v in self.obs[k]]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "ChainTrace":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if header[:3] != ["step", "manifold", "m"]:
                raise ValueError(f"{path}: not a chain trace (header {header[:3]})")
            names = tuple(header[3:])
            step, manifold, m, obs = [], [], [], []
            for row in r:
                step.append(int(row[0]))
                manifold.append(row[1])
                m.append(int(row[2]))
                obs.append([float(v) for v in row[3:]])
        return cls(
            model_name="",
            observable_names=names,
            step=np.asarray(step, dtype=np.int64),
            manifold=manifold,
            m=np.asarray(m, dtype=np.int64),
            obs=np.asarray(obs, dtype=float).reshape(len(step), len(names)),
        )

    def summary_dict(self) -> dict:
        return {
            "model": self.model_name,
            "model_params": self.model_params,
            "sampler_params": self.params,
            "n_steps": self.n_steps,
            "thin": self.thin,
            "seed": self.seed,
            "backend": self.backend,
            "n_records": len(self),
            "observables": list(self.observable_names),
            "record_fractions": self.record_fractions() if len(self) else {},
            "visit_counts": {k: int(v) for k, v in self.visit_counts.items()},
            "reason_counts": {k: int(v) for k, v in self.reason_counts.items()},
            "move_reason_counts": {k: int(v)
                                   for k, v in self.move_reason_counts.items()},
            "acceptance_rate": (self.reason_counts.get("accepted", 0) / self.n_steps
                                if self.n_steps else None),
            "wall_time_s": self.wall_time,
        }

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
