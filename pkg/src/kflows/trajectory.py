"""Sampled trajectories with optional dense output."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from kflows.geometry import SpaceSpec, speed2_batch, to_real


@dataclass(frozen=True)
class TrajectoryState:
    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=complex))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=complex))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples ``(t, z, zdot)`` plus coordinate accelerations when known.

    ``dense(t)`` returns ``(z, zdot)`` at arbitrary times inside ``[t[0], t[-1]]``.
    """

    space: SpaceSpec
    t: np.ndarray
    z: np.ndarray
    zdot: np.ndarray
    zddot: np.ndarray = None
    dense: object = None
    exit_flag: str = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.t.ndim != 1 or self.t.size == 0:
            raise ValueError("trajectory needs at least one sample")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("sample times must be strictly increasing")

    def __len__(self):
        return self.t.size

    @cached_property
    def speeds(self):
        """Squared speed ``h(zdot, zdot)`` at every sample."""
        return speed2_batch(self.space, self.z, self.zdot)

    @property
    def V(self):
        return float(self.speeds[0])

    @cached_property
    def speed_drift_series(self):
        V0 = self.V
        dev = np.abs(self.speeds - V0)
        return dev / abs(V0) if V0 != 0 else dev

    @property
    def speed_drift(self):
        return float(np.max(self.speed_drift_series))

    def at(self, tq):
        if self.dense is None:
            raise ValueError("trajectory has no dense output")
        return self.dense(tq)

    def rows(self, stride=1):
        """Rows ``t, x1..x2n, speed, speed_drift`` for tabular export."""
        x = to_real(self.z)
        idx = np.arange(0, self.t.size, max(1, int(stride)))
        if idx[-1] != self.t.size - 1:
            idx = np.append(idx, self.t.size - 1)
        return np.column_stack([self.t[idx], x[idx], self.speeds[idx], self.speed_drift_series[idx]])

    def header(self):
        return ["t"] + [f"x{i + 1}" for i in range(2 * self.space.n)] + ["speed", "speed_drift"]
