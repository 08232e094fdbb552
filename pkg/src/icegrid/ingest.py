"""Loading and aligning irregularly sampled core records.

Records arrive as (age, value) tables with ages in years BP.  Internally all
times are thousands of years (kyr) BP.  Alignment merges the per-core time
axes into one union axis; times closer than a small tolerance are treated as
one node so that float noise in published age models cannot split a shared
depth into two latent values.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

#: times closer than this (kyr) are the same node
TIME_TOLERANCE = 1e-9

_EXPECTED_HEADER = ("age_yr_bp", "d18o")


@dataclass(frozen=True, eq=False)
class CoreSeries:
    """One core's record: strictly increasing times (kyr BP) and values (per mil).

    section_length is the measurement support in years (sample thickness in
    time units); it drives relative nugget scaling across cores and may be
    omitted when unknown.
    """

    core_id: str
    times: np.ndarray
    values: np.ndarray
    section_length: float | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if not self.core_id:
            raise DataError("core_id must be non-empty")
        if times.ndim != 1 or values.shape != times.shape:
            raise DataError(f"core {self.core_id}: times/values must be matching 1-d arrays")
        if times.size < 2:
            raise DataError(f"core {self.core_id}: need at least two observations")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise DataError(f"core {self.core_id}: non-finite entries")
        if np.any(np.diff(times) <= 0):
            raise DataError(f"core {self.core_id}: times must be strictly increasing")
        if self.section_length is not None and not (np.isfinite(self.section_length) and self.section_length > 0):
            raise DataError(f"core {self.core_id}: section_length must be positive")

    @property
    def n(self) -> int:
        return self.times.size


def load_core_csv(path, core_id: str, section_length: float | None = None) -> CoreSeries:
    """Read an (age_yr_bp, d18o) CSV into a CoreSeries.

    Ages convert to kyr.  Lines starting with '#' are comments.  Rows are
    sorted; ages that coincide within TIME_TOLERANCE are averaged (with a
    warning) since they measure the same instant.  Parse failures report row
    and column.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, raw in enumerate(reader, start=1):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if raw[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = tuple(cell.strip().lower() for cell in raw)
                if header != _EXPECTED_HEADER:
                    raise DataError(f"{path}: expected header {_EXPECTED_HEADER}, got {header}")
                continue
            if len(raw) != 2:
                raise DataError(f"{path}: row {lineno}: expected 2 fields, got {len(raw)}")
            vals = []
            for colno, cell in enumerate(raw, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: row {lineno}, column {colno}: cannot parse {cell!r}") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}: row {lineno}: non-finite value")
            rows.append(vals)
    if header is None:
        raise DataError(f"{path}: empty file")
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two data rows, got {len(rows)}")
    arr = np.asarray(rows, dtype=float)
    times = arr[:, 0] / 1000.0
    values = arr[:, 1]
    order = np.argsort(times, kind="stable")
    times, values = times[order], values[order]
    # collapse duplicate ages
    keep_t, keep_v = [], []
    i = 0
    while i < times.size:
        j = i + 1
        while j < times.size and times[j] - times[j - 1] <= TIME_TOLERANCE:
            j += 1
        if j - i > 1:
            log.warning("%s: averaged %d rows at age %.6f kyr", path, j - i, times[i])
        keep_t.append(times[i:j].mean())
        keep_v.append(values[i:j].mean())
        i = j
    return CoreSeries(core_id, np.asarray(keep_t), np.asarray(keep_v), section_length)


@dataclass(frozen=True, eq=False)
class AlignedDataset:
    """Multiple cores on a shared union time axis.

    t_o holds the n union times; observation o is (obs_time[o], obs_core[o],
    obs_value[o]) with obs_time indexing t_o.  k_factors[c] scales core c's
    nugget variance relative to the reference core (ratio of measurement
    supports); cores without section metadata get 1.
    """

    core_ids: tuple
    reference: str
    t_o: np.ndarray
    obs_time: np.ndarray
    obs_core: np.ndarray
    obs_value: np.ndarray
    k_factors: np.ndarray

    def __post_init__(self):
        if len(set(self.core_ids)) != len(self.core_ids):
            raise DataError("duplicate core ids")
        if self.reference not in self.core_ids:
            raise DataError(f"reference core {self.reference!r} not present")
        if self.t_o.size < 2:
            raise DataError("need at least two union times")
        if np.any(np.diff(self.t_o) <= 0):
            raise DataError("union times must be strictly increasing")
        counts = np.bincount(self.obs_core, minlength=len(self.core_ids))
        if np.any(counts == 0):
            missing = [self.core_ids[c] for c in np.flatnonzero(counts == 0)]
            raise DataError(f"cores with no observations: {missing}")

    @property
    def m(self) -> int:
        return len(self.core_ids)

    @property
    def n_times(self) -> int:
        return self.t_o.size

    @property
    def n_obs(self) -> int:
        return self.obs_value.size

    @property
    def n_per_core(self) -> np.ndarray:
        return np.bincount(self.obs_core, minlength=self.m)

    def core_series(self, core_id: str) -> CoreSeries:
        """Reconstruct one core's record from the aligned arrays."""
        c = self.core_ids.index(core_id)
        mask = self.obs_core == c
        return CoreSeries(core_id, self.t_o[self.obs_time[mask]], self.obs_value[mask])


def align(cores: Sequence[CoreSeries], reference: str,
          time_tolerance: float = TIME_TOLERANCE) -> AlignedDataset:
    """Merge core time axes into one union axis.

    Times from different cores that agree within time_tolerance share a
    node (its time is their mean).  Two observations of the same core may
    never merge: distinct measured sections stay distinct.
    """
    if not cores:
        raise DataError("no cores given")
    ids = tuple(c.core_id for c in cores)
    if len(set(ids)) != len(ids):
        raise DataError("duplicate core ids")
    if reference not in ids:
        raise DataError(f"reference core {reference!r} not among {ids}")

    all_t = np.concatenate([c.times for c in cores])
    all_v = np.concatenate([c.values for c in cores])
    all_c = np.concatenate([np.full(c.n, i, dtype=np.intp) for i, c in enumerate(cores)])
    order = np.lexsort((all_c, all_t))
    all_t, all_v, all_c = all_t[order], all_v[order], all_c[order]

    node_of = np.empty(all_t.size, dtype=np.intp)
    node_times = []
    start = 0
    for i in range(1, all_t.size + 1):
        if i == all_t.size or all_t[i] - all_t[i - 1] > time_tolerance:
            cluster_cores = all_c[start:i]
            if np.unique(cluster_cores).size != cluster_cores.size:
                dup = ids[int(cluster_cores[0])]
                raise DataError(
                    f"core {dup}: observations closer than tolerance {time_tolerance} "
                    f"near {all_t[start]:.9f} kyr")
            node_of[start:i] = len(node_times)
            node_times.append(all_t[start:i].mean())
            start = i
    t_o = np.asarray(node_times)

    ref_idx = ids.index(reference)
    ref_len = cores[ref_idx].section_length
    k = np.ones(len(cores))
    for i, c in enumerate(cores):
        if ref_len is not None and c.section_length is not None:
            k[i] = ref_len / c.section_length
    return AlignedDataset(ids, reference, t_o, node_of, all_c, all_v, k)


def restrict(data: AlignedDataset, t_min: float, t_max: float) -> AlignedDataset:
    """Keep observations with t_min <= t <= t_max (inclusive), re-indexing times."""
    if not t_min < t_max:
        raise DataError("need t_min < t_max")
    keep_nodes = np.flatnonzero((data.t_o >= t_min) & (data.t_o <= t_max))
    if keep_nodes.size < 2:
        raise DataError("restriction leaves fewer than two union times")
    remap = np.full(data.n_times, -1, dtype=np.intp)
    remap[keep_nodes] = np.arange(keep_nodes.size)
    keep_obs = remap[data.obs_time] >= 0
    return AlignedDataset(
        data.core_ids, data.reference, data.t_o[keep_nodes],
        remap[data.obs_time[keep_obs]], data.obs_core[keep_obs],
        data.obs_value[keep_obs], data.k_factors.copy())


def single_core(data: AlignedDataset, core_id: str) -> AlignedDataset:
    """One core's observations on its own time axis (k factor carried over)."""
    if core_id not in data.core_ids:
        raise DataError(f"unknown core {core_id!r}")
    c = data.core_ids.index(core_id)
    mask = data.obs_core == c
    nodes = data.obs_time[mask]
    order = np.argsort(nodes, kind="stable")
    nodes = nodes[order]
    values = data.obs_value[mask][order]
    t = data.t_o[nodes]
    return AlignedDataset(
        (core_id,), core_id, t, np.arange(t.size, dtype=np.intp),
        np.zeros(t.size, dtype=np.intp), values,
        np.asarray([data.k_factors[c]]))
