"""Time-sliced feature engineering: grouped-code count tensors per patient.

The pre-index history is cut into four 6-month slices (newest M6 through
oldest M24) with a 3-month buffer immediately before the index date excluded.
Months are 30.4375 days; an event lands in the slice given by
floor(days_before_index / 30.4375).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import ConfigError, DataIntegrityError, SchemaError

DAYS_PER_MONTH = 30.4375
SLICE_ORDER = ("M24", "M18", "M12", "M6")  # oldest first; feeding order
SLICE_MONTHS = {"M6": (3, 9), "M12": (9, 15), "M18": (15, 21), "M24": (21, 27)}
BUFFER_MONTHS = 3
SPAN_MONTHS = 27
DEMOGRAPHIC_WIDTH = 12  # gender(1) + age(1) + race one-hot(10)
N_RACES = 10


def slice_day_range(name):
    """Closed integer day range [lo, hi] of days-before-index for a slice."""
    lo_m, hi_m = SLICE_MONTHS[name]
    lo = int(np.ceil(lo_m * DAYS_PER_MONTH))
    hi = int(np.ceil(hi_m * DAYS_PER_MONTH)) - 1
    return lo, hi


@dataclass(frozen=True)
class ObservationWindow:
    """A contiguous run of slices starting at M24; more slices = nearer the index."""

    slices: tuple

    def __post_init__(self):
        n = len(self.slices)
        if not 1 <= n <= 4 or tuple(self.slices) != SLICE_ORDER[:n]:
            raise ConfigError(
                f"observation window must be a prefix of {SLICE_ORDER}, got {self.slices}"
            )

    @classmethod
    def of(cls, *names):
        return cls(tuple(names))

    @classmethod
    def parse(cls, text):
        """'24,18' -> window (M24, M18)."""
        names = tuple(f"M{p.strip()}" for p in str(text).split(","))
        return cls(names)

    @property
    def t(self):
        return len(self.slices)

    @property
    def horizon_months(self):
        """Months between the end of observed data and the index date."""
        return SPAN_MONTHS - 6 * len(self.slices)

    def label(self):
        return ",".join(s[1:] + "M" for s in self.slices)

    def __str__(self):
        return "+".join(self.slices)


FULL_WINDOW = ObservationWindow(SLICE_ORDER)


def group_code(code: str, code_type: str) -> str:
    """Diagnosis codes collapse to their root before the first dot; others pass through."""
    if not code:
        raise SchemaError("empty concept code")
    if code_type == "DX":
        return code.split(".", 1)[0]
    return code


@dataclass(frozen=True)
class ConceptVocabulary:
    """Grouped concepts that survived the training-variance filter, in column order."""

    codes: tuple            # (code_type, grouped_code) pairs, sorted
    variances: tuple        # training variance per concept, aligned with codes

    def __post_init__(self):
        if len(self.codes) != len(self.variances):
            raise SchemaError("vocabulary codes/variances length mismatch")

    @property
    def size(self):
        return len(self.codes)

    def index(self):
        return {c: i for i, c in enumerate(self.codes)}

    def subset(self, keep_mask):
        keep = np.asarray(keep_mask, dtype=bool)
        return ConceptVocabulary(
            codes=tuple(c for c, k in zip(self.codes, keep) if k),
            variances=tuple(v for v, k in zip(self.variances, keep) if k),
        )

    def drop_code_type(self, code_type):
        return self.subset([ct != code_type for ct, _ in self.codes])


@dataclass
class SliceTensor:
    """Per-patient, per-slice concept counts plus the demographic block.

    counts: (N, T, V) float64 (integral values unless binarized upstream);
    demographics: (N, 12); labels: (N,) with 1 = case.
    """

    counts: np.ndarray
    demographics: np.ndarray
    labels: np.ndarray
    patient_ids: list
    window: ObservationWindow
    vocabulary: ConceptVocabulary
    split: list = field(default_factory=list)
    binarized: bool = False
    aggregated: bool = False
    unknown_dropped: int = 0

    def __post_init__(self):
        n = len(self.patient_ids)
        if self.counts.shape != (n, self.window.t, self.vocabulary.size):
            raise SchemaError(
                f"counts shape {self.counts.shape} does not match "
                f"(N={n}, T={self.window.t}, V={self.vocabulary.size})"
            )
        if self.demographics.shape != (n, DEMOGRAPHIC_WIDTH):
            raise SchemaError(f"demographics shape {self.demographics.shape} must be (N, 12)")

    @property
    def n(self):
        return len(self.patient_ids)

    def rows(self, idx):
        return replace(
            self,
            counts=self.counts[idx],
            demographics=self.demographics[idx],
            labels=self.labels[idx],
            patient_ids=[self.patient_ids[i] for i in np.atleast_1d(np.arange(self.n)[idx])],
            split=[self.split[i] for i in np.atleast_1d(np.arange(self.n)[idx])] if self.split else [],
        )

    def subset(self, split_name):
        if not self.split:
            raise SchemaError("tensor carries no split assignment")
        mask = np.array([s == split_name for s in self.split])
        if not mask.any():
            raise SchemaError(f"no rows in split '{split_name}'")
        return self.rows(mask)


def slice_events(events: pd.DataFrame, index_date) -> dict:
    """Per-slice grouped-code counts for a single patient's events.

    events needs columns (date, code, code_type); dates must not exceed the
    index date. Buffer-window and beyond-span events are dropped.
    """
    index_ord = pd.Timestamp(index_date).toordinal()
    out = {name: {} for name in SLICE_ORDER}
    if events.empty:
        return out
    days_before = index_ord - pd.to_datetime(events["date"]).map(pd.Timestamp.toordinal).to_numpy()
    if (days_before < 0).any():
        bad = events.loc[days_before < 0].iloc[0]
        raise DataIntegrityError(
            f"event dated {bad['date']} falls after index date {index_date}"
        )
    month_offset = np.floor(days_before / DAYS_PER_MONTH).astype(int)
    for off, code, ctype in zip(month_offset, events["code"], events["code_type"]):
        if off < BUFFER_MONTHS or off >= SPAN_MONTHS:
            continue
        for name, (lo, hi) in SLICE_MONTHS.items():
            if lo <= off < hi:
                key = (ctype, group_code(code, ctype))
                out[name][key] = out[name].get(key, 0) + 1
                break
    return out


def month_offsets(event_dates, index_date):
    """Vectorized floor((index - date) / month) used by the tensor builder."""
    index_ord = pd.Timestamp(index_date).toordinal()
    days_before = index_ord - event_dates
    return np.floor(days_before / DAYS_PER_MONTH).astype(np.int64)


def build_vocabulary(totals: pd.DataFrame, n_patients: int, threshold: float = 1.0) -> ConceptVocabulary:
    """Filter concepts by population variance of per-patient full-span totals.

    totals has columns (code_type, code, patient_id, total); patients absent
    for a concept contribute zero counts. Only training patients belong here.
    """
    if n_patients <= 0:
        raise ConfigError("cannot build a vocabulary from an empty training set")
    grouped = totals.groupby(["code_type", "code"])["total"]
    s1 = grouped.sum()
    s2 = grouped.apply(lambda v: float(np.sum(np.square(v.to_numpy(dtype=np.float64)))))
    mean = s1 / n_patients
    var = s2 / n_patients - mean**2
    kept = var[var >= threshold].sort_index()
    return ConceptVocabulary(
        codes=tuple(kept.index.tolist()),
        variances=tuple(float(v) for v in kept.to_numpy()),
    )


def concept_variance(counts_per_patient, n_patients):
    """Population variance of one concept's totals, zeros included."""
    arr = np.asarray(counts_per_patient, dtype=np.float64)
    mean = arr.sum() / n_patients
    return float(np.sum(arr**2) / n_patients - mean**2)


def encode_demographics(gender, birth_year, race, index_date) -> np.ndarray:
    """[gender, age at index in years, one-hot race(10)]; age is raw years."""
    if not 0 <= int(race) < N_RACES:
        raise SchemaError(f"race index {race} outside 0..{N_RACES - 1}")
    index_ts = pd.Timestamp(index_date)
    age = (index_ts.toordinal() - pd.Timestamp(int(birth_year), 1, 1).toordinal()) / 365.25
    vec = np.zeros(DEMOGRAPHIC_WIDTH)
    vec[0] = float(gender)
    vec[1] = age
    vec[2 + int(race)] = 1.0
    return vec


def aggregate_slices(t: SliceTensor) -> SliceTensor:
    """Sum counts across the slice axis; everything else is unchanged."""
    summed = t.counts.sum(axis=1, keepdims=True)
    return replace(t, counts=summed, window=ObservationWindow.of("M24"), aggregated=True)


def flatten_for_tabular(t: SliceTensor) -> np.ndarray:
    """Slice blocks oldest-first, demographics appended once at the end."""
    n = t.n
    flat = t.counts.reshape(n, t.window.t * t.vocabulary.size)
    return np.concatenate([flat, t.demographics], axis=1)


def binarize(t: SliceTensor) -> SliceTensor:
    return replace(t, counts=np.minimum(t.counts, 1.0), binarized=True)


def encounter_days_per_slice(events: pd.DataFrame, patients: pd.DataFrame,
                             window: ObservationWindow) -> pd.DataFrame:
    """Distinct event dates per (patient, slice) over the window, zeros filled."""
    idx_map = patients.set_index("patient_id")["index_date"]
    ev = events[events["patient_id"].isin(idx_map.index)].copy()
    dates = pd.to_datetime(ev["date"]).map(pd.Timestamp.toordinal).to_numpy()
    index_ord = pd.to_datetime(ev["patient_id"].map(idx_map)).map(pd.Timestamp.toordinal).to_numpy()
    off = np.floor((index_ord - dates) / DAYS_PER_MONTH).astype(np.int64)
    slice_name = np.full(len(ev), "", dtype=object)
    for name, (lo, hi) in SLICE_MONTHS.items():
        slice_name[(off >= lo) & (off < hi)] = name
    ev["slice"] = slice_name
    ev["day"] = dates
    ev = ev[ev["slice"].isin(window.slices)]
    table = (
        ev.groupby(["patient_id", "slice"])["day"].nunique().unstack(fill_value=0)
    )
    for name in window.slices:
        if name not in table.columns:
            table[name] = 0
    return table.reindex(idx_map.index, fill_value=0)[list(window.slices)]


def density_filter(patients: pd.DataFrame, events: pd.DataFrame,
                   per_slice_min: int, window: ObservationWindow = FULL_WINDOW) -> pd.DataFrame:
    """Keep patients with >= per_slice_min encounter-days in every window slice."""
    if per_slice_min <= 0:
        return patients
    table = encounter_days_per_slice(events, patients, window)
    ok = (table >= per_slice_min).all(axis=1)
    keep = set(table.index[ok])
    return patients[patients["patient_id"].isin(keep)].reset_index(drop=True)


def build_slice_tensor(patients: pd.DataFrame, events: pd.DataFrame,
                       window: ObservationWindow,
                       vocabulary: ConceptVocabulary | None = None,
                       variance_threshold: float = 1.0,
                       split: dict | None = None) -> SliceTensor:
    """Assemble the (N, T, V) tensor for a cohort.

    When no vocabulary is given, one is built from the training-split patients
    (requires `split`); per-patient totals over the full 4-slice span feed the
    variance filter. Post-index events are ignored (case-confirmation codes
    live after the index by construction).
    """
    patients = patients.reset_index(drop=True)
    order = {pid: i for i, pid in enumerate(patients["patient_id"])}
    ev = events[events["patient_id"].isin(order)].copy()

    idx_map = patients.set_index("patient_id")["index_date"]
    dates = pd.to_datetime(ev["date"]).map(pd.Timestamp.toordinal).to_numpy()
    index_ord = pd.to_datetime(ev["patient_id"].map(idx_map)).map(pd.Timestamp.toordinal).to_numpy()
    off = np.floor((index_ord - dates) / DAYS_PER_MONTH).astype(np.int64)
    pre_index = index_ord >= dates
    in_span = pre_index & (off >= BUFFER_MONTHS) & (off < SPAN_MONTHS)

    ev = ev.loc[in_span].copy()
    off = off[in_span]
    grouped = [group_code(c, t) for c, t in zip(ev["code"], ev["code_type"])]
    ev["concept_type"] = ev["code_type"].to_numpy()
    ev["concept"] = grouped
    slice_idx = np.full(len(ev), -1, dtype=np.int64)
    for pos, name in enumerate(SLICE_ORDER):
        lo, hi = SLICE_MONTHS[name]
        slice_idx[(off >= lo) & (off < hi)] = pos
    ev["slice_pos"] = slice_idx
    ev["row"] = ev["patient_id"].map(order).to_numpy()

    if vocabulary is None:
        if not split:
            raise ConfigError("vocabulary construction requires a split assignment")
        train_ids = {pid for pid, name in split.items() if name == "train"}
        if not train_ids:
            raise ConfigError("empty training split")
        train_ev = ev[ev["patient_id"].isin(train_ids)]
        totals = (
            train_ev.groupby(["concept_type", "concept", "patient_id"])
            .size()
            .rename("total")
            .reset_index()
            .rename(columns={"concept_type": "code_type", "concept": "code"})
        )
        vocabulary = build_vocabulary(totals, len(train_ids), variance_threshold)

    vindex = vocabulary.index()
    keys = list(zip(ev["concept_type"], ev["concept"]))
    col = np.array([vindex.get(k, -1) for k in keys], dtype=np.int64)
    known = col >= 0
    unknown_dropped = int((~known).sum())

    n = len(patients)
    counts = np.zeros((n, 4, vocabulary.size))
    np.add.at(counts, (ev["row"].to_numpy()[known], ev["slice_pos"].to_numpy()[known], col[known]), 1.0)
    # keep only the window's slices, oldest first
    positions = [SLICE_ORDER.index(s) for s in window.slices]
    counts = counts[:, positions, :]

    demo = np.stack([
        encode_demographics(r.gender, r.birth_year, r.race, r.index_date)
        for r in patients.itertuples()
    ]) if n else np.zeros((0, DEMOGRAPHIC_WIDTH))
    labels = (patients["label"].to_numpy() == "case").astype(np.int64)
    split_list = [split[pid] for pid in patients["patient_id"]] if split else []
    return SliceTensor(
        counts=counts,
        demographics=demo,
        labels=labels,
        patient_ids=list(patients["patient_id"]),
        window=window,
        vocabulary=vocabulary,
        split=split_list,
        unknown_dropped=unknown_dropped,
    )
