"""Synthetic longitudinal cohorts and the case/control selection rules.

The generator plants a controllable signal (risk-code rate multiplier,
cross-slice trend, count bursts, demographic shift) into Poisson event
histories; the selection functions re-derive case/control status and index
dates from raw events so generated cases are always recovered.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import date

import numpy as np
import pandas as pd

from .errors import ConfigError
from .features import SLICE_ORDER, group_code, slice_day_range
from .numcore import RngStream

CHF_FAMILY_ROOT = "428"
# family root plus cardiomyopathy roots; "suggestive of CHF" is configurable
DEFAULT_EXCLUSION_ROOTS = ("428", "425")

# top-level risk concepts seeding the generator's risk-code set
RISK_DX_CODES = (
    "401", "250", "V58", "427", "272", "786", "585", "780", "724", "719",
    "V45", "285", "729", "496", "244", "V76", "278", "I10", "493", "V70",
    "424", "300", "E11", "E78", "V04", "M54", "Z79", "477", "Z00", "Z23",
    "R06", "R07", "Z36", "S72", "H93", "G45", "J34", "K56", "K31", "S46",
)
RISK_PX_CODES = ("99214", "36415", "99213", "90471", "96372", "90686", "96912")

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()

SPLIT_NAMES = ("train", "validation", "test")


@dataclass(frozen=True)
class CohortConfig:
    n_patients: int = 4000
    case_fraction: float = 0.099
    age_min: int = 30
    age_max: int = 80
    # fractions derived from the reference cohort's split counts
    split_fractions: tuple = (0.76, 0.04, 0.20)
    seed: int = 0
    # case onset rule: >= `case_codes_required` distinct-day CHF-family codes
    # inside a `case_window_days` window with none before it
    case_code_root: str = CHF_FAMILY_ROOT
    case_codes_required: int = 3
    case_window_days: int = 183
    # control density rule, checked over complete trailing intervals within
    # the lookback horizon (27 months = span + buffer)
    control_min_encounter_days: int = 3
    control_interval_days: int = 365
    control_lookback_days: int = 822
    exclusion_roots: tuple = DEFAULT_EXCLUSION_ROOTS
    index_start: str = "2015-01-01"
    index_end: str = "2016-12-31"

    def __post_init__(self):
        if not 0.0 < self.case_fraction < 1.0:
            raise ConfigError(f"case_fraction must be in (0, 1), got {self.case_fraction}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions {self.split_fractions} do not sum to 1")


@dataclass(frozen=True)
class SyntheticSignalSpec:
    """Controls where and how strongly case histories differ from controls.

    trend is the per-slice multiplicative increase of case risk-code rates
    toward the index date; with match_window_totals the case rates are
    rescaled so the summed rate over signal slices equals the control total
    (trend-only signal, aggregation-invariant). case_burst multiplies every
    positive case risk count, leaving presence probabilities untouched.
    """

    risk_dx: tuple = RISK_DX_CODES
    risk_px: tuple = RISK_PX_CODES
    n_background: int = 30
    base_rate: float = 0.4
    background_rate: float = 0.25
    case_multiplier: float = 1.0
    trend: float = 1.0
    signal_slices: tuple = SLICE_ORDER
    match_window_totals: bool = False
    case_burst: int = 1
    case_age_mean: float = 66.69
    case_age_std: float = 16.3
    control_age_mean: float = 56.53
    control_age_std: float = 8.5
    scheduled_visits_per_slice: int = 2
    male_fraction: float = 0.61
    race_weights: tuple = (0.55, 0.14, 0.09, 0.06, 0.05, 0.04, 0.03, 0.02, 0.01, 0.01)

    def __post_init__(self):
        if self.base_rate < 0 or self.background_rate < 0:
            raise ConfigError("event rates must be non-negative")
        if self.case_multiplier < 1.0:
            raise ConfigError("case_multiplier must be >= 1")
        if self.case_burst < 1:
            raise ConfigError("case_burst must be >= 1")

    @classmethod
    def null(cls, **overrides):
        """No label signal at all: identical rates and demographics."""
        base = cls(case_multiplier=1.0, trend=1.0, case_burst=1,
                   case_age_mean=56.53, case_age_std=8.5)
        return replace(base, **overrides)

    def risk_concepts(self):
        return tuple((c, "DX") for c in self.risk_dx) + tuple((c, "PX") for c in self.risk_px)

    def case_slice_rates(self):
        """Risk-code rate per signal slice (oldest first) for case patients."""
        names = [s for s in SLICE_ORDER if s in self.signal_slices]
        raw = np.array([self.base_rate * self.case_multiplier * self.trend**p
                        for p in range(len(names))])
        if self.match_window_totals and raw.sum() > 0:
            raw *= (len(names) * self.base_rate * self.case_multiplier) / raw.sum()
        return dict(zip(names, raw))


def _ordinals_to_dates(ordinals):
    return pd.to_datetime((np.asarray(ordinals) - _EPOCH_ORDINAL), unit="D")


def generate_synthetic_cohort(config: CohortConfig, signal: SyntheticSignalSpec):
    """Returns (patients, events) DataFrames.

    Case histories get the planted risk signal plus a qualifying CHF cluster
    whose first code falls exactly on the index date (the remaining codes
    follow within the qualification window, after the index, so they never
    leak into pre-index features).
    """
    rng = RngStream(config.seed)
    n = config.n_patients
    n_cases = int(round(n * config.case_fraction))
    is_case = np.zeros(n, dtype=bool)
    is_case[rng.child(0).permutation(n)[:n_cases]] = True

    start_ord = pd.Timestamp(config.index_start).toordinal()
    end_ord = pd.Timestamp(config.index_end).toordinal()
    index_ord = rng.child(1).integers(start_ord, end_ord + 1, n)

    age_rng = rng.child(2)
    ages = np.where(
        is_case,
        age_rng.normal(signal.case_age_mean, signal.case_age_std, n),
        age_rng.normal(signal.control_age_mean, signal.control_age_std, n),
    )
    ages = np.clip(ages, config.age_min, config.age_max)
    index_year = np.array([date.fromordinal(int(o)).year for o in index_ord])
    birth_year = index_year - np.round(ages).astype(int)

    gender = (rng.child(3).uniform(size=n) < signal.male_fraction).astype(int)
    race = rng.child(4).choice(10, size=n, p=np.array(signal.race_weights))

    patient_ids = np.array([f"P{i:06d}" for i in range(n)])
    patients = pd.DataFrame({
        "patient_id": patient_ids,
        "gender": gender,
        "birth_year": birth_year,
        "race": race,
        "label": np.where(is_case, "case", "control"),
        "index_date": _ordinals_to_dates(index_ord).strftime("%Y-%m-%d"),
    })

    background = tuple((f"{100 + i:03d}", "DX") for i in range(signal.n_background))
    risk = signal.risk_concepts()
    case_rates = signal.case_slice_rates()

    rows, days_before, codes, ctypes = [], [], [], []

    def emit(patient_rows, day_offsets, code, code_type):
        rows.append(patient_rows)
        days_before.append(day_offsets)
        codes.extend([code] * len(patient_rows))
        ctypes.extend([code_type] * len(patient_rows))

    ev_rng = rng.child(5)
    all_rows = np.arange(n)
    for pos, slice_name in enumerate(SLICE_ORDER):
        lo, hi = slice_day_range(slice_name)
        # guaranteed routine encounters keep control density satisfied
        for v in range(signal.scheduled_visits_per_slice):
            code, ctype = background[(pos * 7 + v) % len(background)]
            emit(all_rows, ev_rng.integers(lo, hi + 1, n), code, ctype)
        for code, ctype in background:
            counts = ev_rng.poisson(signal.background_rate, n)
            _emit_counts(emit, ev_rng, counts, all_rows, lo, hi, code, ctype)
        for code, ctype in risk:
            lam = np.where(is_case, case_rates.get(slice_name, signal.base_rate),
                           signal.base_rate)
            counts = ev_rng.poisson(lam)
            if signal.case_burst > 1:
                counts = np.where(is_case, counts * signal.case_burst, counts)
            _emit_counts(emit, ev_rng, counts, all_rows, lo, hi, code, ctype)

    # one buffer-period workup visit for everyone
    buf_code, buf_type = background[0]
    emit(all_rows, ev_rng.integers(5, 91, n), buf_code, buf_type)
    # controls: make the index date the last recorded encounter
    ctl = all_rows[~is_case]
    emit(ctl, np.zeros(len(ctl), dtype=np.int64), background[1][0], background[1][1])
    # cases: qualifying CHF cluster starting exactly at the index date
    case_rows = all_rows[is_case]
    chf_code = f"{config.case_code_root}.0"
    emit(case_rows, np.zeros(len(case_rows), dtype=np.int64), chf_code, "DX")
    for k in range(config.case_codes_required - 1):
        offs = ev_rng.integers(10 + 60 * k, 60 + 60 * k, len(case_rows))
        emit(case_rows, -offs, chf_code, "DX")  # negative = after the index

    row_arr = np.concatenate(rows)
    day_arr = np.concatenate(days_before)
    events = pd.DataFrame({
        "patient_id": patient_ids[row_arr],
        "date": _ordinals_to_dates(index_ord[row_arr] - day_arr).strftime("%Y-%m-%d"),
        "code": codes,
        "code_type": ctypes,
    })
    events = events.sort_values(
        ["patient_id", "date", "code", "code_type"], kind="stable"
    ).reset_index(drop=True)
    return patients, events


def _emit_counts(emit, rng, counts, all_rows, lo, hi, code, ctype):
    total = int(counts.sum())
    if total == 0:
        return
    patient_rows = np.repeat(all_rows, counts)
    emit(patient_rows, rng.integers(lo, hi + 1, total), code, ctype)


def _event_day_table(events: pd.DataFrame) -> pd.DataFrame:
    out = events[["patient_id", "code", "code_type"]].copy()
    out["day"] = pd.to_datetime(events["date"]).map(pd.Timestamp.toordinal)
    out["root"] = [group_code(c, t) for c, t in zip(out["code"], out["code_type"])]
    return out


def select_cases(events: pd.DataFrame, patients: pd.DataFrame,
                 config: CohortConfig) -> pd.DataFrame:
    """Patients whose first `case_codes_required` distinct CHF-code days fit in
    the qualification window; index date = first qualifying encounter."""
    ev = _event_day_table(events)
    chf = ev[(ev["code_type"] == "DX") & (ev["root"] == config.case_code_root)]
    birth = patients.set_index("patient_id")["birth_year"]
    out = []
    for pid, grp in chf.groupby("patient_id"):
        days = np.unique(grp["day"].to_numpy())
        if days.size < config.case_codes_required:
            continue
        first = days[: config.case_codes_required]
        if first[-1] - first[0] >= config.case_window_days:
            continue
        if pid not in birth.index:
            continue
        idx_date = date.fromordinal(int(first[0]))
        age = idx_date.year - int(birth[pid])
        if not config.age_min <= age <= config.age_max:
            continue
        out.append((pid, idx_date.isoformat()))
    return pd.DataFrame(out, columns=["patient_id", "index_date"])


def select_controls(events: pd.DataFrame, patients: pd.DataFrame,
                    config: CohortConfig) -> pd.DataFrame:
    """Patients with no CHF-suggestive code ever, enough encounter-days in each
    complete trailing 12-month interval, and in-bracket age; index = last encounter."""
    ev = _event_day_table(events)
    excluded = set(ev.loc[(ev["code_type"] == "DX")
                          & ev["root"].isin(config.exclusion_roots), "patient_id"])
    birth = patients.set_index("patient_id")["birth_year"]
    n_intervals = config.control_lookback_days // config.control_interval_days
    out = []
    for pid, grp in ev.groupby("patient_id"):
        if pid in excluded or pid not in birth.index:
            continue
        days = np.unique(grp["day"].to_numpy())
        last = int(days[-1])
        ok = True
        for k in range(1, n_intervals + 1):
            hi = last - (k - 1) * config.control_interval_days
            lo = last - k * config.control_interval_days
            n_days = int(((days > lo) & (days <= hi)).sum())
            if n_days < config.control_min_encounter_days:
                ok = False
                break
        if not ok:
            continue
        idx_date = date.fromordinal(last)
        age = idx_date.year - int(birth[pid])
        if not config.age_min <= age <= config.age_max:
            continue
        out.append((pid, idx_date.isoformat()))
    return pd.DataFrame(out, columns=["patient_id", "index_date"])


def split_cohort(patient_ids, fractions, seed) -> dict:
    """Seeded uniform partition into train/validation/test."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ConfigError(f"bad split fractions {fractions}")
    ids = sorted(str(p) for p in patient_ids)
    n = len(ids)
    perm = RngStream(seed, (9,)).permutation(n)
    shuffled = [ids[i] for i in perm]
    c1 = int(round(fractions[0] * n))
    c2 = int(round((fractions[0] + fractions[1]) * n))
    assignment = {}
    for i, pid in enumerate(shuffled):
        assignment[pid] = "train" if i < c1 else ("validation" if i < c2 else "test")
    return assignment
