"""Patient records and the column-oriented cohort used for computation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

UNKNOWN = -1  # marker for an absent response or label in integer arrays


@dataclass(frozen=True)
class PatientRecord:
    id: str
    treatment: int
    covariates: tuple
    response: Optional[int] = None
    true_sensitive: Optional[int] = None
    predicted_sensitive: Optional[int] = None


@dataclass
class Cohort:
    """A set of patients held as parallel arrays.

    ``response``, ``true_sensitive`` and ``predicted_sensitive`` use ``-1`` for
    "not known"; ``response`` may also be ``None`` for pre-outcome candidates.
    """

    treatment: np.ndarray
    covariates: np.ndarray
    response: Optional[np.ndarray] = None
    true_sensitive: Optional[np.ndarray] = None
    predicted_sensitive: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.treatment = np.asarray(self.treatment, dtype=np.int8)
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.covariates.ndim != 2:
            raise ValueError(f"covariates must be a 2-D array, got shape {self.covariates.shape}")
        n = self.covariates.shape[0]
        if self.treatment.shape != (n,):
            raise ValueError(f"treatment has {self.treatment.shape[0]} entries, covariates have {n} rows")
        if not np.all((self.treatment == 0) | (self.treatment == 1)):
            raise ValueError("treatment entries must be 0 or 1")
        for name in ("response", "true_sensitive", "predicted_sensitive"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=np.int8)
                if value.shape != (n,):
                    raise ValueError(f"{name} length {value.shape} does not match {n} patients")
                setattr(self, name, value)
        if self.ids is not None:
            self.ids = np.asarray(self.ids, dtype=object)

    def __len__(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def has_responses(self) -> bool:
        return self.response is not None and bool(np.all(self.response >= 0))

    def subset(self, index) -> "Cohort":
        def pick(a):
            return None if a is None else a[index]

        return Cohort(
            treatment=self.treatment[index],
            covariates=self.covariates[index],
            response=pick(self.response),
            true_sensitive=pick(self.true_sensitive),
            predicted_sensitive=pick(self.predicted_sensitive),
            ids=pick(self.ids),
        )

    @classmethod
    def concat(cls, parts: Sequence["Cohort"]) -> "Cohort":
        parts = [p for p in parts if p is not None]
        if not parts:
            raise ValueError("nothing to concatenate")

        def join(name):
            arrays = [getattr(p, name) for p in parts]
            if any(a is None for a in arrays):
                if all(a is None for a in arrays):
                    return None
                arrays = [np.full(len(p), UNKNOWN, dtype=np.int8) if a is None else a for p, a in zip(parts, arrays)]
            return np.concatenate(arrays)

        ids = None
        if all(p.ids is not None for p in parts):
            ids = np.concatenate([p.ids for p in parts])
        return cls(
            treatment=np.concatenate([p.treatment for p in parts]),
            covariates=np.vstack([p.covariates for p in parts]),
            response=join("response"),
            true_sensitive=join("true_sensitive"),
            predicted_sensitive=join("predicted_sensitive"),
            ids=ids,
        )

    def records(self) -> list[PatientRecord]:
        def opt(a, i):
            if a is None or a[i] < 0:
                return None
            return int(a[i])

        ids = self.ids if self.ids is not None else [str(i) for i in range(len(self))]
        return [
            PatientRecord(
                id=str(ids[i]),
                treatment=int(self.treatment[i]),
                covariates=tuple(float(v) for v in self.covariates[i]),
                response=opt(self.response, i),
                true_sensitive=opt(self.true_sensitive, i),
                predicted_sensitive=opt(self.predicted_sensitive, i),
            )
            for i in range(len(self))
        ]

    @classmethod
    def from_records(cls, records: Sequence[PatientRecord]) -> "Cohort":
        records = list(records)
        if not records:
            raise ValueError("no patient records")
        widths = {len(r.covariates) for r in records}
        if len(widths) != 1:
            raise ValueError(f"covariate length differs across records: {sorted(widths)}")

        def column(attr):
            values = [getattr(r, attr) for r in records]
            if all(v is None for v in values):
                return None
            return np.array([UNKNOWN if v is None else v for v in values], dtype=np.int8)

        return cls(
            treatment=np.array([r.treatment for r in records]),
            covariates=np.array([r.covariates for r in records], dtype=float).reshape(len(records), widths.pop()),
            response=column("response"),
            true_sensitive=column("true_sensitive"),
            predicted_sensitive=column("predicted_sensitive"),
            ids=np.array([r.id for r in records], dtype=object),
        )


def as_cohort(patients) -> Cohort:
    if isinstance(patients, Cohort):
        return patients
    return Cohort.from_records(patients)
