"""Per-element estimator reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EstimatorReport:
    """Squared per-element contributions, split by named term.

    Terms listed in ``oscillation`` are data-oscillation remainders; they are
    kept apart from eta_K^2 and only enter ``total_with_oscillation``.
    """

    family: str
    scheme: str
    degree: int
    terms: dict[str, np.ndarray]
    oscillation: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict)
    error: np.ndarray | None = None  # squared per-element error, optional

    def __post_init__(self):
        for name, v in self.terms.items():
            v = np.asarray(v, dtype=float)
            if np.any(v < 0):
                raise ValueError(f"negative contribution in term {name!r}")
            self.terms[name] = v

    @property
    def estimator_terms(self) -> list[str]:
        return [t for t in self.terms if t not in self.oscillation]

    @property
    def eta2(self) -> np.ndarray:
        """eta_K^2 per element."""
        n = len(next(iter(self.terms.values())))
        return sum((self.terms[t] for t in self.estimator_terms), np.zeros(n))

    @property
    def osc2(self) -> np.ndarray:
        n = len(self.eta2)
        return sum((self.terms[t] for t in self.oscillation), np.zeros(n))

    @property
    def total(self) -> float:
        """Sum over elements of eta_K^2."""
        return float(self.eta2.sum())

    @property
    def eta(self) -> float:
        return float(np.sqrt(self.total))

    @property
    def total_with_oscillation(self) -> float:
        return float(self.eta2.sum() + self.osc2.sum())

    def term_total(self, name: str) -> float:
        return float(self.terms[name].sum())

    def with_error(self, error2: np.ndarray) -> "EstimatorReport":
        self.error = np.asarray(error2, dtype=float)
        return self

    @property
    def effectivity(self) -> float | None:
        if self.error is None:
            return None
        e = np.sqrt(self.error.sum())
        return float(self.eta / e) if e > 0 else float("inf") if self.eta > 0 else 1.0

    @property
    def element_effectivity(self) -> np.ndarray | None:
        if self.error is None:
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.sqrt(self.eta2 / self.error)

    def rows(self):
        """(element, term, value) triples in a fixed order."""
        for k in range(len(self.eta2)):
            for name, v in self.terms.items():
                yield k, name, float(v[k])
