"""Multi-seed aggregation, percent change and paired t-tests."""

import math
from dataclasses import asdict, dataclass
from typing import Dict, Sequence

import numpy as np

from src.errors import DataError, ZeroVarianceError


ALPHA = 0.05
BETA_TOLERANCE = 1e-12
BETA_MAX_ITERATIONS = 500
_TINY = 1e-300


@dataclass(frozen=True)
class RunSeries:
    """Per-seed values of one metric for both arms, paired by seed."""
    metric: str
    seeds: Sequence[int]
    real: Sequence[float]
    synthetic: Sequence[float]

    def __post_init__(self):
        if not (len(self.seeds) == len(self.real) == len(self.synthetic)):
            raise DataError(f"Series '{self.metric}' has unequal lengths")


@dataclass(frozen=True)
class TTestResult:
    """Outcome of a two-sided paired t-test."""
    t_statistic: float
    degrees_of_freedom: int
    p_value: float

    @property
    def significant(self) -> bool:
        """True when p < 0.05."""
        return self.p_value < ALPHA

    def to_dict(self) -> dict:
        """Plain mapping for reports."""
        return {"t_statistic": self.t_statistic, "degrees_of_freedom": self.degrees_of_freedom,
                "p_value": self.p_value, "significant": self.significant}


@dataclass(frozen=True)
class Summary:
    """Five-number summary plus mean and sample standard deviation."""
    mean: float
    sd: float
    min: float
    q1: float
    median: float
    q3: float
    max: float

    def to_dict(self) -> dict:
        """Plain mapping for reports."""
        return asdict(self)


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Continued fraction of the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, BETA_MAX_ITERATIONS + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETA_TOLERANCE:
            return h
    raise ArithmeticError(f"Incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b).

    Args:
        x: Upper limit in [0, 1]
        a: First shape parameter (> 0)
        b: Second shape parameter (> 0)

    Returns:
        I_x(a, b)
    """
    if not 0.0 <= x <= 1.0:
        raise DataError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: int) -> float:
    """Two-sided p-value of a Student-t statistic: I_{df/(df+t^2)}(df/2, 1/2)."""
    if df < 1:
        raise DataError(f"Degrees of freedom must be at least 1, got {df}")
    if t == 0:
        return 1.0
    p = regularized_beta(df / (df + t * t), df / 2.0, 0.5)
    return min(1.0, max(0.0, p))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on a - b.

    Args:
        a: First sample
        b: Second sample, paired with a by position

    Returns:
        TTestResult with df = n - 1

    Raises:
        DataError: Unequal lengths or fewer than two pairs
        ZeroVarianceError: If the differences have zero variance
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.shape != y.shape:
        raise DataError(f"Paired samples differ in length: {x.size} vs {y.size}")
    n = x.size
    if n < 2:
        raise DataError(f"Paired t-test needs at least 2 pairs, got {n}")
    d = x - y
    sd = float(np.std(d, ddof=1))
    if sd == 0:
        raise ZeroVarianceError("Paired differences have zero variance; p-value undefined")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    return TTestResult(t, n - 1, t_two_sided_p(t, n - 1))


def summarize(values: Sequence[float]) -> Summary:
    """Summary of one sample.

    Quartiles use linear interpolation between order statistics at position
    q * (n - 1) (the inclusive method). A single value has sd 0.

    Raises:
        DataError: If values is empty
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise DataError("Cannot summarize an empty series")
    q1, median, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    return Summary(
        mean=float(v.mean()),
        sd=float(v.std(ddof=1)) if v.size > 1 else 0.0,
        min=float(v.min()),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        max=float(v.max()),
    )


def summarize_runs(series: RunSeries) -> Dict[str, Summary]:
    """Summaries of both arms of a series, keyed "real" and "synthetic"."""
    return {"real": summarize(series.real), "synthetic": summarize(series.synthetic)}


def percent_change(real: float, synthetic: float) -> float:
    """Return 100 * (synthetic - real) / real.

    Raises:
        DataError: If real is zero
    """
    if real == 0:
        raise DataError("Percent change is undefined for a zero reference value")
    return 100.0 * (synthetic - real) / real
