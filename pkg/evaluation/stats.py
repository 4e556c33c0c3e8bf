"""
One-way ANOVA and paired t-test over per-repeat scores.

p values come from the regularized incomplete beta function below
(continued fraction, modified Lentz), so results do not depend on which
stats library happens to be installed.
"""
import logging
import math
from typing import Sequence

import numpy as np
from pydantic import BaseModel

logger = logging.getLogger(__name__)

_TINY = 1e-300
_EPS = 3e-16
_MAX_ITER = 500


class DegenerateStatisticError(ValueError):
    """The statistic is 0/0 or otherwise undefined for these inputs"""


class AnovaResult(BaseModel):
    f_statistic: float
    p_value: float
    df_between: int
    df_within: int
    k: int
    n: int


class TTestResult(BaseModel):
    t_statistic: float
    p_value: float
    df: int
    n: int
    mean_difference: float


def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise RuntimeError(f"Incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)"""
    if a <= 0 or b <= 0:
        raise ValueError(f"betainc needs a, b > 0, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def f_survival(f: float, d1: float, d2: float) -> float:
    """P(F > f) for an F(d1, d2) variable"""
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))


def t_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with df degrees of freedom"""
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def one_way_anova(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """F = MS_between / MS_within with df (k - 1, N - k)"""
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    k = len(arrays)
    if k < 2:
        raise ValueError(f"ANOVA needs at least 2 groups, got {k}")
    if any(a.size < 2 for a in arrays):
        raise ValueError(f"Every group needs at least 2 scores, sizes are {[a.size for a in arrays]}")
    n = int(sum(a.size for a in arrays))
    grand = np.concatenate(arrays).mean()
    ss_between = float(sum(a.size * (a.mean() - grand) ** 2 for a in arrays))
    ss_within = float(sum(((a - a.mean()) ** 2).sum() for a in arrays))
    df_between, df_within = k - 1, n - k
    if ss_within == 0.0:
        if ss_between == 0.0:
            raise DegenerateStatisticError("All scores identical: F is 0/0")
        raise DegenerateStatisticError("Zero within-group variance: F is unbounded")
    f = (ss_between / df_between) / (ss_within / df_within)
    p = f_survival(f, df_between, df_within)
    logger.info(f"📊 ANOVA over {k} groups: F={f:.4f}, p={p:.4g}, df=({df_between}, {df_within})")
    return AnovaResult(f_statistic=f, p_value=p, df_between=df_between, df_within=df_within, k=k, n=n)


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """t = mean(d) / (s_d / sqrt(n)) on d = a - b, df = n - 1, two-sided p"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"Paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError(f"Paired t-test needs n >= 2, got {n}")
    d = a - b
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise DegenerateStatisticError("Differences have zero variance: t is undefined")
    mean = float(d.mean())
    t = mean / (sd / math.sqrt(n))
    p = t_two_sided(t, n - 1)
    logger.info(f"📊 Paired t-test: t={t:.4f}, p={p:.4g}, df={n - 1}")
    return TTestResult(t_statistic=t, p_value=p, df=n - 1, n=n, mean_difference=mean)
