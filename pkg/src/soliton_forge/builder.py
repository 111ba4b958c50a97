"""Periodic configurations in general position from a translation vector."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .planar import (GrimReaperCurve, PeriodicConfiguration, check_general_position,
                     find_triples)


class BuilderError(ValueError):
    pass


@dataclass(frozen=True)
class BuilderOptions:
    seed: int = 0
    q_max: Optional[int] = None
    tol_pi_q: float = 1e-6
    max_retries: int = 200

    def __post_init__(self):
        if not self.tol_pi_q > 0:
            raise BuilderError("tol_pi_q must be positive")
        if self.max_retries < 1:
            raise BuilderError("max_retries must be at least 1")


def _normalize(a):
    ax, ay = float(a[0]), float(a[1])
    if not (math.isfinite(ax) and math.isfinite(ay)):
        raise BuilderError("translation vector must be finite")
    if ax == 0.0:
        raise BuilderError("a_x = 0 is not allowed")
    if ax < 0:
        # -a generates the same lattice
        ax, ay = -ax, -ay
    return ax, ay


def pi_over_q_violation(ax: float, opts: BuilderOptions):
    """Return q if |a_x| is within tol_pi_q of pi/q for some q <= q_max."""
    ax = abs(ax)
    need = math.ceil(math.pi / ax) + 1
    q_max = need if opts.q_max is None else max(int(opts.q_max), need)
    for q in range(1, q_max + 1):
        if abs(ax - math.pi / q) <= opts.tol_pi_q:
            return q
    return None


def classify(a, opts: BuilderOptions = BuilderOptions()) -> dict:
    ax, ay = _normalize(a)
    q = pi_over_q_violation(ax, opts)
    if q is not None:
        raise BuilderError(f"a_x = {ax!r} is within {opts.tol_pi_q} of pi/{q} (excluded value pi/q)")
    if ax > math.pi:
        K = math.floor(ax / math.pi) + 1
        base = min(math.pi - ax / K, 2 * ax / K - math.pi)
        return {"case": 2, "K": K, "d_bound": 0.1 * base, "gap_bound": 0.8 * base,
                "gaps": [math.pi - ax / K, 2 * ax / K - math.pi]}
    if ax > 0.5 * math.pi:
        gaps = [math.pi - ax, 2 * ax - math.pi]
        return {"case": 1, "K": 1, "d_bound": 0.0, "gap_bound": min(gaps), "gaps": gaps}
    K = math.floor(math.pi / ax) + 1
    gaps = [ax, math.pi - (K - 1) * ax, K * ax - math.pi]
    return {"case": 3, "K": K, "d_bound": 0.0, "gap_bound": min(gaps), "gaps": gaps}


def _sample_offsets(K, radius, rng, retries):
    for _ in range(retries):
        d = np.zeros((K, 2))
        r = radius * np.sqrt(rng.random(K - 1))
        phi = 2 * math.pi * rng.random(K - 1)
        d[1:, 0] = r * np.cos(phi)
        d[1:, 1] = r * np.sin(phi)
        diff = d[:, None, :] - d[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1)) + np.eye(K) * 1e300
        if dist.min() >= radius / 100 and np.all(np.hypot(d[:, 0], d[:, 1]) < radius):
            yield d


def build_from_translation(a, opts: BuilderOptions = BuilderOptions()) -> PeriodicConfiguration:
    info = classify(a, opts)
    ax, ay = _normalize(a)
    eps = 0.9 * info["gap_bound"]
    if info["case"] in (1, 3):
        cfg = PeriodicConfiguration((GrimReaperCurve(0.0, 0.0),), (ax, ay), eps)
        return cfg
    K = info["K"]
    rng = np.random.default_rng(opts.seed)
    for d in _sample_offsets(K, info["d_bound"], rng, opts.max_retries):
        curves = tuple(GrimReaperCurve(i * ax / K + d[i, 0], i * ay / K + d[i, 1]) for i in range(K))
        cfg = PeriodicConfiguration(curves, (ax, ay), eps)
        if check_general_position(cfg).passed:
            return cfg
    raise BuilderError(f"Case-2 sampling failed after {opts.max_retries} retries")


def has_subperiod(cfg: PeriodicConfiguration, K: int, tol: float = 1e-9) -> bool:
    """True if translating by i*a/K (0 < i < K) maps the curve set to itself."""
    ax, ay = cfg.period
    for i in range(1, K):
        tx, ty = i * ax / K, i * ay / K
        ok = True
        for g in cfg.curves:
            hit = False
            for h in cfg.curves:
                t = (g.b + tx - h.b) / ax
                j = round(t)
                if abs(t - j) * ax < tol and abs(g.c + ty - h.c - j * ay) < tol:
                    hit = True
                    break
            if not hit:
                ok = False
                break
        if ok:
            return True
    return False


__all__ = ["BuilderError", "BuilderOptions", "build_from_translation", "classify",
           "pi_over_q_violation", "has_subperiod", "find_triples"]
