"""Distance-threshold calibration and the in-campaign adjustment rule."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

from . import tlsh
from .tlsh import TlshDigest

log = logging.getLogger(__name__)


@dataclass
class CalibrationConfig:
    repetitions: int = 3
    percentile: float = 0.90
    eps_min: int = 5
    eps_max: int = 100
    adjust_step: int = 10
    adjust_trigger: int = 5

    def __post_init__(self):
        if not 0 < self.percentile <= 1:
            raise ValueError("percentile must be in (0, 1]")
        if self.eps_min > self.eps_max:
            raise ValueError("eps_min must not exceed eps_max")

    def clamp(self, eps: int) -> int:
        return max(self.eps_min, min(self.eps_max, eps))


@dataclass
class EpsilonState:
    epsilon: int
    consecutive_new_states: int = 0
    adjustments: int = 0


def nearest_rank(values: Sequence[int], p: float) -> int:
    """Nearest-rank percentile: the ceil(p*n)-th smallest value (1-indexed)."""
    if not values:
        raise ValueError("percentile of an empty list")
    ordered = sorted(values)
    rank = max(1, math.ceil(p * len(ordered) - 1e-9))
    return ordered[rank - 1]


def observe_input_result(es: EpsilonState, produced_new_state: bool, cfg: CalibrationConfig) -> EpsilonState:
    if not produced_new_state:
        es.consecutive_new_states = 0
        return es
    es.consecutive_new_states += 1
    if es.consecutive_new_states >= cfg.adjust_trigger:
        raised = min(es.epsilon + cfg.adjust_step, cfg.eps_max)
        if raised != es.epsilon:
            log.info("new states on %d consecutive inputs; epsilon %d -> %d",
                     es.consecutive_new_states, es.epsilon, raised)
            es.adjustments += 1
        es.epsilon = raised
        es.consecutive_new_states = 0
    return es


@dataclass
class SeedCalibration:
    seed_index: int
    reference: list[TlshDigest]
    distances: list[int] = field(default_factory=list)
    length_mismatches: int = 0


@dataclass
class CalibrationResult:
    epsilon: int
    raw_percentile: int | None
    pool: list[int]
    seeds: list[SeedCalibration]
    clamped: bool

    def report(self) -> dict:
        per_seed = []
        for s in self.seeds:
            d = s.distances
            per_seed.append({
                "seed": s.seed_index,
                "iterations": len(s.reference),
                "n": len(d),
                "min": min(d) if d else None,
                "max": max(d) if d else None,
                "mean": (sum(d) / len(d)) if d else None,
                "length_mismatches": s.length_mismatches,
            })
        return {
            "per_seed": per_seed,
            "pool_size": len(self.pool),
            "percentile_value": self.raw_percentile,
            "epsilon": self.epsilon,
            "clamped": self.clamped,
        }


def calibrate(seeds: Sequence, run_hashes: Callable[[object], list[TlshDigest]],
              cfg: CalibrationConfig | None = None) -> CalibrationResult:
    """Pick epsilon from repeated executions of every seed.

    ``run_hashes(seed)`` executes the target once and returns the digest of
    each iteration.  Distances between the reference run and each repeat
    are pooled index by index; a shorter repeat contributes only the
    overlapping prefix.
    """
    cfg = cfg or CalibrationConfig()
    if not seeds:
        raise ValueError("calibration needs at least one seed")
    pool: list[int] = []
    per_seed = []
    for idx, seed in enumerate(seeds):
        reference = run_hashes(seed)
        sc = SeedCalibration(idx, reference)
        for _ in range(cfg.repetitions):
            again = run_hashes(seed)
            if len(again) != len(reference):
                sc.length_mismatches += 1
                log.warning("seed %d: repeat produced %d iterations, reference %d",
                            idx, len(again), len(reference))
            for a, b in zip(reference, again):
                if a.valid and b.valid:
                    sc.distances.append(tlsh.distance(a, b))
        pool.extend(sc.distances)
        per_seed.append(sc)
    if not pool:
        log.warning("empty distance pool; falling back to epsilon=%d", cfg.eps_min)
        return CalibrationResult(cfg.eps_min, None, pool, per_seed, True)
    raw = nearest_rank(pool, cfg.percentile)
    eps = cfg.clamp(raw)
    return CalibrationResult(eps, raw, pool, per_seed, eps != raw)


def config_dict(cfg: CalibrationConfig) -> dict:
    return asdict(cfg)
