"""Decision-following evaluation: compliance, recall/precision/mAP, minADE.

A rolled-out trajectory complies with a target decision when the labeler,
run on the generated motion, finds a contiguous run of the target class of
at least `min_run` frames.  Rationality penalizes behavior that follows the
letter of the decision but not its spirit: more than one lane-change run
when a single lane change was requested, or any run of the opposite-direction
maneuver.

Aggregation follows the detection-style protocol: a scenario scores a recall
point only if every sampled trajectory complies; precision averages the
per-scenario fraction of samples that are both compliant and rational; the
mAP score is the arithmetic mean of recall and precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import RoadMap
from .kinematics import Trajectory
from .labeler import (DEFAULT_WINDOW_N, LabelThresholds, MetaAction, OPPOSITE,
                      label_trajectory)

MIN_COMPLIANT_RUN = 5   # frames

LANE_CHANGES = (MetaAction.LEFT_LANE_CHANGE, MetaAction.RIGHT_LANE_CHANGE)


@dataclass(frozen=True)
class ComplianceVerdict:
    scenario_id: str
    target: MetaAction
    compliant: Tuple[bool, ...]   # per sample
    rational: Tuple[bool, ...]

    def __post_init__(self):
        if len(self.compliant) != len(self.rational):
            raise ValueError("compliant/rational lengths differ")
        if not self.compliant:
            raise ValueError("verdict needs at least one sample")


@dataclass(frozen=True)
class MetricReport:
    recall: float
    precision: float
    map_score: float
    min_ade: Optional[float]
    per_class: Dict[str, Dict[str, float]]


def label_runs(labels: Sequence[MetaAction]) -> List[Tuple[MetaAction, int, int]]:
    """Contiguous (label, start, length) runs."""
    runs = []
    for i, lab in enumerate(labels):
        if runs and runs[-1][0] == lab:
            runs[-1] = (lab, runs[-1][1], runs[-1][2] + 1)
        else:
            runs.append((lab, i, 1))
    return runs


def check_compliance(traj: Trajectory, target: MetaAction, road_map: RoadMap,
                     thresholds: LabelThresholds = LabelThresholds(),
                     window_n: int = DEFAULT_WINDOW_N,
                     min_run: int = MIN_COMPLIANT_RUN) -> Tuple[bool, bool]:
    """Judge one generated trajectory against a target decision.

    Returns (compliant, rational).  The labeler acts as the judge: it is run
    on the generated motion and its label runs are inspected.
    """
    labels = label_trajectory(traj, road_map, thresholds, window_n)
    runs = label_runs(labels)
    compliant = any(lab == target and length >= min_run
                    for lab, _, length in runs)

    rational = True
    opposite = OPPOSITE.get(target)
    if opposite is not None and any(
            lab == opposite and length >= min_run for lab, _, length in runs):
        rational = False
    if target in LANE_CHANGES:
        lane_change_runs = sum(1 for lab, _, length in runs
                               if lab in LANE_CHANGES and length >= min_run)
        if lane_change_runs > 1:
            rational = False
    return compliant, rational


def judge_scenario(scenario_id: str, target: MetaAction,
                   samples: Sequence[Trajectory], road_map: RoadMap,
                   thresholds: LabelThresholds = LabelThresholds(),
                   window_n: int = DEFAULT_WINDOW_N,
                   min_run: int = MIN_COMPLIANT_RUN) -> ComplianceVerdict:
    flags = [check_compliance(t, target, road_map, thresholds, window_n, min_run)
             for t in samples]
    return ComplianceVerdict(
        scenario_id=scenario_id, target=target,
        compliant=tuple(c for c, _ in flags),
        rational=tuple(r for _, r in flags))


def map_score(recall: float, precision: float) -> float:
    """Arithmetic mean of recall and precision."""
    return 0.5 * (recall + precision)


def aggregate(verdicts: Sequence[ComplianceVerdict],
              min_ade_value: Optional[float] = None) -> MetricReport:
    """Scenario-level recall, sample-level precision, their mean as mAP."""
    if not verdicts:
        raise ValueError("no scenarios")
    recall_hits = 0
    precision_sum = 0.0
    per_class: Dict[str, Dict[str, float]] = {}
    buckets: Dict[str, List[ComplianceVerdict]] = {}
    for v in verdicts:
        buckets.setdefault(v.target.code, []).append(v)
        if all(v.compliant):
            recall_hits += 1
        n_p = sum(c and r for c, r in zip(v.compliant, v.rational))
        precision_sum += n_p / len(v.compliant)
    recall = recall_hits / len(verdicts)
    precision = precision_sum / len(verdicts)
    for code, vs in sorted(buckets.items()):
        r = sum(all(v.compliant) for v in vs) / len(vs)
        p = sum(sum(c and rt for c, rt in zip(v.compliant, v.rational))
                / len(v.compliant) for v in vs) / len(vs)
        per_class[code] = {"recall": r, "precision": p,
                           "map": map_score(r, p), "scenarios": len(vs)}
    return MetricReport(recall=recall, precision=precision,
                        map_score=map_score(recall, precision),
                        min_ade=min_ade_value, per_class=per_class)


def ade(sample: Trajectory, reference: Trajectory) -> float:
    """Mean per-frame Euclidean displacement between two equal-length tracks."""
    if len(sample) != len(reference):
        raise ValueError(
            f"length mismatch: sample {len(sample)} vs reference {len(reference)}")
    return float(np.mean([
        math.hypot(a.x - b.x, a.y - b.y)
        for a, b in zip(sample.states, reference.states)]))


def min_ade(samples: Sequence[Trajectory], reference: Trajectory) -> float:
    """Minimum ADE over sampled trajectories."""
    if not samples:
        raise ValueError("no samples")
    return min(ade(s, reference) for s in samples)
