"""Grounding accuracy protocol.

A video-relation pair counts as correct when the predicted trajectory
covers more than half of the temporal union with the ground truth at a
given spatial IoU level; the joint (relation) accuracy requires subject
and object to succeed against the same ground-truth instance.
"""

from dataclasses import dataclass

SPATIAL_THRESHOLDS = (0.3, 0.5, 0.7)
TEMPORAL_THRESHOLD = 0.5

# Relationship taxonomy of the ImageNet-VidVRD predicate vocabulary,
# split into static (spatial/state) and dynamic (motion-based) groups.
# Multi-word phrases use the '_' word separator of the relation grammar.
STATIC_PREDICATES = frozenset((
    "above", "beneath", "left", "right", "front", "behind", "taller",
    "larger", "next_to", "inside", "hold", "bite", "lie_above",
    "lie_beneath", "lie_left", "lie_right", "lie_inside", "lie_next_to",
    "lie_with", "stand_above", "stand_beneath", "stand_left", "stand_right",
    "stand_front", "stand_behind", "stand_next_to", "stand_inside",
    "sit_above", "sit_left", "sit_right", "sit_front", "sit_behind",
    "sit_next_to", "sit_inside", "stop_above", "stop_beneath", "stop_left",
    "stop_right", "stop_front", "stop_behind", "stop_next_to", "stop_with",
))
DYNAMIC_PREDICATES = frozenset((
    "swim_behind", "walk_away", "fly_behind", "creep_behind", "move_left",
    "touch", "follow", "move_away", "walk_with", "move_next_to",
    "creep_above", "fall_off", "run_with", "swim_front", "walk_next_to",
    "kick", "creep_right", "watch", "swim_with", "fly_away",
    "creep_beneath", "run_past", "jump_right", "fly_toward", "creep_left",
    "run_next_to", "jump_front", "jump_beneath", "past", "jump_toward",
    "walk_beneath", "run_away", "run_above", "walk_right", "away",
    "move_right", "fly_right", "run_front", "run_toward", "jump_past",
    "jump_above", "move_with", "swim_beneath", "walk_past", "run_right",
    "creep_away", "move_toward", "feed", "run_left", "fly_front",
    "walk_behind", "fly_above", "fly_next_to", "fight", "walk_above",
    "jump_behind", "fly_with", "jump_next_to", "run_behind", "move_behind",
    "swim_right", "swim_next_to", "move_past", "pull", "walk_left", "ride",
    "move_beneath", "toward", "jump_left", "creep_toward", "fly_left",
    "walk_toward", "chase", "creep_next_to", "fly_past", "move_front",
    "run_beneath", "creep_front", "creep_past", "play", "move_above",
    "faster", "walk_front", "drive", "swim_left", "jump_away", "jump_with",
))


def spatial_iou(a, b):
    """Intersection over union of two boxes; 0 when the union is empty."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = a.area + b.area - inter
    return inter / union if union > 0.0 else 0.0


def trajectory_overlap(pred, gt, tau):
    """Fraction of the two spans' temporal union whose shared frames match
    at spatial IoU >= tau."""
    inter_start = max(pred.start_frame, gt.start_frame)
    inter_end = min(pred.end_frame, gt.end_frame)
    inter_len = max(0, inter_end - inter_start + 1)
    union = len(pred) + len(gt) - inter_len
    hits = sum(
        1 for f in range(inter_start, inter_end + 1)
        if spatial_iou(pred.box_at(f), gt.box_at(f)) >= tau)
    return hits / union


def judge_pair(result, gt_instances, tau):
    """(subject hit, object hit, relation hit) for one prediction.

    The relation hit demands both roles pass against one and the same
    ground-truth instance; the per-role hits may use different instances.
    """
    gt_instances = list(gt_instances)
    if not gt_instances:
        raise ValueError("no ground-truth instances to judge against")
    subj_hit = obj_hit = rel_hit = False
    for inst in gt_instances:
        s = trajectory_overlap(result.subject, inst.subject, tau) > TEMPORAL_THRESHOLD
        o = trajectory_overlap(result.object, inst.object, tau) > TEMPORAL_THRESHOLD
        subj_hit = subj_hit or s
        obj_hit = obj_hit or o
        rel_hit = rel_hit or (s and o)
    return subj_hit, obj_hit, rel_hit


@dataclass
class AccuracyReport:
    spatial_thresholds: tuple
    per_threshold: dict       # tau -> (acc_s, acc_o, acc_r)
    average: tuple            # (acc_s, acc_o, acc_r) over thresholds
    sample_count: int


def accuracy(results, gt_map, thresholds=SPATIAL_THRESHOLDS):
    """Score a result list against ground truth keyed by (video, relation).

    results: (video_id, relation, GroundingResult) triples; gt_map maps
    each key to its list of ground-truth instances.
    """
    results = list(results)
    if not results:
        raise ValueError("no results to score")
    counts = {tau: [0, 0, 0] for tau in thresholds}
    for video_id, relation, res in results:
        key = (video_id, relation)
        if key not in gt_map:
            raise KeyError(f"no ground truth for {video_id} / {relation}")
        for tau in thresholds:
            hits = judge_pair(res, gt_map[key], tau)
            for slot in range(3):
                counts[tau][slot] += int(hits[slot])
    n = len(results)
    per = {tau: tuple(c / n for c in counts[tau]) for tau in thresholds}
    avg = tuple(
        sum(per[tau][slot] for tau in thresholds) / len(thresholds)
        for slot in range(3))
    return AccuracyReport(tuple(thresholds), per, avg, n)


def zero_shot_split(train_queries, test_samples):
    """Test samples whose full triplet never occurs in training while each
    part (subject, predicate, object) does occur there."""
    triplets = set()
    seen_entities = set()
    seen_predicates = set()
    for q in train_queries:
        triplets.add((q.subject, q.predicate, q.object))
        seen_entities.update((q.subject, q.object))
        seen_predicates.add(q.predicate)
    kept = []
    for sample in test_samples:
        q = sample.query
        trip = (q.subject, q.predicate, q.object)
        if (trip not in triplets and q.subject in seen_entities
                and q.object in seen_entities
                and q.predicate in seen_predicates):
            kept.append(sample)
    return kept


def filter_by_predicate(samples, group):
    """Keep samples whose predicate belongs to the named taxonomy group."""
    if group == "static":
        allowed = STATIC_PREDICATES
    elif group == "dynamic":
        allowed = DYNAMIC_PREDICATES
    else:
        raise ValueError(f"unknown predicate group {group!r}")
    return [s for s in samples if s.query.predicate in allowed]
