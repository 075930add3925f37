"""Turning attention maps into subject/object trajectories.

Inference never touches the decoder: the spatial and temporal attention
distributions produced by the encoder are fused, thresholded into candidate
segments, and the per-frame regions are linked into two trajectories by
dynamic programming over a pairwise linking score.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import BBox, Trajectory
from .metrics import spatial_iou
from .network import prepare_query, prepare_video

# Kept frames merge into one segment while their original-frame distance
# stays within this bound; it equals the stride of uniform 120-of-1200
# sampling, so adjacent sampled frames are always mergeable.
MAX_GROUP_GAP = 10


@dataclass
class GroundingResult:
    subject: Trajectory
    object: Trajectory
    score: float
    chosen_regions: list = field(default_factory=list)  # (frame, subj, obj)


def fuse_temporal(beta_frame, beta_clip, clip_len):
    """Overall per-frame relevance: frame attention plus its clip's
    attention broadcast over the clip."""
    beta_frame = np.asarray(beta_frame, dtype=np.float64).reshape(-1)
    beta_clip = np.asarray(beta_clip, dtype=np.float64).reshape(-1)
    n, h = beta_frame.size, beta_clip.size
    if clip_len <= 0 or n != h * clip_len:
        raise ValueError(
            f"cannot fuse {n} frame weights with {h} clips of length {clip_len}")
    return beta_frame + np.repeat(beta_clip, clip_len)


def threshold_segments(beta, sigma, sampled_frame_indices):
    """Candidate segments: sampled-frame positions whose fused attention
    clears sigma, grouped while the original-frame gap stays small.

    Falls back to the single highest-attention frame when nothing clears
    the threshold, so inference always produces a segment.
    """
    if sigma < 0:
        raise ValueError(f"threshold must be nonnegative, got {sigma}")
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    frames = list(sampled_frame_indices)
    if beta.size != len(frames):
        raise ValueError(
            f"{beta.size} attention values for {len(frames)} sampled frames")
    kept = [i for i in range(beta.size) if beta[i] >= sigma]
    if not kept:
        kept = [int(np.argmax(beta))]
    segments = [[kept[0]]]
    for i in kept[1:]:
        if frames[i] - frames[segments[-1][-1]] <= MAX_GROUP_GAP:
            segments[-1].append(i)
        else:
            segments.append([i])
    return segments


def link_score(alpha_p, alpha_q, box_p, box_q, distance):
    """Score for joining two regions on consecutive kept frames: their
    attention values plus overlap discounted by temporal distance."""
    if not 1 <= distance <= 10:
        raise ValueError(f"frame distance {distance} outside [1, 10]")
    return alpha_p + alpha_q + spatial_iou(box_p, box_q) / distance


def viterbi_link(original_frames, alphas, boxes):
    """Best chain of one region per kept frame.

    original_frames: K original-frame numbers (strictly increasing);
    alphas: (K, M) spatial attention rows; boxes: K lists of M BBox.
    Returns (region index per frame, mean link score over the K-1 steps).
    A single-frame segment degenerates to the highest-attention region
    with score 2*alpha.  Ties always resolve to the smaller region index,
    which makes the returned path the lexicographically smallest optimum.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    k, m = alphas.shape
    if len(original_frames) != k or len(boxes) != k:
        raise ValueError(
            f"segment of {len(original_frames)} frames with {k} attention "
            f"rows and {len(boxes)} box rows")
    if k == 1:
        j = int(np.argmax(alphas[0]))
        return [j], 2.0 * float(alphas[0, j])

    # Suffix values: best[j] = best total over frames t..K-1 starting at j.
    best = np.zeros(m)
    choice = np.zeros((k - 1, m), dtype=np.intp)
    for t in range(k - 2, -1, -1):
        iou = np.empty((m, m))
        for p in range(m):
            for q in range(m):
                iou[p, q] = spatial_iou(boxes[t][p], boxes[t + 1][q])
        dist = original_frames[t + 1] - original_frames[t]
        if not 1 <= dist <= 10:
            raise ValueError(f"frame distance {dist} outside [1, 10]")
        w = alphas[t][:, None] + alphas[t + 1][None, :] + iou / dist
        totals = w + best[None, :]
        choice[t] = np.argmax(totals, axis=1)  # first max: smallest q
        best = totals[np.arange(m), choice[t]]

    start = int(np.argmax(best))
    path = [start]
    for t in range(k - 1):
        path.append(int(choice[t, path[-1]]))
    return path, float(best[start]) / (k - 1)


def interpolate(sampled_frames, boxes, frame_width, frame_height):
    """Fill original frames between sampled anchors linearly.

    Anchor boxes pass through untouched; every in-between frame gets the
    distance-weighted blend of its two surrounding anchors, clamped to the
    frame.  Anchor gaps above the grouping bound are rejected.
    """
    frames = list(sampled_frames)
    if not frames:
        raise ValueError("cannot interpolate an empty trajectory")
    for a, b in zip(frames, frames[1:]):
        if b <= a:
            raise ValueError(f"frame indices not increasing: {a} then {b}")
        if b - a > MAX_GROUP_GAP:
            raise ValueError(f"anchor gap {b - a} exceeds {MAX_GROUP_GAP}")
    out = []
    for i, (frame, box) in enumerate(zip(frames, boxes)):
        out.append(box.clamped(frame_width, frame_height))
        if i + 1 == len(frames):
            break
        nxt_frame, nxt = frames[i + 1], boxes[i + 1]
        span = nxt_frame - frame
        for f in range(frame + 1, nxt_frame):
            w_prev = (nxt_frame - f) / span
            w_next = (f - frame) / span
            blend = BBox(
                w_prev * box.x_min + w_next * nxt.x_min,
                w_prev * box.y_min + w_next * nxt.y_min,
                w_prev * box.x_max + w_next * nxt.x_max,
                w_prev * box.y_max + w_next * nxt.y_max)
            out.append(blend.clamped(frame_width, frame_height))
    return Trajectory(frames[0], frames[-1], out)


def ground(network, video, query, table, sigma):
    """Localize one relation query in one video.

    Runs the encoder for the attention maps, fuses and thresholds the
    temporal attention into candidate segments, links subject and object
    regions per segment, and returns the best-scoring segment's pair of
    interpolated trajectories.
    """
    cfg = network.config
    if video.n_frames != cfg.n_frames or video.regions_per_frame != cfg.regions_per_frame:
        raise ValueError(
            f"video {video.video_id} has {video.n_frames} frames x "
            f"{video.regions_per_frame} regions, model expects "
            f"{cfg.n_frames} x {cfg.regions_per_frame}")
    arrays = prepare_video(video)
    arrays.update(prepare_query(query, table, cfg.use_predicate))
    maps = network.encode(arrays, training=False).maps()

    if cfg.use_clip:
        beta = fuse_temporal(maps.frame, maps.clip, cfg.clip_len)
    else:
        # Without the clip level only the frame attention is meaningful;
        # adding the uniform clip weights would drown any usable sigma.
        beta = maps.frame
    segments = threshold_segments(beta, sigma, video.sampled_frame_indices)

    all_boxes = video.boxes()
    best = None
    for segment in segments:
        originals = [video.sampled_frame_indices[i] for i in segment]
        seg_boxes = [all_boxes[i] for i in segment]
        subj_path, subj_score = viterbi_link(
            originals, maps.subject[segment], seg_boxes)
        obj_path, obj_score = viterbi_link(
            originals, maps.object[segment], seg_boxes)
        score = 0.5 * (subj_score + obj_score)
        if best is None or score > best[0]:
            best = (score, originals, seg_boxes, subj_path, obj_path)

    score, originals, seg_boxes, subj_path, obj_path = best
    subject = interpolate(
        originals, [seg_boxes[i][subj_path[i]] for i in range(len(originals))],
        video.frame_width, video.frame_height)
    obj = interpolate(
        originals, [seg_boxes[i][obj_path[i]] for i in range(len(originals))],
        video.frame_width, video.frame_height)
    chosen = [(f, s, o) for f, s, o in zip(originals, subj_path, obj_path)]
    return GroundingResult(subject, obj, score, chosen)


def random_baseline(video, rng):
    """Chance-level prediction: a uniformly random span and one random
    region slot per role, held across the span."""
    n = video.n_frames
    a, b = int(rng.integers(n)), int(rng.integers(n))
    lo, hi = min(a, b), max(a, b)
    positions = list(range(lo, hi + 1))
    subj_slot = int(rng.integers(video.regions_per_frame))
    obj_slot = int(rng.integers(video.regions_per_frame))
    originals = [video.sampled_frame_indices[i] for i in positions]
    all_boxes = video.boxes()
    subject = interpolate(
        originals, [all_boxes[i][subj_slot] for i in positions],
        video.frame_width, video.frame_height)
    obj = interpolate(
        originals, [all_boxes[i][obj_slot] for i in positions],
        video.frame_width, video.frame_height)
    chosen = [(f, subj_slot, obj_slot) for f in originals]
    return GroundingResult(subject, obj, 0.0, chosen)
