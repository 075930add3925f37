"""Synthetic moving-box scenes with a geometric relation oracle.

Each scene plants one subject-predicate-object relation over a chosen frame
span by construction, fills the remaining region slots with same-category
distractors, filler entities, jittered duplicates and clutter, and then
recomputes ground truth from the emitted geometry, so the labels are true
for the data as written rather than merely intended.
"""

import os
from dataclasses import dataclass, replace

import numpy as np

from .data import (BBox, RegionProposal, RelationInstance, Trajectory,
                   VideoFeatures)
from .formats import save_video_features, write_ground_truth, write_manifest

CATEGORIES = ("person", "dog", "car", "bicycle", "horse", "giant_panda")
STATIC_SET = ("left", "right", "above", "beneath", "larger")
DYNAMIC_SET = ("move_toward", "move_away", "chase")
DEFAULT_PREDICATES = ("left", "right", "above", "beneath",
                      "move_toward", "move_away")

# Oracle thresholds; every emitted manifest records them in its header.
CENTER_GAP = 16.0       # px of center offset needed for left/right/above/beneath
AREA_RATIO = 1.5        # area factor needed for `larger`
APPROACH_MARGIN = 1.0   # px/frame of distance change for move_toward / move_away
CHASE_ALIGN = 0.7       # velocity/offset cosine needed for `chase`
CHASE_SPEED = 2.0       # px/frame both entities must sustain for `chase`
MIN_SPAN = 3            # shortest frame span reported by the oracle

# Center offset used when a static arrangement is planted.  Well above
# CENTER_GAP so the pair's relative geometry stays clearly signed under
# wobble and imperfect attention pooling.
HOLD_OFFSET = CENTER_GAP + 24.0

# Center offset during the co-occurrence frames that flank a planted
# span: comfortably below CENTER_GAP on both axes, so no static
# arrangement holds there.
FLANK_OFFSET = 8.0

# Entities related by a query co-occur only inside a presence window a
# few frames wider than the relation span; frames between two windows
# of the same scene stay empty of at least one participant.
PAD_RANGE = (1, 2)
WINDOW_GAP = 2


@dataclass
class SceneSpec:
    seed: object = 0
    canvas_size: float = 256.0
    n_frames: int = 24
    regions_per_frame: int = 6
    appearance_dim: int = 6
    appearance_noise: float = 0.1
    distractor_prob: float = 0.5
    min_entities: int = 3
    max_entities: int = 4
    span_min: int = 9
    span_max: int = 12
    categories: tuple = CATEGORIES
    predicates: tuple = DEFAULT_PREDICATES
    triplet: tuple = None    # forced (subject, predicate, object), else drawn
    video_id: str = "scene"


@dataclass
class Entity:
    category: str
    width: float
    height: float
    centers: np.ndarray       # (n_frames, 2)
    presence: tuple = None    # inclusive (first, last) on-screen frame, or None

    def box_at(self, t):
        cx, cy = self.centers[t]
        return _f32_box(cx - self.width / 2, cy - self.height / 2,
                        cx + self.width / 2, cy + self.height / 2)

    def present_at(self, t):
        if self.presence is None:
            return True
        return self.presence[0] <= t <= self.presence[1]


@dataclass
class OracleRelation:
    subject_id: int
    predicate: str
    object_id: int
    start_frame: int
    end_frame: int


@dataclass
class Scene:
    spec: SceneSpec
    features: VideoFeatures
    relations: list
    entities: list
    triplet: tuple
    intended_span: tuple
    distractor_role: str = None    # None, "subject" or "object"

    @property
    def relation_string(self):
        s, p, o = self.triplet
        return f"{s}-{p}-{o}"

    def ground_truth(self, triplet=None):
        """All oracle instances matching a relation string (default: the
        planted one)."""
        wanted = self.triplet if triplet is None else tuple(triplet)
        instances = []
        for rel in self.relations:
            subj = self.entities[rel.subject_id]
            obj = self.entities[rel.object_id]
            if (subj.category, rel.predicate, obj.category) != wanted:
                continue
            span = range(rel.start_frame, rel.end_frame + 1)
            instances.append(RelationInstance(
                Trajectory(rel.start_frame, rel.end_frame,
                           [subj.box_at(t) for t in span]),
                Trajectory(rel.start_frame, rel.end_frame,
                           [obj.box_at(t) for t in span])))
        return instances

    def extra_relations(self, limit, excluded=()):
        """Further true (relation string, instances) pairs from the oracle.

        Training on several queries against the same frames is what makes
        the reconstruction signal identify entities rather than videos: a
        representation that memorizes the clip answers one query and fails
        the siblings.  Candidates keep the benchmark predicate vocabulary,
        skip same-category pairs and anything in `excluded`, and are ranked
        so relations on the planted pair come first, longest span first.
        """
        if limit <= 0:
            return []
        allowed = set(self.spec.predicates)
        best = {}
        for rel in self.relations:
            trip = (self.entities[rel.subject_id].category, rel.predicate,
                    self.entities[rel.object_id].category)
            if (rel.predicate not in allowed or trip == self.triplet
                    or trip[0] == trip[2] or trip in excluded):
                continue
            span = rel.end_frame - rel.start_frame + 1
            outside = 0 if {rel.subject_id, rel.object_id} <= {0, 1} else 1
            rank = (outside, -span, "-".join(trip))
            if trip not in best or rank < best[trip]:
                best[trip] = rank
        ranked = sorted(best.items(), key=lambda kv: kv[1])
        return [("-".join(trip), self.ground_truth(trip))
                for trip, _ in ranked[:limit]]

    def sidecar_text(self):
        lines = [f"scene {self.features.video_id}",
                 f"query {self.relation_string}",
                 f"intended_span {self.intended_span[0]} {self.intended_span[1]}",
                 f"distractor {self.distractor_role or 'none'}",
                 "entities"]
        for i, e in enumerate(self.entities):
            lines.append(f"  {i} {e.category} {e.width:g}x{e.height:g}")
        lines.append("oracle")
        for rel in self.relations:
            subj = self.entities[rel.subject_id].category
            obj = self.entities[rel.object_id].category
            lines.append(f"  {subj}({rel.subject_id}) {rel.predicate} "
                         f"{obj}({rel.object_id}) frames "
                         f"{rel.start_frame}..{rel.end_frame}")
        return "\n".join(lines) + "\n"


def _f32_box(x0, y0, x1, y1):
    # Quantize to f32 at the source so the feature binary round-trips
    # bitwise and ground truth matches the stored grid exactly.
    q = [float(np.float32(v)) for v in (x0, y0, x1, y1)]
    return BBox(*q)


def _wobble(rng, n, amplitude):
    phase = rng.uniform(0.0, 2.0 * np.pi)
    cycles = rng.uniform(0.8, 2.2)
    t = np.arange(n)
    return amplitude * np.sin(2.0 * np.pi * cycles * t / n + phase)


def _profile(n, a, b, lo, hi):
    """Piecewise-linear per-frame values: `lo` before a, ramp to `hi` by b."""
    knots_t, knots_v = [], []
    for t, v in ((0, lo), (a, lo), (b, hi), (n - 1, hi)):
        if knots_t and t <= knots_t[-1]:
            continue
        knots_t.append(t)
        knots_v.append(v)
    if len(knots_t) == 1:
        return np.full(n, knots_v[0])
    return np.interp(np.arange(n), knots_t, knots_v)


def _static_axis(predicate):
    # Unit offset direction that puts the subject where the predicate holds.
    return {
        "left": np.array([-1.0, 0.0]),
        "right": np.array([1.0, 0.0]),
        "above": np.array([0.0, -1.0]),
        "beneath": np.array([0.0, 1.0]),
    }[predicate]


def _plan_motion(rng, spec, predicate, span):
    """Centers for subject and object such that the predicate holds with
    margin exactly over `span` and fails (with margin) outside it."""
    n = spec.n_frames
    a, b = span
    center = spec.canvas_size / 2.0

    obj_base = rng.uniform(center - 16.0, center + 16.0, size=2)
    obj = np.stack([obj_base[0] + _wobble(rng, n, rng.uniform(2.0, 5.0)),
                    obj_base[1] + _wobble(rng, n, rng.uniform(2.0, 5.0))], axis=1)

    if predicate in ("left", "right", "above", "beneath"):
        axis = _static_axis(predicate)
        perp = np.array([axis[1], axis[0]])
        hold = HOLD_OFFSET
        # Inside the span the subject sits on the predicate side; outside
        # it the pair stacks along the orthogonal axis instead, so the
        # planted arrangement is absent rather than mirrored.  (A mirrored
        # layout would make the whole-video average of the geometry vote
        # for the opposite side, decorrelating pooled features from the
        # label; neutral-orthogonal keeps a diluted but correctly signed
        # signal, which is what makes the temporal attention learnable.)
        axis_off = np.zeros(n)
        axis_off[a:b + 1] = hold
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        inner = rng.uniform(4.0, 10.0)
        perp_off = np.full(n, sign * STACK_OFFSET)
        perp_off[a:b + 1] = sign * inner
        for edge in (a - 1, b + 1):
            if 0 <= edge < n:
                axis_off[edge] = 0.0
                perp_off[edge] = sign * (STACK_OFFSET + inner) / 2.0
        subj = (obj + axis_off[:, None] * axis[None, :]
                + (perp_off + _wobble(rng, n, 2.0))[:, None] * perp[None, :])
        subj[:, 0] += _wobble(rng, n, 2.0)
        subj[:, 1] += _wobble(rng, n, 2.0)
    elif predicate in ("move_toward", "move_away"):
        r_far, r_near = 72.0, 26.0
        if predicate == "move_toward":
            radius = _profile(n, a, b, r_far, r_near)
        else:
            radius = _profile(n, a, b, r_near, r_far)
        theta = rng.uniform(0.0, 2.0 * np.pi) + _wobble(rng, n, 0.25)
        subj = obj + radius[:, None] * np.stack(
            [np.cos(theta), np.sin(theta)], axis=1)
    else:
        raise ValueError(f"no motion plan for predicate {predicate!r}")
    return subj, obj


def _constant_radius_path(rng, spec, anchor, r_lo, r_hi):
    """A path at exactly constant distance from `anchor`, biased toward the
    canvas center so boxes stay inside."""
    n = spec.n_frames
    center = spec.canvas_size / 2.0
    radius = rng.uniform(r_lo, r_hi)
    out = np.empty_like(anchor)
    for t in range(n):
        to_center = np.array([center, center]) - anchor[t]
        norm = np.linalg.norm(to_center)
        u = to_center / norm if norm > 1e-9 else np.array([1.0, 0.0])
        out[t] = anchor[t] + radius * u
    return out


def _plan_distractor(rng, spec, predicate, role, subj, obj):
    """A same-category entity placed so the planted predicate never holds
    for the pair it could be confused with."""
    n = spec.n_frames
    if predicate in ("left", "right", "above", "beneath"):
        axis = _static_axis(predicate)
        perp = np.array([axis[1], axis[0]])
        side = rng.uniform(-18.0, 18.0)
        if role == "subject":
            # Clone of the subject on the wrong side of the object.
            offset = -rng.uniform(26.0, 48.0)
            base = obj
        else:
            # Clone of the object placed beyond the subject's holding side,
            # so the subject sits on the wrong side of it.
            offset = HOLD_OFFSET + rng.uniform(18.0, 26.0)
            base = obj
        path = (base + offset * axis[None, :]
                + (side + _wobble(rng, n, 3.0))[:, None] * perp[None, :])
        return path
    # Dynamic predicates: constant distance to the partner defeats both
    # move_toward and move_away.
    anchor = obj if role == "subject" else subj
    return _constant_radius_path(rng, spec, anchor, 30.0, 56.0)


def _runs(mask):
    """Maximal runs of consecutive True values as (start, end) inclusive."""
    runs = []
    start = None
    for i, v in enumerate(mask):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def _static_mask(predicate, subj_c, obj_c, subj_area, obj_area):
    dx = obj_c[:, 0] - subj_c[:, 0]
    dy = obj_c[:, 1] - subj_c[:, 1]
    if predicate == "left":
        return dx > CENTER_GAP
    if predicate == "right":
        return -dx > CENTER_GAP
    if predicate == "above":
        return dy > CENTER_GAP
    if predicate == "beneath":
        return -dy > CENTER_GAP
    if predicate == "larger":
        return np.full(len(subj_c), subj_area > AREA_RATIO * obj_area)
    raise ValueError(f"unknown static predicate {predicate!r}")


def _dynamic_spans(predicate, subj_c, obj_c):
    """Frame spans for motion predicates: each maximal run of qualifying
    frame-to-frame transitions [i, j] covers frames i through j+1."""
    dist = np.linalg.norm(subj_c - obj_c, axis=1)
    if predicate in ("move_toward", "move_away"):
        step = dist[1:] - dist[:-1]
        ok = step < -APPROACH_MARGIN if predicate == "move_toward" else \
            step > APPROACH_MARGIN
    elif predicate == "chase":
        vs = subj_c[1:] - subj_c[:-1]
        vo = obj_c[1:] - obj_c[:-1]
        gap = obj_c[:-1] - subj_c[:-1]

        def _cos(u, v):
            nu = np.linalg.norm(u, axis=1)
            nv = np.linalg.norm(v, axis=1)
            denom = np.where(nu * nv > 1e-9, nu * nv, 1.0)
            return (u * v).sum(axis=1) / denom

        ok = ((_cos(vs, gap) > CHASE_ALIGN) & (_cos(vo, gap) > CHASE_ALIGN)
              & (np.linalg.norm(vs, axis=1) > CHASE_SPEED)
              & (np.linalg.norm(vo, axis=1) > CHASE_SPEED))
    else:
        raise ValueError(f"unknown dynamic predicate {predicate!r}")
    return [(start, end + 1) for start, end in _runs(ok)]


def compute_oracle(entities):
    """All relations that hold between any entity pair for >= MIN_SPAN
    frames, from the emitted geometry.  A relation only exists on frames
    where both entities are on screen."""
    relations = []
    n = len(entities[0].centers) if entities else 0
    centers = [e.centers for e in entities]
    areas = [e.width * e.height for e in entities]
    present = [np.array([e.present_at(t) for t in range(n)])
               for e in entities]
    for i in range(len(entities)):
        for j in range(len(entities)):
            if i == j:
                continue
            both = present[i] & present[j]
            for predicate in STATIC_SET:
                mask = _static_mask(predicate, centers[i], centers[j],
                                    areas[i], areas[j]) & both
                for start, end in _runs(mask):
                    if end - start + 1 >= MIN_SPAN:
                        relations.append(OracleRelation(i, predicate, j, start, end))
            for predicate in DYNAMIC_SET:
                for start, end in _dynamic_spans(predicate, centers[i], centers[j]):
                    frames = np.zeros(n, dtype=bool)
                    frames[start:end + 1] = True
                    for s2, e2 in _runs(frames & both):
                        if e2 - s2 + 1 >= MIN_SPAN:
                            relations.append(OracleRelation(i, predicate, j, s2, e2))
    return relations


def _appearance(rng, spec, category_index):
    vec = rng.normal(0.0, spec.appearance_noise, spec.appearance_dim)
    if category_index is not None:
        vec[category_index] += 1.0
    return vec


def _build_features(rng, spec, entities):
    n, m = spec.n_frames, spec.regions_per_frame
    cat_index = {c: k for k, c in enumerate(spec.categories)}
    jitter_source = int(rng.integers(len(entities)))
    regions = []
    for t in range(n):
        slots = []
        for e in entities:
            if e.present_at(t):
                slots.append((e.box_at(t), cat_index[e.category]))
        src = entities[jitter_source]
        if src.present_at(t) and len(slots) < m:
            # near-duplicate proposal of one entity, as real detectors emit
            base = src.box_at(t)
            dx, dy = rng.uniform(-3.0, 3.0, size=2)
            jittered = _f32_box(base.x_min + dx, base.y_min + dy,
                                base.x_max + dx, base.y_max + dy)
            slots.append((jittered.clamped(spec.canvas_size, spec.canvas_size),
                          cat_index[src.category]))
        while len(slots) < m:
            cx, cy = rng.uniform(24.0, spec.canvas_size - 24.0, size=2)
            w, h = rng.uniform(15.0, 50.0, size=2)
            clutter = _f32_box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
            slots.append((clutter.clamped(spec.canvas_size, spec.canvas_size),
                          None))
        slots.sort(key=lambda s: (s[0].x_min, s[0].y_min, s[0].x_max, s[0].y_max))
        regions.append([RegionProposal(box, _appearance(rng, spec, ci))
                        for box, ci in slots])
    return VideoFeatures(spec.video_id, spec.canvas_size, spec.canvas_size,
                         n, list(range(n)), regions)


def _attempt_scene(spec, rng):
    if spec.max_entities < 2 or spec.min_entities < 2:
        raise ValueError("a scene needs at least two entities to relate")
    if spec.max_entities > spec.regions_per_frame:
        raise ValueError(
            f"{spec.max_entities} entities cannot fit {spec.regions_per_frame} "
            f"region slots")
    if len(spec.categories) > spec.appearance_dim:
        raise ValueError("appearance dimension smaller than the category count")
    cats = list(spec.categories)
    if spec.triplet is not None:
        subj_cat, predicate, obj_cat = spec.triplet
    else:
        subj_cat, obj_cat = (str(c) for c in rng.choice(cats, size=2, replace=False))
        predicate = spec.predicates[int(rng.integers(len(spec.predicates)))]
    length = int(rng.integers(spec.span_min, spec.span_max + 1))
    start = int(rng.integers(spec.n_frames - length + 1))
    span = (start, start + length - 1)

    subj_path, obj_path = _plan_motion(rng, spec, predicate, span)
    sizes = rng.uniform(22.0, 40.0, size=(2, 2))
    entities = [
        Entity(subj_cat, sizes[0, 0], sizes[0, 1], subj_path),
        Entity(obj_cat, sizes[1, 0], sizes[1, 1], obj_path),
    ]

    n_entities = int(rng.integers(spec.min_entities, spec.max_entities + 1))
    distractor_role = None
    if rng.random() < spec.distractor_prob:
        distractor_role = "subject" if rng.random() < 0.5 else "object"
        d_path = _plan_distractor(rng, spec, predicate, distractor_role,
                                  subj_path, obj_path)
        d_size = rng.uniform(22.0, 40.0, size=2)
        d_cat = subj_cat if distractor_role == "subject" else obj_cat
        entities.append(Entity(d_cat, d_size[0], d_size[1], d_path))
    other_cats = [c for c in cats if c not in (subj_cat, obj_cat)]
    while len(entities) < n_entities:
        cat = other_cats[int(rng.integers(len(other_cats)))]
        base = rng.uniform(64.0, spec.canvas_size - 64.0, size=2)
        path = np.stack(
            [base[0] + _wobble(rng, spec.n_frames, rng.uniform(4.0, 12.0)),
             base[1] + _wobble(rng, spec.n_frames, rng.uniform(4.0, 12.0))],
            axis=1)
        size = rng.uniform(22.0, 40.0, size=2)
        entities.append(Entity(cat, size[0], size[1], path))

    # Snap centers to the f32 grid the boxes will live on, then take truth
    # from the snapped geometry.
    for e in entities:
        e.width = float(np.float32(e.width))
        e.height = float(np.float32(e.height))
        boxes = [e.box_at(t) for t in range(spec.n_frames)]
        e.centers = np.array([[(b.x_min + b.x_max) / 2.0,
                               (b.y_min + b.y_max) / 2.0] for b in boxes])

    for e in entities:
        for t in range(spec.n_frames):
            box = e.box_at(t)
            if (box.x_min < 0 or box.y_min < 0
                    or box.x_max > spec.canvas_size
                    or box.y_max > spec.canvas_size):
                return None

    relations = compute_oracle(entities)
    triplet = (subj_cat, predicate, obj_cat)
    planted_ok = False
    rogue_pair = False
    a, b = span
    for rel in relations:
        rel_triplet = (entities[rel.subject_id].category, rel.predicate,
                       entities[rel.object_id].category)
        if rel_triplet != triplet:
            continue
        if (rel.subject_id, rel.object_id) == (0, 1):
            covered = min(rel.end_frame, b) - max(rel.start_frame, a) + 1
            if covered >= 0.8 * (b - a + 1):
                planted_ok = True
        else:
            rogue_pair = True
    if not planted_ok or rogue_pair:
        return None
    features = _build_features(rng, spec, entities)
    return Scene(spec, features, relations, entities, triplet, span,
                 distractor_role)


def build_scene(spec, attempts=20):
    """Generate one scene, retrying with derived seeds when the sampled
    geometry does not realize the planted relation cleanly."""
    for attempt in range(attempts):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([_seed_entropy(spec.seed), attempt])))
        scene = _attempt_scene(spec, rng)
        if scene is not None:
            return scene
    raise RuntimeError(
        f"could not realize a valid scene for {spec.video_id} "
        f"after {attempts} attempts")


def _seed_entropy(seed):
    if isinstance(seed, (tuple, list)):
        return int(np.random.SeedSequence(list(seed)).generate_state(1)[0])
    return int(seed)


def generate_scene(spec):
    """(VideoFeatures, oracle relations) for one deterministic scene."""
    scene = build_scene(spec)
    return scene.features, scene.relations


def _coverage_triplets(categories, predicates, excluded):
    """A small deterministic triplet list in which every category and every
    predicate occurs, avoiding the excluded (zero-shot) triplets."""
    cats = list(categories)
    k = len(cats)
    out = []
    for i, pred in enumerate(predicates):
        for shift in range(1, k):
            trip = (cats[i % k], pred, cats[(i + shift) % k])
            if trip not in excluded:
                out.append(trip)
                break
    covered = {t[0] for t in out} | {t[2] for t in out}
    for cat in cats:
        if cat in covered:
            continue
        for pred in predicates:
            for other in cats:
                trip = (cat, pred, other)
                if other != cat and trip not in excluded:
                    out.append(trip)
                    covered.add(cat)
                    break
            if cat in covered:
                break
    return out


def emit_dataset(out_dir, train_count, test_count, spec=None,
                 zero_shot_fraction=0.2, seed=0, jobs=1, extra_queries=2):
    """Write a complete train/test benchmark under out_dir.

    Produces feature binaries, ground-truth files, per-scene sidecars and
    four manifests: train, test, the distractor subset of test, and the
    constructed zero-shot subset of test.  Each training scene additionally
    contributes up to `extra_queries` sibling relation rows (see
    Scene.extra_relations); test scenes keep one query each.  Returns
    (train_manifest_path, test_manifest_path).
    """
    if train_count < 1 or test_count < 1:
        raise ValueError("train and test counts must be at least 1")
    if not 0.0 <= zero_shot_fraction < 1.0:
        raise ValueError(f"zero-shot fraction {zero_shot_fraction} outside [0, 1)")
    spec = spec or SceneSpec()
    for sub in ("features", "gt", "scenes"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(
        [_seed_entropy(seed), 2, 0])))

    cats = list(spec.categories)
    all_triplets = [(s, p, o) for s in cats for o in cats if s != o
                    for p in spec.predicates]
    zs_count = int(round(zero_shot_fraction * test_count))
    zs_pool_size = min(4, max(1, zs_count)) if zs_count else 0
    zs_pool = []
    if zs_pool_size:
        picks = rng.choice(len(all_triplets), size=zs_pool_size, replace=False)
        zs_pool = [all_triplets[i] for i in sorted(int(p) for p in picks)]
    usable = [t for t in all_triplets if t not in zs_pool]
    if not usable:
        raise ValueError("zero-shot pool exhausted every possible triplet")

    train_triplets = list(_coverage_triplets(cats, spec.predicates, set(zs_pool)))
    while len(train_triplets) < train_count:
        train_triplets.append(usable[int(rng.integers(len(usable)))])
    train_triplets = train_triplets[:train_count]

    seen = sorted(set(train_triplets))
    zs_flags = np.zeros(test_count, dtype=bool)
    zs_positions = rng.permutation(test_count)[:zs_count]
    zs_flags[zs_positions] = True
    test_triplets = []
    zs_used = 0
    for i in range(test_count):
        if zs_flags[i]:
            test_triplets.append(zs_pool[zs_used % len(zs_pool)])
            zs_used += 1
        else:
            test_triplets.append(seen[int(rng.integers(len(seen)))])

    def scene_specs(prefix, stream, triplets):
        return [replace(spec, seed=(_seed_entropy(seed), stream, i),
                        triplet=trip, video_id=f"{prefix}{i:04d}")
                for i, trip in enumerate(triplets)]

    train_specs = scene_specs("train", 0, train_triplets)
    test_specs = scene_specs("test", 1, test_triplets)

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            train_scenes = list(pool.map(build_scene, train_specs, chunksize=8))
            test_scenes = list(pool.map(build_scene, test_specs, chunksize=8))
    else:
        train_scenes = [build_scene(s) for s in train_specs]
        test_scenes = [build_scene(s) for s in test_specs]

    header = [
        "synthetic relation grounding benchmark",
        f"canvas {spec.canvas_size:g}px, {spec.n_frames} frames, "
        f"{spec.regions_per_frame} regions/frame, appearance dim "
        f"{spec.appearance_dim}, noise {spec.appearance_noise:g}",
        f"categories: {' '.join(cats)}",
        f"predicates: {' '.join(spec.predicates)}",
        f"thresholds: center gap > {CENTER_GAP:g}px (left/right/above/beneath), "
        f"area ratio > {AREA_RATIO:g} (larger), distance step > "
        f"{APPROACH_MARGIN:g}px/frame (move_toward/move_away), "
        f"min span {MIN_SPAN} frames",
        f"distractor probability {spec.distractor_prob:g}, "
        f"zero-shot fraction {zero_shot_fraction:g}, "
        f"extra train queries {extra_queries}, seed {seed}",
    ]
    zs_set = set(zs_pool)

    def write_split(name, scenes, extra):
        entries = []
        for scene in scenes:
            vid = scene.features.video_id
            feat_rel = os.path.join("features", f"{vid}.bin")
            gt_rel = os.path.join("gt", f"{vid}.txt")
            save_video_features(scene.features, os.path.join(out_dir, feat_rel))
            write_ground_truth(scene.ground_truth(),
                               os.path.join(out_dir, gt_rel))
            with open(os.path.join(out_dir, "scenes", f"{vid}.txt"), "w") as fh:
                fh.write(scene.sidecar_text())
            entries.append((vid, feat_rel, scene.relation_string, gt_rel))
            for k, (rel_str, instances) in enumerate(
                    scene.extra_relations(extra, zs_set)):
                side_gt = os.path.join("gt", f"{vid}_q{k + 1}.txt")
                write_ground_truth(instances, os.path.join(out_dir, side_gt))
                entries.append((vid, feat_rel, rel_str, side_gt))
        path = os.path.join(out_dir, f"{name}.manifest")
        write_manifest(entries, path, header_comments=header)
        return path, entries

    train_path, _ = write_split("train", train_scenes, extra_queries)
    test_path, test_entries = write_split("test", test_scenes, 0)

    distractor_entries = [e for e, scene in zip(test_entries, test_scenes)
                          if scene.distractor_role is not None]
    write_manifest(distractor_entries,
                   os.path.join(out_dir, "test_distractor.manifest"),
                   header_comments=header + ["distractor subset of test"])
    zs_entries = [e for e, flag in zip(test_entries, zs_flags) if flag]
    write_manifest(zs_entries,
                   os.path.join(out_dir, "test_zeroshot.manifest"),
                   header_comments=header + ["zero-shot subset of test"])
    return train_path, test_path
