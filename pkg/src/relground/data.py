"""Domain types shared across the package: boxes, region grids, relation
queries, trajectories, word embeddings and the decoder vocabulary."""

import hashlib
from dataclasses import dataclass, field

import numpy as np

START_TOKEN = "<start>"
END_TOKEN = "<end>"
PAD_TOKEN = "<pad>"
RESERVED_TOKENS = (START_TOKEN, END_TOKEN, PAD_TOKEN)


class RelationParseError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"box coordinates must be finite, got {vals}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box {vals}")

    @property
    def area(self):
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def clamped(self, width, height):
        return BBox(
            min(max(self.x_min, 0.0), width),
            min(max(self.y_min, 0.0), height),
            min(max(self.x_max, 0.0), width),
            min(max(self.y_max, 0.0), height),
        )

    def as_array(self):
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max])


def geometry_feature(box, width, height):
    """Normalized location/size descriptor: corners over frame dims plus
    relative area, each in [0, 1] for boxes inside the frame."""
    if width <= 0 or height <= 0:
        raise ValueError(f"frame dimensions must be positive, got {width}x{height}")
    return np.array([
        box.x_min / width,
        box.y_min / height,
        box.x_max / width,
        box.y_max / height,
        box.area / (width * height),
    ])


@dataclass(frozen=True)
class RegionProposal:
    box: BBox
    appearance: np.ndarray

    def __post_init__(self):
        app = np.ascontiguousarray(self.appearance, dtype=np.float64)
        if not np.all(np.isfinite(app)):
            raise ValueError("region appearance contains non-finite values")
        object.__setattr__(self, "appearance", app)


class VideoFeatures:
    """Per-frame region grid for one video: the model's only view of it.

    regions[i][j] is proposal j of sampled frame i; every sampled frame
    carries exactly `regions_per_frame` proposals.
    """

    def __init__(self, video_id, frame_width, frame_height, total_frames,
                 sampled_frame_indices, regions, clamp_warnings=0):
        idx = list(int(i) for i in sampled_frame_indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"sampled frame indices not strictly increasing: {idx}")
        if idx and (idx[0] < 0 or idx[-1] >= total_frames):
            raise ValueError(
                f"sampled indices {idx[0]}..{idx[-1]} outside [0, {total_frames})")
        counts = {len(row) for row in regions}
        if len(counts) != 1:
            raise ValueError(f"uneven region counts per frame: {sorted(counts)}")
        if len(regions) != len(idx):
            raise ValueError(
                f"{len(regions)} region rows for {len(idx)} sampled frames")
        self.video_id = video_id
        self.frame_width = float(frame_width)
        self.frame_height = float(frame_height)
        self.total_frames = int(total_frames)
        self.sampled_frame_indices = idx
        self.regions = regions
        self.clamp_warnings = clamp_warnings

    @property
    def n_frames(self):
        return len(self.sampled_frame_indices)

    @property
    def regions_per_frame(self):
        return len(self.regions[0])

    @property
    def appearance_dim(self):
        return self.regions[0][0].appearance.shape[0]

    def appearance_matrix(self):
        """All appearance vectors stacked frame-major: (n_frames*m, d_app)."""
        return np.stack([r.appearance for row in self.regions for r in row])

    def geometry_matrix(self):
        """Normalized geometry descriptors stacked frame-major: (n_frames*m, 5)."""
        return np.stack([
            geometry_feature(r.box, self.frame_width, self.frame_height)
            for row in self.regions for r in row])

    def boxes(self):
        """Region boxes as a list of per-frame lists."""
        return [[r.box for r in row] for row in self.regions]


@dataclass(frozen=True)
class RelationQuery:
    subject_tokens: tuple
    predicate_tokens: tuple
    object_tokens: tuple
    raw: str

    def all_tokens(self):
        return self.subject_tokens + self.predicate_tokens + self.object_tokens

    @property
    def subject(self):
        return "_".join(self.subject_tokens)

    @property
    def predicate(self):
        return "_".join(self.predicate_tokens)

    @property
    def object(self):
        return "_".join(self.object_tokens)


def tokenize_relation(raw):
    """Parse "subject-predicate-object" where '_' separates words in a part."""
    parts = raw.split("-")
    if len(parts) != 3:
        raise RelationParseError(
            f"relation {raw!r} must have exactly three '-'-separated parts")
    names = ("subject", "predicate", "object")
    token_lists = []
    for name, part in zip(names, parts):
        if not part:
            raise RelationParseError(f"empty {name} in relation {raw!r}")
        tokens = tuple(w.lower() for w in part.split("_"))
        if any(not w for w in tokens):
            raise RelationParseError(f"empty word in {name} of relation {raw!r}")
        token_lists.append(tokens)
    return RelationQuery(token_lists[0], token_lists[1], token_lists[2], raw)


def format_relation(query):
    return "-".join([query.subject, query.predicate, query.object])


class EmbeddingTable:
    """Token vectors with a deterministic fallback for unknown tokens.

    Known vectors can be loaded from a text file; anything else falls back
    to a unit-norm pseudo-random vector keyed by a stable hash of the token
    and the table seed, so results do not depend on process state.
    """

    def __init__(self, dimension=300, vectors=None, fallback_seed=0):
        self.dimension = int(dimension)
        self.fallback_seed = int(fallback_seed)
        self._vectors = {}
        for token, vec in (vectors or {}).items():
            self.put(token, vec)

    def put(self, token, vector):
        v = np.ascontiguousarray(vector, dtype=np.float64)
        if v.shape != (self.dimension,):
            raise ValueError(
                f"vector for {token!r} has shape {v.shape}, table dimension "
                f"is {self.dimension}")
        self._vectors[token] = v

    def __contains__(self, token):
        return token in self._vectors

    def __len__(self):
        return len(self._vectors)

    def _fallback(self, token):
        digest = hashlib.blake2b(
            f"{self.fallback_seed}:{token}".encode(), digest_size=8).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
        v = rng.standard_normal(self.dimension)
        return v / np.linalg.norm(v)

    def lookup(self, token):
        known = self._vectors.get(token)
        return known if known is not None else self._fallback(token)


def embed_tokens(tokens, table, mode="average"):
    """Vector for a word or phrase: first token or the arithmetic mean."""
    if not tokens:
        raise ValueError("cannot embed an empty token list")
    if mode == "single":
        return table.lookup(tokens[0])
    if mode == "average":
        return np.mean([table.lookup(t) for t in tokens], axis=0)
    raise ValueError(f"unknown embedding mode {mode!r}")


class Vocabulary:
    """Bijective token/index mapping with reserved tokens at indices 0-2."""

    def __init__(self, tokens):
        self.tokens = list(RESERVED_TOKENS)
        seen = set(self.tokens)
        for t in tokens:
            if t in seen:
                continue
            seen.add(t)
            self.tokens.append(t)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def from_queries(cls, queries):
        words = sorted({t for q in queries for t in q.all_tokens()})
        return cls(words)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def to_index(self, token):
        try:
            return self.index[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def to_token(self, idx):
        return self.tokens[idx]

    @property
    def start_index(self):
        return self.index[START_TOKEN]

    @property
    def end_index(self):
        return self.index[END_TOKEN]


@dataclass
class Trajectory:
    """One bounding box per frame over a contiguous original-frame span."""
    start_frame: int
    end_frame: int
    boxes: list

    def __post_init__(self):
        expected = self.end_frame - self.start_frame + 1
        if self.end_frame < self.start_frame:
            raise ValueError(
                f"trajectory span [{self.start_frame}, {self.end_frame}] is empty")
        if len(self.boxes) != expected:
            raise ValueError(
                f"trajectory over [{self.start_frame}, {self.end_frame}] needs "
                f"{expected} boxes, got {len(self.boxes)}")

    def __len__(self):
        return len(self.boxes)

    def box_at(self, frame):
        if frame < self.start_frame or frame > self.end_frame:
            raise IndexError(f"frame {frame} outside trajectory span")
        return self.boxes[frame - self.start_frame]


@dataclass
class RelationInstance:
    """Ground-truth subject/object trajectory pair over a shared span."""
    subject: Trajectory
    object: Trajectory

    def __post_init__(self):
        if (self.subject.start_frame != self.object.start_frame
                or self.subject.end_frame != self.object.end_frame):
            raise ValueError("instance subject/object spans differ")

    @property
    def start_frame(self):
        return self.subject.start_frame

    @property
    def end_frame(self):
        return self.subject.end_frame


@dataclass
class VideoRelationSample:
    """One (video, relation) training or evaluation item.

    `instances` is evaluation-only ground truth; the training loop receives
    samples with it stripped.
    """
    video_id: str
    query: RelationQuery
    features: VideoFeatures = None
    instances: list = field(default_factory=list)

    def without_ground_truth(self):
        return VideoRelationSample(self.video_id, self.query, self.features, [])

    @property
    def key(self):
        return (self.video_id, format_relation(self.query))
