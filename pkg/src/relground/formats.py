"""On-disk formats: region-feature binaries, parameter checkpoints, and the
line-delimited text files (manifest, ground truth, grounding results,
accuracy reports, training logs).

Binary layouts are little-endian and versioned; loaders validate magic,
version and payload length before touching content.  Text floats are
written with repr() so a write/read/write cycle is byte-stable.
"""

import os
import struct

import numpy as np

from .data import (BBox, RegionProposal, RelationInstance, Trajectory,
                   VideoFeatures, VideoRelationSample, tokenize_relation)

FEATURE_MAGIC = b"VRGV"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"VRGW"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    pass


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(
            f"truncated {what}: expected {n} bytes, got {len(data)}")
    return data


# ---------------------------------------------------------------------------
# region feature binary

def save_video_features(video, path):
    n = video.n_frames
    m = video.regions_per_frame
    d_app = video.appearance_dim
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIII", FEATURE_VERSION, n, m, d_app))
        fh.write(struct.pack("<ff", video.frame_width, video.frame_height))
        fh.write(struct.pack("<I", video.total_frames))
        fh.write(struct.pack(f"<{n}I", *video.sampled_frame_indices))
        for row in video.regions:
            for r in row:
                fh.write(np.asarray(r.box.as_array(), dtype="<f4").tobytes())
                fh.write(np.asarray(r.appearance, dtype="<f4").tobytes())


def load_video_features(path, video_id=None):
    """Read a feature binary; boxes leaking past the frame are clamped and
    counted in the returned object's clamp_warnings."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "feature header")
        if magic != FEATURE_MAGIC:
            raise FormatError(
                f"bad feature magic {magic!r} in {path} (expected {FEATURE_MAGIC!r})")
        version, n, m, d_app = struct.unpack("<IIII", _read_exact(fh, 16, "feature header"))
        if version != FEATURE_VERSION:
            raise FormatError(f"unsupported feature version {version} in {path}")
        width, height = struct.unpack("<ff", _read_exact(fh, 8, "feature header"))
        (total_frames,) = struct.unpack("<I", _read_exact(fh, 4, "feature header"))
        expected = 32 + 4 * n + n * m * 4 * (4 + d_app)
        if size != expected:
            raise FormatError(
                f"feature file {path} is {size} bytes, header implies {expected}")
        indices = struct.unpack(f"<{n}I", _read_exact(fh, 4 * n, "sampled indices"))
        record = 4 * (4 + d_app)
        payload = _read_exact(fh, n * m * record, "region records")
    flat = np.frombuffer(payload, dtype="<f4").reshape(n * m, 4 + d_app)
    clamped = 0
    regions = []
    pos = 0
    for _ in range(n):
        row = []
        for _ in range(m):
            rec = flat[pos]
            pos += 1
            box = BBox(float(rec[0]), float(rec[1]), float(rec[2]), float(rec[3]))
            inside = box.clamped(width, height)
            if inside != box:
                clamped += 1
                box = inside
            row.append(RegionProposal(box, rec[4:].astype(np.float64)))
        regions.append(row)
    return VideoFeatures(
        video_id if video_id is not None else os.path.splitext(os.path.basename(path))[0],
        width, height, total_frames, list(indices), regions,
        clamp_warnings=clamped)


# ---------------------------------------------------------------------------
# parameter checkpoint

def save_checkpoint(store, path):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(store)))
        for name, tensor in store.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            dims = tensor.data.shape
            fh.write(struct.pack("<B", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint into an ordered name -> float64 array mapping."""
    arrays = {}
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "checkpoint header")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(
                f"bad checkpoint magic {magic!r} in {path} "
                f"(expected {CHECKPOINT_MAGIC!r})")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "checkpoint header"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version} in {path}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "parameter name"))
            name = _read_exact(fh, name_len, "parameter name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "parameter rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "parameter dims"))
            payload = _read_exact(fh, 8 * int(np.prod(dims)), f"payload of {name!r}")
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"trailing bytes after {count} parameters in {path}")
    return arrays


# ---------------------------------------------------------------------------
# manifest

def write_manifest(entries, path, header_comments=()):
    """entries: (video_id, feature_path, relation, gt_path or None)."""
    with open(path, "w") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        for video_id, feat, relation, gt in entries:
            cols = [video_id, feat, relation] + ([gt] if gt else [])
            fh.write("\t".join(cols) + "\n")


def read_manifest(path):
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) not in (3, 4):
                raise FormatError(
                    f"{path}:{lineno}: expected 3 or 4 tab-separated columns, "
                    f"got {len(cols)}")
            video_id, feat, relation = cols[:3]
            gt = cols[3] if len(cols) == 4 else None
            entries.append((video_id, feat, relation, gt))
    return entries


def load_samples(manifest_path, with_features=True, with_ground_truth=True):
    """Materialize manifest entries; paths are relative to the manifest."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    samples = []
    for video_id, feat, relation, gt in read_manifest(manifest_path):
        query = tokenize_relation(relation)
        features = None
        if with_features:
            features = load_video_features(os.path.join(base, feat), video_id)
        instances = []
        if with_ground_truth and gt:
            instances = read_ground_truth(os.path.join(base, gt))
        samples.append(VideoRelationSample(video_id, query, features, instances))
    return samples


# ---------------------------------------------------------------------------
# ground truth

def _format_box(box):
    return f"{box.x_min!r} {box.y_min!r} {box.x_max!r} {box.y_max!r}"


def _parse_box(parts, where):
    if len(parts) != 4:
        raise FormatError(f"{where}: expected 4 box coordinates, got {len(parts)}")
    return BBox(*(float(p) for p in parts))


def write_ground_truth(instances, path):
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(f"instance {inst.start_frame} {inst.end_frame}\n")
            for role, traj in (("subject", inst.subject), ("object", inst.object)):
                fh.write(f"{role}\n")
                for box in traj.boxes:
                    fh.write(_format_box(box) + "\n")


def read_ground_truth(path):
    instances = []
    with open(path) as fh:
        lines = [l.rstrip("\n") for l in fh]
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines) and (not lines[pos] or lines[pos].startswith("#")):
            pos += 1
        if pos >= len(lines):
            return None
        pos += 1
        return lines[pos - 1]

    while True:
        line = next_line()
        if line is None:
            break
        head = line.split()
        if head[0] != "instance" or len(head) != 3:
            raise FormatError(f"{path}: expected 'instance <start> <end>', got {line!r}")
        start, end = int(head[1]), int(head[2])
        span = end - start + 1
        trajs = {}
        for role in ("subject", "object"):
            role_line = next_line()
            if role_line != role:
                raise FormatError(f"{path}: expected {role!r} line, got {role_line!r}")
            boxes = []
            for _ in range(span):
                box_line = next_line()
                if box_line is None:
                    raise FormatError(f"{path}: truncated {role} box list")
                boxes.append(_parse_box(box_line.split(), f"{path} ({role})"))
            trajs[role] = Trajectory(start, end, boxes)
        instances.append(RelationInstance(trajs["subject"], trajs["object"]))
    return instances


# ---------------------------------------------------------------------------
# grounding results

def write_grounding_results(results, path):
    """results: list of (video_id, relation, GroundingResult)."""
    with open(path, "w") as fh:
        for video_id, relation, res in results:
            subj, obj = res.subject, res.object
            fh.write(f"result {video_id} {relation} {subj.start_frame} "
                     f"{subj.end_frame} {res.score!r}\n")
            for offset in range(len(subj)):
                frame = subj.start_frame + offset
                fh.write(f"{frame} {_format_box(subj.boxes[offset])} "
                         f"{_format_box(obj.boxes[offset])}\n")


def read_grounding_results(path):
    from .linking import GroundingResult  # local import to avoid a cycle
    results = []
    with open(path) as fh:
        lines = [l.rstrip("\n") for l in fh if l.strip() and not l.startswith("#")]
    pos = 0
    while pos < len(lines):
        head = lines[pos].split()
        pos += 1
        if head[0] != "result" or len(head) != 6:
            raise FormatError(f"{path}: bad result header {lines[pos - 1]!r}")
        video_id, relation = head[1], head[2]
        start, end, score = int(head[3]), int(head[4]), float(head[5])
        span = end - start + 1
        subj_boxes, obj_boxes = [], []
        for offset in range(span):
            if pos >= len(lines):
                raise FormatError(f"{path}: truncated result for {video_id}")
            parts = lines[pos].split()
            pos += 1
            if len(parts) != 9 or int(parts[0]) != start + offset:
                raise FormatError(f"{path}: bad box line {lines[pos - 1]!r}")
            subj_boxes.append(_parse_box(parts[1:5], path))
            obj_boxes.append(_parse_box(parts[5:9], path))
        results.append((video_id, relation, GroundingResult(
            Trajectory(start, end, subj_boxes),
            Trajectory(start, end, obj_boxes),
            score, [])))
    return results


# ---------------------------------------------------------------------------
# accuracy report and training log

def write_accuracy_report(report, path):
    with open(path, "w") as fh:
        fh.write(f"pairs {report.sample_count}\n")
        for tau in report.spatial_thresholds:
            s, o, r = report.per_threshold[tau]
            fh.write(f"siou {tau!r} acc_s {s!r} acc_o {o!r} acc_r {r!r}\n")
        s, o, r = report.average
        fh.write(f"average acc_s {s!r} acc_o {o!r} acc_r {r!r}\n")


def format_accuracy_table(report, title="results"):
    """Aligned percentage table: one row per spatial threshold plus Average."""
    lines = [f"{title} ({report.sample_count} pairs)"]
    lines.append(f"{'':>10} {'Acc_S':>8} {'Acc_O':>8} {'Acc_R':>8}")
    for tau in report.spatial_thresholds:
        s, o, r = report.per_threshold[tau]
        lines.append(f"{'sIoU=' + format(tau, 'g'):>10} "
                     f"{100 * s:8.2f} {100 * o:8.2f} {100 * r:8.2f}")
    s, o, r = report.average
    lines.append(f"{'Average':>10} {100 * s:8.2f} {100 * o:8.2f} {100 * r:8.2f}")
    return "\n".join(lines)


def write_training_log(records, path):
    """records: (epoch, split, loss, iso_timestamp) tuples."""
    with open(path, "w") as fh:
        for epoch, split, loss, stamp in records:
            fh.write(f"epoch {epoch} {split} {loss!r} {stamp}\n")


# ---------------------------------------------------------------------------
# embedding text files

def load_embedding_text(path, table):
    """Read "token v1 ... vD" lines into an existing EmbeddingTable."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != table.dimension:
                raise FormatError(
                    f"{path}:{lineno}: {len(values)} values for dimension "
                    f"{table.dimension}")
            table.put(token, np.array([float(v) for v in values]))
    return table
