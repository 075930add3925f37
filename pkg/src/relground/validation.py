"""Input checks shared by the estimator and the command line."""


def require_samples(samples, what="samples"):
    samples = list(samples)
    if not samples:
        raise ValueError(f"no {what} provided")
    return samples


def require_features(samples):
    """Every sample must carry a region grid with consistent dimensions."""
    first = None
    for s in samples:
        if s.features is None:
            raise ValueError(f"sample {s.video_id} has no video features")
        dims = (s.features.n_frames, s.features.regions_per_frame,
                s.features.appearance_dim)
        if first is None:
            first = dims
        elif dims != first:
            raise ValueError(
                f"sample {s.video_id} has grid {dims}, earlier samples "
                f"have {first}")
    return samples


def require_ground_truth(samples, what="samples"):
    samples = require_samples(samples, what)
    for s in samples:
        if not s.instances:
            raise ValueError(
                f"sample {s.video_id} / {s.query.raw} has no ground truth")
    return samples


def check_fraction(name, value):
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must be in (0, 1), got {value}")
    return value
