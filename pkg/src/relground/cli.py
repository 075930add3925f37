"""Command line surface: dataset generation, training, grounding,
evaluation, and a finite-difference self check.

    relground gen --out data --train-count 500 --test-count 100
    relground train --manifest data/train.manifest --checkpoint model.ckpt
    relground ground --manifest data/test.manifest --checkpoint model.ckpt \
        --out results.txt
    relground eval --manifest data/test.manifest --results results.txt
    relground gradcheck

Settings merge in three layers: built-in defaults, then a flat key=value
config file (--config), then explicit flags.  Exit codes: 0 success,
1 usage or configuration error, 2 runtime failure.
"""

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import autodiff as ad
from .data import EmbeddingTable, RelationParseError, format_relation
from .estimator import SIGMA_GRID, RelationGrounder
from .formats import (FormatError, format_accuracy_table, load_checkpoint,
                      load_embedding_text, load_samples,
                      read_grounding_results, write_accuracy_report,
                      write_grounding_results, write_training_log)
from .linking import ground, random_baseline
from .metrics import accuracy, filter_by_predicate, zero_shot_split
from .network import GroundingNetwork, NetworkConfig
from .synth import SceneSpec, emit_dataset
from .validation import require_ground_truth

DEFAULTS = {
    "n_frames": 120,
    "clip_len": 12,
    "regions_per_frame": 40,
    "appearance_dim": 2048,
    "region_dim": 256,
    "word_dim": 300,
    "attn_dim": 256,
    "hidden_dim": 512,
    "token_dim": 256,
    "dropout": 0.2,
    "lr": 1e-4,
    "batch_size": 32,
    "max_epochs": 20,
    "patience": 3,
    "validation_fraction": 0.1,
    "sigma": 0.04,
    "grad_clip": 5.0,
    "use_msg": True,
    "use_clip": True,
    "use_tau": True,
    "use_predicate": True,
    "seed": 0,
    "embed_seed": 0,
}

# Disabling the clip level leaves only the frame attention, whose mass is
# spread over many frames; the usable threshold is far smaller.
NO_CLIP_SIGMA = 1e-4


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_value(key, text):
    kind = type(DEFAULTS[key])
    if kind is bool:
        low = text.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {key}: expected a boolean, got {text!r}")
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(
            f"config key {key}: expected {kind.__name__}, got {text!r}")


def load_config(path):
    """Flat "key = value" lines; '#' comments and blank lines ignored."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, text = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, text)
    return values


# flag destinations that feed the merged settings, keyed by config name
_FLAG_KEYS = {
    "clip_len": "clip_len", "region_dim": "region_dim",
    "word_dim": "word_dim", "attn_dim": "attn_dim",
    "hidden_dim": "hidden_dim", "token_dim": "token_dim",
    "dropout": "dropout", "lr": "lr", "batch_size": "batch_size",
    "epochs": "max_epochs", "patience": "patience",
    "validation_fraction": "validation_fraction", "sigma": "sigma",
    "grad_clip": "grad_clip", "seed": "seed", "embed_seed": "embed_seed",
}


def _add_model_flags(parser, training):
    parser.add_argument("--config", help="flat key=value settings file")
    parser.add_argument("--clip-len", type=int, dest="clip_len")
    parser.add_argument("--sigma", type=float,
                        help="temporal attention threshold")
    parser.add_argument("--no-msg", action="store_true",
                        help="disable message passing between the roles")
    parser.add_argument("--no-clip", action="store_true",
                        help="disable the clip level of the encoder")
    parser.add_argument("--no-tau", action="store_true",
                        help="uniform temporal weights and mean pooling")
    parser.add_argument("--co-occur", action="store_true",
                        help="drop the predicate from queries and targets")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--embed-seed", type=int,
                        help="seed for fallback word vectors")
    parser.add_argument("--embeddings", help="token vector text file")
    if training:
        parser.add_argument("--region-dim", type=int, dest="region_dim")
        parser.add_argument("--word-dim", type=int, dest="word_dim")
        parser.add_argument("--attn-dim", type=int, dest="attn_dim")
        parser.add_argument("--hidden-dim", type=int, dest="hidden_dim")
        parser.add_argument("--token-dim", type=int, dest="token_dim")
        parser.add_argument("--dropout", type=float)
        parser.add_argument("--lr", type=float)
        parser.add_argument("--batch-size", type=int, dest="batch_size")
        parser.add_argument("--epochs", type=int, help="epoch budget")
        parser.add_argument("--patience", type=int,
                            help="early-stopping patience in epochs")
        parser.add_argument("--validation-fraction", type=float,
                            dest="validation_fraction")
        parser.add_argument("--grad-clip", type=float, dest="grad_clip")


def merge_settings(args):
    """defaults < config file < flags; returns (settings, explicit keys)."""
    cfg = dict(DEFAULTS)
    explicit = set()
    if getattr(args, "config", None):
        for key, value in load_config(args.config).items():
            cfg[key] = value
            explicit.add(key)
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg[key] = value
            explicit.add(key)
    for flag, key in (("no_msg", "use_msg"), ("no_clip", "use_clip"),
                      ("no_tau", "use_tau"), ("co_occur", "use_predicate")):
        if getattr(args, flag, False):
            cfg[key] = False
            explicit.add(key)
    if not cfg["use_clip"] and "sigma" not in explicit:
        cfg["sigma"] = NO_CLIP_SIGMA
    return cfg, explicit


def _adopt_data_dims(cfg, explicit, features):
    for key, value in (("n_frames", features.n_frames),
                       ("regions_per_frame", features.regions_per_frame),
                       ("appearance_dim", features.appearance_dim)):
        if key not in explicit:
            cfg[key] = value


def config_from_checkpoint(arrays):
    """Recover the architecture settings a weight file pins down."""
    if "region_app.W" not in arrays or "dec_out.b" not in arrays:
        raise FormatError("checkpoint lacks the grounding parameter set")
    inferred = {
        "appearance_dim": arrays["region_app.W"].shape[0],
        "region_dim": arrays["region_app.W"].shape[1],
        "word_dim": arrays["word_proj.W"].shape[0],
        "attn_dim": arrays["spatial_attn.hidden_W"].shape[1],
        "hidden_dim": arrays["dec_lstm.Wh"].shape[0],
        "token_dim": arrays["dec_lstm.Wx"].shape[0],
        "use_msg": "msg_subj_to_obj.W" in arrays,
        "use_tau": "rel_embed.W" in arrays or "frame_attn.hidden_W" in arrays,
        "use_clip": "clip_lstm.Wx" in arrays,
    }
    if inferred["use_msg"]:
        inferred["regions_per_frame"] = arrays["msg_subj_to_obj.W"].shape[0]
    return inferred


def _estimator(cfg, embeddings=None):
    keys = ("n_frames", "clip_len", "regions_per_frame", "appearance_dim",
            "region_dim", "word_dim", "attn_dim", "hidden_dim", "token_dim",
            "dropout", "lr", "batch_size", "max_epochs", "patience",
            "validation_fraction", "sigma", "grad_clip", "use_msg",
            "use_clip", "use_tau", "use_predicate", "seed", "embed_seed")
    return RelationGrounder(embeddings=embeddings,
                            **{k: cfg[k] for k in keys})


def _load_table(cfg, args):
    table = EmbeddingTable(cfg["word_dim"], fallback_seed=cfg["embed_seed"])
    if getattr(args, "embeddings", None):
        load_embedding_text(args.embeddings, table)
    return table


# -- subcommands -----------------------------------------------------------

def cmd_gen(args):
    spec = SceneSpec(n_frames=args.frames, regions_per_frame=args.regions,
                     appearance_noise=args.noise,
                     distractor_prob=args.distractor_prob)
    train_manifest, test_manifest = emit_dataset(
        args.out, args.train_count, args.test_count, spec=spec,
        zero_shot_fraction=args.zero_shot_fraction, seed=args.seed,
        jobs=args.jobs, extra_queries=args.extra_queries)
    print(f"wrote {train_manifest}")
    print(f"wrote {test_manifest}")
    return 0


def cmd_train(args):
    cfg, explicit = merge_settings(args)
    samples = load_samples(args.manifest)
    _adopt_data_dims(cfg, explicit, samples[0].features)
    table = _load_table(cfg, args)
    est = _estimator(cfg, embeddings=table)
    est.verbose = True
    est.fit(samples)
    report = est.report_
    print(f"best epoch {report.best_epoch} "
          f"(validation loss {report.best_validation_loss:.4f}, "
          f"{report.wall_time:.1f}s)")
    if args.search_sigma:
        keys = set(est.validation_keys_)
        held_out = require_ground_truth(
            [s for s in samples if s.key in keys], "validation samples")
        grid = ([float(v) for v in args.sigma_grid.split(",")]
                if args.sigma_grid else SIGMA_GRID)
        est.search_sigma(held_out, grid)
    print(f"sigma {est.sigma_!r}")
    est.save(args.checkpoint)
    print(f"wrote {args.checkpoint}")
    if args.log:
        write_training_log(report.log_records, args.log)
        print(f"wrote {args.log}")
    return 0


def cmd_ground(args):
    arrays = load_checkpoint(args.checkpoint)
    cfg, explicit = merge_settings(args)
    for key, value in config_from_checkpoint(arrays).items():
        if key not in explicit:
            cfg[key] = value
    samples = load_samples(args.manifest, with_ground_truth=False)
    _adopt_data_dims(cfg, explicit, samples[0].features)
    if not cfg["use_clip"] and "sigma" not in explicit:
        cfg["sigma"] = NO_CLIP_SIGMA
    table = _load_table(cfg, args)
    est = _estimator(cfg, embeddings=table)
    est.load(args.checkpoint)
    net, sigma = est.network_, est.sigma_

    def run(sample):
        return ground(net, sample.features, sample.query, table, sigma)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            grounded = list(pool.map(run, samples))
    else:
        grounded = [run(s) for s in samples]
    results = [(s.video_id, format_relation(s.query), res)
               for s, res in zip(samples, grounded)]
    write_grounding_results(results, args.out)
    print(f"wrote {args.out} ({len(results)} results)")
    return 0


def cmd_eval(args):
    samples = load_samples(args.manifest, with_features=args.random_baseline)
    require_ground_truth(samples, "evaluation samples")
    if args.zero_shot:
        train_samples = load_samples(args.train_manifest, with_features=False,
                                     with_ground_truth=False)
        samples = zero_shot_split([s.query for s in train_samples], samples)
        if not samples:
            raise RuntimeError("no zero-shot pairs in this manifest")
    if args.static_only:
        samples = filter_by_predicate(samples, "static")
    if args.dynamic_only:
        samples = filter_by_predicate(samples, "dynamic")
    if not samples:
        raise RuntimeError("predicate filter left no pairs to evaluate")

    gt_map = {(s.video_id, format_relation(s.query)): s.instances
              for s in samples}
    if args.random_baseline:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([args.seed, 9])))
        results = [(s.video_id, format_relation(s.query),
                    random_baseline(s.features, rng)) for s in samples]
        title = "random baseline"
    else:
        if not args.results:
            raise RuntimeError("--results is required unless --random-baseline")
        by_key = {(vid, rel): (vid, rel, res)
                  for vid, rel, res in read_grounding_results(args.results)}
        results = []
        for key in gt_map:
            if key not in by_key:
                raise RuntimeError(
                    f"{args.results}: no result for {key[0]} {key[1]}")
            results.append(by_key[key])
        title = args.results
    report = accuracy(results, gt_map)
    print(format_accuracy_table(report, title=title))
    if args.report:
        write_accuracy_report(report, args.report)
        print(f"wrote {args.report}")
    return 0


GRADCHECK_SETTINGS = dict(n_frames=6, clip_len=3, regions_per_frame=4,
                          region_dim=8, appearance_dim=6, word_dim=8,
                          attn_dim=8, hidden_dim=16, token_dim=8,
                          vocab_size=12, dropout=0.0)


def cmd_gradcheck(args):
    cfg = NetworkConfig(**GRADCHECK_SETTINGS)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(7)))
    net = GroundingNetwork(cfg, rng)
    rows = cfg.n_frames * cfg.regions_per_frame
    arrays = {
        "appearance": rng.normal(size=(rows, cfg.appearance_dim)),
        "geometry": rng.uniform(0.0, 1.0, size=(rows, 5)),
        "subject_vec": rng.normal(size=cfg.word_dim),
        "object_vec": rng.normal(size=cfg.word_dim),
        "relation_vec": rng.normal(size=3 * cfg.word_dim),
        "targets": [4, 7, 5, 9, 1],
    }

    def loss_fn():
        return net.sample_loss(arrays)

    err = ad.grad_check(loss_fn, net.params, eps=args.eps)
    print(f"max relative gradient error {err:.3e} "
          f"({len(net.params)} parameter tensors)")
    if err < args.threshold:
        print("gradcheck passed")
        return 0
    print("gradcheck FAILED", file=sys.stderr)
    return 2


# -- wiring ----------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="relground",
                     description="weakly supervised video relation grounding")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen", help="emit a synthetic benchmark")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train-count", type=int, default=500)
    p.add_argument("--test-count", type=int, default=100)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--regions", type=int, default=6)
    p.add_argument("--distractor-prob", type=float, default=0.5)
    p.add_argument("--zero-shot-fraction", type=float, default=0.2)
    p.add_argument("--extra-queries", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="fit the grounder on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True, help="weight output path")
    p.add_argument("--log", help="training log output path")
    p.add_argument("--search-sigma", action="store_true",
                   help="calibrate sigma on the held-out split after training")
    p.add_argument("--sigma-grid", help="comma-separated thresholds to try")
    _add_model_flags(p, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ground", help="localize manifest queries")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="results output path")
    p.add_argument("--jobs", type=int, default=1)
    _add_model_flags(p, training=False)
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("eval", help="score grounding results")
    p.add_argument("--manifest", required=True)
    p.add_argument("--results")
    p.add_argument("--report", help="accuracy report output path")
    p.add_argument("--zero-shot", action="store_true",
                   help="keep only queries whose triplet is unseen in training")
    p.add_argument("--train-manifest",
                   help="training manifest, required with --zero-shot")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--static-only", action="store_true")
    group.add_argument("--dynamic-only", action="store_true")
    p.add_argument("--random-baseline", action="store_true",
                   help="score random spans and regions instead of results")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check on a tiny network")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and args.zero_shot and not args.train_manifest:
        parser.error("--zero-shot requires --train-manifest")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"relground: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, FormatError, RelationParseError, ValueError, KeyError,
            RuntimeError) as exc:
        print(f"relground: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
