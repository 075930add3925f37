"""Weakly supervised training and grounding behind a scikit-learn style
estimator.

fit() sees only video-level relation labels — ground truth boxes are
stripped from every sample entering the optimization path — and trains the
encoder/decoder by relation reconstruction.  predict() turns the learned
attention into subject/object trajectories; score() applies the accuracy
protocol.  The temporal threshold can be calibrated on held-out samples
with search_sigma().
"""

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .data import EmbeddingTable, Vocabulary, format_relation
from .formats import load_checkpoint, save_checkpoint
from .linking import ground
from .metrics import accuracy
from .network import (GroundingNetwork, NetworkConfig, prepare_query,
                      prepare_video, target_sequence)
from .validation import (check_fraction, require_features,
                         require_ground_truth, require_samples)

SIGMA_GRID = (0.01, 0.02, 0.03, 0.04, 0.05)


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient stops being finite, with context."""


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # (epoch, train, validation)
    best_epoch: int = 0
    best_validation_loss: float = float("inf")
    wall_time: float = 0.0
    log_records: list = field(default_factory=list)


def validation_split(samples, fraction, seed):
    """Seeded partition that keeps every video entirely on one side."""
    check_fraction("validation fraction", fraction)
    samples = require_samples(samples)
    ids = []
    seen = set()
    for s in samples:
        if s.video_id not in seen:
            seen.add(s.video_id)
            ids.append(s.video_id)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    perm = rng.permutation(len(ids))
    n_val = max(1, int(round(fraction * len(ids))))
    if n_val >= len(ids):
        raise ValueError(
            f"validation fraction {fraction} leaves no training videos "
            f"({len(ids)} video ids)")
    val_ids = {ids[i] for i in perm[:n_val]}
    train = [s for s in samples if s.video_id not in val_ids]
    val = [s for s in samples if s.video_id in val_ids]
    return train, val


class RelationGrounder(BaseEstimator):
    """Grounds subject-predicate-object queries in region-feature videos."""

    def __init__(self, n_frames=120, clip_len=12, regions_per_frame=40,
                 appearance_dim=2048, region_dim=256, word_dim=300,
                 attn_dim=256, hidden_dim=512, token_dim=256, dropout=0.2,
                 lr=1e-4, batch_size=32, max_epochs=20, patience=3,
                 validation_fraction=0.1, sigma=0.04, grad_clip=5.0,
                 use_msg=True, use_clip=True, use_tau=True,
                 use_predicate=True, seed=0, embed_seed=0, embeddings=None,
                 verbose=False):
        self.n_frames = n_frames
        self.clip_len = clip_len
        self.regions_per_frame = regions_per_frame
        self.appearance_dim = appearance_dim
        self.region_dim = region_dim
        self.word_dim = word_dim
        self.attn_dim = attn_dim
        self.hidden_dim = hidden_dim
        self.token_dim = token_dim
        self.dropout = dropout
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.sigma = sigma
        self.grad_clip = grad_clip
        self.use_msg = use_msg
        self.use_clip = use_clip
        self.use_tau = use_tau
        self.use_predicate = use_predicate
        self.seed = seed
        self.embed_seed = embed_seed
        self.embeddings = embeddings
        self.verbose = verbose

    # -- plumbing ----------------------------------------------------------

    def _table(self):
        if self.embeddings is not None:
            return self.embeddings
        return EmbeddingTable(self.word_dim, fallback_seed=self.embed_seed)

    def _config(self, vocab_size):
        return NetworkConfig(
            n_frames=self.n_frames, clip_len=self.clip_len,
            regions_per_frame=self.regions_per_frame,
            region_dim=self.region_dim, appearance_dim=self.appearance_dim,
            word_dim=self.word_dim, attn_dim=self.attn_dim,
            hidden_dim=self.hidden_dim, token_dim=self.token_dim,
            vocab_size=vocab_size, dropout=self.dropout,
            use_msg=self.use_msg, use_clip=self.use_clip,
            use_tau=self.use_tau, use_predicate=self.use_predicate)

    def _prepare(self, sample, table, vocab, cfg):
        arrays = prepare_video(sample.features)
        arrays.update(prepare_query(sample.query, table, cfg.use_predicate))
        arrays["targets"] = target_sequence(sample.query, vocab,
                                            cfg.use_predicate)
        return arrays

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError(
                "this RelationGrounder is not fitted; call fit() or load()")

    def _check_grid(self, sample):
        f = sample.features
        if (f.n_frames != self.n_frames
                or f.regions_per_frame != self.regions_per_frame
                or f.appearance_dim != self.appearance_dim):
            raise ValueError(
                f"sample {sample.video_id}: grid "
                f"{f.n_frames}x{f.regions_per_frame} (appearance "
                f"{f.appearance_dim}) does not match the configured "
                f"{self.n_frames}x{self.regions_per_frame} "
                f"(appearance {self.appearance_dim})")

    # -- training ----------------------------------------------------------

    def fit(self, samples, y=None):
        samples = require_features(require_samples(samples, "training samples"))
        self._check_grid(samples[0])
        started = time.time()
        table = self._table()
        vocab = Vocabulary.from_queries([s.query for s in samples])
        cfg = self._config(len(vocab))
        init_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, 0])))
        net = GroundingNetwork(cfg, init_rng)

        train_set, val_set = validation_split(
            samples, self.validation_fraction, self.seed)
        # Weak supervision: the optimization path never sees trajectories.
        train_set = [s.without_ground_truth() for s in train_set]
        train_arrays = [self._prepare(s, table, vocab, cfg) for s in train_set]
        val_arrays = [self._prepare(s.without_ground_truth(), table, vocab, cfg)
                      for s in val_set]

        adam = ad.AdamState(lr=self.lr)
        report = TrainReport()
        best_state = None
        bad_epochs = 0
        for epoch in range(1, self.max_epochs + 1):
            shuffle_rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence([self.seed, 2, epoch])))
            drop_rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence([self.seed, 3, epoch])))
            order = shuffle_rng.permutation(len(train_arrays))
            total = 0.0
            for step, start in enumerate(range(0, len(order), self.batch_size)):
                batch = [train_arrays[i]
                         for i in order[start:start + self.batch_size]]
                net.params.zero_grad()
                try:
                    loss = net.batch_loss(batch, training=True, rng=drop_rng)
                    ad.backward(loss)
                    net.params.clip_grad_norm(self.grad_clip)
                    ad.adam_step(net.params, adam)
                except FloatingPointError as exc:
                    raise TrainingDiverged(
                        f"epoch {epoch}, step {step}: {exc}") from exc
                total += loss.item() * len(batch)
            train_loss = total / len(train_arrays)
            val_loss = float(np.mean(
                [net.sample_loss(a).item() for a in val_arrays]))
            stamp = time.strftime("%Y-%m-%dT%H:%M:%S")
            report.epochs.append((epoch, train_loss, val_loss))
            report.log_records.append((epoch, "train", train_loss, stamp))
            report.log_records.append((epoch, "validation", val_loss, stamp))
            if self.verbose:
                print(f"epoch {epoch}: train {train_loss:.4f} "
                      f"validation {val_loss:.4f}")
            if val_loss < report.best_validation_loss:
                report.best_validation_loss = val_loss
                report.best_epoch = epoch
                best_state = {k: v.copy()
                              for k, v in net.params.state_arrays().items()}
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= self.patience:
                    break
        net.params.load_arrays(best_state)
        report.wall_time = time.time() - started

        self.network_ = net
        self.vocab_ = vocab
        self.table_ = table
        self.config_ = cfg
        self.report_ = report
        self.sigma_ = float(self.sigma)
        self.validation_keys_ = [s.key for s in val_set]
        return self

    # -- inference ---------------------------------------------------------

    def predict(self, samples):
        self._check_fitted()
        samples = require_features(require_samples(samples))
        return [ground(self.network_, s.features, s.query, self.table_,
                       self.sigma_) for s in samples]

    def score(self, samples, y=None):
        """Average relation accuracy over the spatial IoU thresholds."""
        report = self.evaluate(samples)
        return report.average[2]

    def evaluate(self, samples):
        self._check_fitted()
        samples = require_ground_truth(
            require_features(require_samples(samples)))
        results = []
        gt_map = {}
        for s, res in zip(samples, self.predict(samples)):
            relation = format_relation(s.query)
            results.append((s.video_id, relation, res))
            gt_map[(s.video_id, relation)] = s.instances
        return accuracy(results, gt_map)

    def search_sigma(self, samples, grid=None):
        """Pick the temporal threshold maximizing relation accuracy on the
        given (ground-truth bearing) samples; ties go to the smaller value."""
        self._check_fitted()
        grid = sorted(grid if grid is not None else SIGMA_GRID)
        if not grid:
            raise ValueError("empty sigma grid")
        best_sigma, best_acc = None, -1.0
        for sigma in grid:
            self.sigma_ = float(sigma)
            acc_r = self.evaluate(samples).average[2]
            if acc_r > best_acc:
                best_sigma, best_acc = float(sigma), acc_r
        self.sigma_ = best_sigma
        return best_sigma

    # -- persistence -------------------------------------------------------

    def save(self, path):
        self._check_fitted()
        save_checkpoint(self.network_.params, path)
        return path

    def load(self, path):
        """Restore weights; architecture flags come from this estimator's
        parameters and must match the checkpoint's parameter set."""
        arrays = load_checkpoint(path)
        if "dec_out.b" not in arrays:
            raise ValueError(f"{path} is not a grounding checkpoint "
                             f"(no decoder output bias)")
        vocab_size = arrays["dec_out.b"].shape[1]
        cfg = self._config(vocab_size)
        net = GroundingNetwork(
            cfg, np.random.Generator(np.random.PCG64(0)))
        net.params.load_arrays(arrays, strict=True)
        self.network_ = net
        self.config_ = cfg
        self.table_ = self._table()
        self.vocab_ = None
        self.sigma_ = float(self.sigma)
        return self
