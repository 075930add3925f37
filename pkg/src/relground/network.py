"""Attention-based encoder/decoder for weakly supervised relation grounding.

The encoder scores every region proposal against the query subject and
object words, exchanges a message between the two attention maps, fuses the
attended features into one vector per frame, and summarizes the sequence
with a two-level recurrent hierarchy (frames, then clips) whose attention
is conditioned on the query relation.  The decoder regenerates the relation
tokens from the pooled video embedding; its cross-entropy is the only
training signal, so no box or span labels are ever consumed.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import embed_tokens


@dataclass
class NetworkConfig:
    n_frames: int = 120
    clip_len: int = 12
    regions_per_frame: int = 40
    region_dim: int = 256
    appearance_dim: int = 2048
    word_dim: int = 300
    attn_dim: int = 256
    hidden_dim: int = 512
    token_dim: int = 256
    vocab_size: int = 0
    dropout: float = 0.2
    use_msg: bool = True
    use_clip: bool = True
    use_tau: bool = True
    use_predicate: bool = True

    def __post_init__(self):
        if self.n_frames % self.clip_len != 0:
            raise ValueError(
                f"frame count {self.n_frames} is not divisible by clip "
                f"length {self.clip_len}")

    @property
    def n_clips(self):
        return self.n_frames // self.clip_len


@dataclass
class AttentionMaps:
    """Plain-array view of one forward pass's attention distributions."""
    subject: np.ndarray   # (n_frames, regions_per_frame)
    object: np.ndarray    # (n_frames, regions_per_frame)
    frame: np.ndarray     # (n_frames,)
    clip: np.ndarray      # (n_clips,)


@dataclass
class EncoderOutput:
    video_vec: ad.Tensor
    subj_attn: ad.Tensor
    obj_attn: ad.Tensor
    frame_attn: np.ndarray
    clip_attn: np.ndarray

    def maps(self):
        return AttentionMaps(
            self.subj_attn.data.copy(), self.obj_attn.data.copy(),
            self.frame_attn.reshape(-1).copy(), self.clip_attn.reshape(-1).copy())


def target_sequence(query, vocab, use_predicate=True):
    """Decoder targets: subject, predicate and object words plus <end>;
    the predicate block is dropped when predicates are disabled."""
    tokens = list(query.subject_tokens)
    if use_predicate:
        tokens += list(query.predicate_tokens)
    tokens += list(query.object_tokens)
    return [vocab.to_index(t) for t in tokens] + [vocab.end_index]


def prepare_video(video):
    """Stacked per-region arrays for one video, keyed as encode expects."""
    return {
        "appearance": video.appearance_matrix(),
        "geometry": video.geometry_matrix(),
    }


def prepare_query(query, table, use_predicate=True):
    """Word-space vectors consumed by the encoder for one relation query."""
    subj = embed_tokens(query.subject_tokens, table, "average")
    obj = embed_tokens(query.object_tokens, table, "average")
    if use_predicate:
        pred = embed_tokens(query.predicate_tokens, table, "average")
    else:
        pred = np.zeros(table.dimension)
    return {
        "subject_vec": subj,
        "object_vec": obj,
        "relation_vec": np.concatenate([subj, pred, obj]),
    }


class GroundingNetwork:
    """Parameter store plus the forward passes built on the autodiff tape."""

    def __init__(self, config, rng=None):
        self.config = config
        self.params = ad.ParameterStore()
        if rng is None:
            rng = np.random.Generator(np.random.PCG64(0))
        self._build(rng)

    def _build(self, rng):
        cfg = self.config
        p = self.params
        d, k, a = cfg.region_dim, cfg.hidden_dim, cfg.attn_dim

        p.create("region_app.W", (cfg.appearance_dim, d), rng)
        p.create("region_app.b", (1, d))
        p.create("region_geo.W", (5, d), rng)
        p.create("region_geo.b", (1, d))
        p.create("word_proj.W", (cfg.word_dim, d), rng)
        p.create("word_proj.b", (1, d))
        p.create("spatial_attn.hidden_W", (2 * d, a), rng)
        p.create("spatial_attn.hidden_b", (1, a))
        p.create("spatial_attn.score_W", (a, 1), rng)
        if cfg.use_msg:
            p.create("msg_subj_to_obj.W", (cfg.regions_per_frame, d), rng)
            p.create("msg_obj_to_subj.W", (cfg.regions_per_frame, d), rng)
        p.create("pair_fuse.W", (2 * d, d), rng)
        p.create("pair_fuse.b", (1, d))
        p.create("frame_lstm.Wx", (d, 4 * k), rng)
        p.create("frame_lstm.Wh", (k, 4 * k), rng)
        p.add("frame_lstm.b", ad.Tensor(ad.lstm_gate_bias(k)))
        if cfg.use_tau:
            p.create("rel_embed.W", (3 * cfg.word_dim, k), rng)
            p.create("rel_embed.b", (1, k))
            if cfg.use_clip:
                p.create("clip_lstm.Wx", (k, 4 * k), rng)
                p.create("clip_lstm.Wh", (k, 4 * k), rng)
                p.add("clip_lstm.b", ad.Tensor(ad.lstm_gate_bias(k)))
                p.create("clip_attn.hidden_W", (2 * k, a), rng)
                p.create("clip_attn.hidden_b", (1, a))
                p.create("clip_attn.score_W", (a, 1), rng)
            p.create("frame_attn.hidden_W", (2 * k, a), rng)
            p.create("frame_attn.hidden_b", (1, a))
            p.create("frame_attn.score_W", (a, 1), rng)
        p.create("dec_embed.W", (cfg.vocab_size, cfg.token_dim), rng,
                 fan_in=cfg.token_dim)
        p.create("dec_lstm.Wx", (cfg.token_dim, 4 * k), rng)
        p.create("dec_lstm.Wh", (k, 4 * k), rng)
        p.add("dec_lstm.b", ad.Tensor(ad.lstm_gate_bias(k)))
        p.create("dec_out.W", (k, cfg.vocab_size), rng)
        p.create("dec_out.b", (1, cfg.vocab_size))

    # -- building blocks ---------------------------------------------------

    def _attend_scores(self, keys, query, prefix):
        """Score each key row against one query: linear, tanh, linear."""
        p = self.params
        n = keys.data.shape[0]
        joined = ad.concat_cols(keys, ad.tile_rows(query, n))
        hidden = ad.tanh(ad.affine(
            joined, p[f"{prefix}.hidden_W"], p[f"{prefix}.hidden_b"]))
        return ad.matmul(hidden, p[f"{prefix}.score_W"])

    def region_features(self, appearance, geometry):
        """Per-region embedding: transformed appearance plus transformed
        normalized geometry, added elementwise."""
        p = self.params
        app = ad.relu(ad.affine(appearance, p["region_app.W"], p["region_app.b"]))
        geo = ad.relu(ad.affine(geometry, p["region_geo.W"], p["region_geo.b"]))
        return ad.add(app, geo)

    def spatial_attend(self, feats, query_vec):
        """Attention over each frame's regions and the pooled feature.

        feats: (n_frames*m, d) region embeddings; query_vec: (1, d).
        Returns ((n_frames, m) attention rows, (n_frames, d) pooled rows).
        """
        m = self.config.regions_per_frame
        n = feats.data.shape[0] // m
        scores = self._attend_scores(feats, query_vec, "spatial_attn")
        attn = ad.softmax_rows(ad.reshape(scores, (n, m)))
        pooled = ad.pool_regions(attn, feats, m)
        return attn, pooled

    def shift_messages(self, subj_attn, obj_attn, subj_feat, obj_feat):
        """Exchange each entity's attention pattern into its partner's
        feature; identity when messages are disabled."""
        if not self.config.use_msg:
            return subj_feat, obj_feat
        p = self.params
        to_obj = ad.relu(ad.matmul(subj_attn, p["msg_subj_to_obj.W"]))
        to_subj = ad.relu(ad.matmul(obj_attn, p["msg_obj_to_subj.W"]))
        return ad.add(subj_feat, to_subj), ad.add(obj_feat, to_obj)

    def fuse_pair(self, subj_feat, obj_feat, training=False, rng=None):
        p = self.params
        node = ad.affine(ad.concat_cols(subj_feat, obj_feat),
                         p["pair_fuse.W"], p["pair_fuse.b"])
        if training:
            node = ad.dropout(node, self.config.dropout, rng)
        return node

    def _run_lstm(self, rows, prefix):
        p = self.params
        k = self.config.hidden_dim
        h = ad.constant(np.zeros((1, k)))
        c = ad.constant(np.zeros((1, k)))
        states = []
        n = rows.data.shape[0]
        for i in range(n):
            x = ad.select_rows(rows, [i])
            h, c = ad.lstm_step(x, h, c, p[f"{prefix}.Wx"], p[f"{prefix}.Wh"],
                                p[f"{prefix}.b"])
            states.append(h)
        return ad.concat_rows(states), h

    def relation_embedding(self, relation_vec):
        p = self.params
        return ad.relu(ad.affine(ad.constant(relation_vec),
                                 p["rel_embed.W"], p["rel_embed.b"]))

    def encode_video(self, node_inputs, relation_vec):
        """Temporal half of the encoder: frame recurrence, clip-level
        attention and recurrence, then attention-pooled video embedding."""
        cfg = self.config
        n, h_clips, l = cfg.n_frames, cfg.n_clips, cfg.clip_len
        frame_states, _ = self._run_lstm(node_inputs, "frame_lstm")

        if not cfg.use_tau:
            frame_attn = np.full((1, n), 1.0 / n)
            clip_attn = np.full((1, h_clips), 1.0 / h_clips)
            video_vec = ad.mean_rows(frame_states)
            return video_vec, frame_attn, clip_attn

        rel = self.relation_embedding(relation_vec)
        if cfg.use_clip:
            clip_idx = [l * (j + 1) - 1 for j in range(h_clips)]
            clip_states = ad.select_rows(frame_states, clip_idx)
            clip_scores = ad.reshape(
                self._attend_scores(clip_states, rel, "clip_attn"), (1, h_clips))
            clip_attn_t = ad.softmax(clip_scores)
            weighted = ad.scale_rows(clip_states, clip_attn_t)
            _, clip_summary = self._run_lstm(weighted, "clip_lstm")
            frame_query = clip_summary
            clip_attn = clip_attn_t.data
        else:
            frame_query = rel
            clip_attn = np.full((1, h_clips), 1.0 / h_clips)

        frame_scores = ad.reshape(
            self._attend_scores(frame_states, frame_query, "frame_attn"), (1, n))
        frame_attn_t = ad.softmax(frame_scores)
        video_vec = ad.matmul(frame_attn_t, frame_states)
        return video_vec, frame_attn_t.data, clip_attn

    # -- full passes -------------------------------------------------------

    def encode(self, arrays, training=False, rng=None):
        """Forward pass over one prepared sample; see prepare_query and
        VideoFeatures.appearance_matrix for the expected array layout."""
        p = self.params
        feats = self.region_features(ad.constant(arrays["appearance"]),
                                     ad.constant(arrays["geometry"]))
        subj_q = ad.affine(ad.constant(arrays["subject_vec"]),
                           p["word_proj.W"], p["word_proj.b"])
        obj_q = ad.affine(ad.constant(arrays["object_vec"]),
                          p["word_proj.W"], p["word_proj.b"])
        subj_attn, subj_feat = self.spatial_attend(feats, subj_q)
        obj_attn, obj_feat = self.spatial_attend(feats, obj_q)
        subj_feat, obj_feat = self.shift_messages(
            subj_attn, obj_attn, subj_feat, obj_feat)
        node = self.fuse_pair(subj_feat, obj_feat, training, rng)
        video_vec, frame_attn, clip_attn = self.encode_video(
            node, arrays["relation_vec"])
        return EncoderOutput(video_vec, subj_attn, obj_attn, frame_attn, clip_attn)

    def decode_logits(self, video_vec, targets, training=False, rng=None):
        """Teacher-forced decoder logits, one row per target position."""
        cfg = self.config
        p = self.params
        k = cfg.hidden_dim
        inputs = [0] + list(targets[:-1])  # index 0 is <start>
        emb = ad.select_rows(p["dec_embed.W"], inputs)
        if training:
            emb = ad.dropout(emb, cfg.dropout, rng)
        h = video_vec
        c = ad.constant(np.zeros((1, k)))
        rows = []
        for t in range(len(targets)):
            x = ad.select_rows(emb, [t])
            h, c = ad.lstm_step(x, h, c, p["dec_lstm.Wx"], p["dec_lstm.Wh"],
                                p["dec_lstm.b"])
            rows.append(ad.affine(h, p["dec_out.W"], p["dec_out.b"]))
        return ad.concat_rows(rows)

    def reconstruction_loss(self, video_vec, targets, training=False, rng=None):
        """Per-token cross-entropy of regenerating the relation tokens."""
        if not targets:
            raise ValueError("empty target sequence")
        logits = self.decode_logits(video_vec, targets, training, rng)
        loss = ad.cross_entropy_rows(logits, targets)
        if not np.isfinite(loss.item()):
            raise FloatingPointError("reconstruction loss is not finite")
        return loss

    def sample_loss(self, arrays, training=False, rng=None):
        out = self.encode(arrays, training, rng)
        return self.reconstruction_loss(out.video_vec, arrays["targets"],
                                        training, rng)

    def batch_loss(self, batch, training=False, rng=None):
        """Mean per-sample loss over a prepared batch, on a single tape."""
        losses = [self.sample_loss(arrays, training, rng) for arrays in batch]
        return ad.mean_rows(ad.concat_rows(losses))

    def greedy_decode(self, video_vec, vocab, max_len=12):
        """Inference-time readout of the most likely token sequence."""
        p = self.params
        k = self.config.hidden_dim
        h = video_vec
        c = ad.constant(np.zeros((1, k)))
        token = vocab.start_index
        decoded = []
        for _ in range(max_len):
            x = ad.select_rows(p["dec_embed.W"], [token])
            h, c = ad.lstm_step(x, h, c, p["dec_lstm.Wx"], p["dec_lstm.Wh"],
                                p["dec_lstm.b"])
            logits = ad.affine(h, p["dec_out.W"], p["dec_out.b"])
            token = int(np.argmax(logits.data[0]))
            if token == vocab.end_index:
                break
            decoded.append(vocab.to_token(token))
        return decoded
