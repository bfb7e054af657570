"""Class-agnostic point-cloud autoencoder with a vector-quantized codebook.

The encoder stacks downsampling rounds with restricted receptive fields:
farthest point sampling picks centers, a fixed-radius ball query gathers
neighbors, and a shared per-neighbor MLP (on coordinates relative to the
center, so absolute position is discarded) is max-pooled per center. The
last round's embeddings are quantized against the codebook; the decoder is
position-wise residual blocks over the gathered rows, a max-pool across
code positions (making it invariant to code order), and a dense head that
emits a fixed-size cloud.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import numerics as nm
from .errors import ContractError, TrainingDivergence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncoderRound:
    centers: int
    radius: float
    neighbors: int
    widths: tuple


@dataclass(frozen=True)
class VqvaeConfig:
    rounds: tuple
    codebook_size: int
    embed_dim: int
    decoder_hidden: int
    decoder_blocks: int
    decoder_dense: int
    out_points: int
    in_points: int
    bn_momentum: float = 0.1

    @property
    def code_length(self):
        return self.rounds[-1].centers


PAPER_VQVAE = VqvaeConfig(
    rounds=(EncoderRound(512, 0.1, 64, (64, 512, 512)),
            EncoderRound(128, 0.4, 512, (512, 512))),
    codebook_size=512, embed_dim=512,
    decoder_hidden=512, decoder_blocks=2, decoder_dense=1024,
    out_points=2048, in_points=10000)

DESK_VQVAE = VqvaeConfig(
    rounds=(EncoderRound(96, 0.1, 12, (32, 64)),
            EncoderRound(32, 0.4, 24, (64, 64))),
    codebook_size=64, embed_dim=64,
    decoder_hidden=128, decoder_blocks=2, decoder_dense=256,
    out_points=256, in_points=512)


def global_pool_config(config):
    """Ablation variant: one final center with a whole-cloud receptive field."""
    last = config.rounds[-1]
    rounds = config.rounds[:-1] + (
        EncoderRound(1, 4.0, config.rounds[-2].centers if len(config.rounds) > 1
                     else config.in_points, last.widths),)
    return VqvaeConfig(rounds=rounds, codebook_size=config.codebook_size,
                       embed_dim=config.embed_dim,
                       decoder_hidden=config.decoder_hidden,
                       decoder_blocks=config.decoder_blocks,
                       decoder_dense=config.decoder_dense,
                       out_points=config.out_points, in_points=config.in_points,
                       bn_momentum=config.bn_momentum)


class PointVqvae:
    """Parameters plus batch-norm buffers for one encoder/decoder pair."""

    def __init__(self, config, rng, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.params = {}
        self.bn = {}
        self._init(rng)

    def _param(self, name, shape, rng, std=None):
        if std is None:
            fan_in = shape[0] if len(shape) > 1 else 1
            std = np.sqrt(2.0 / max(fan_in, 1))
        data = (rng.normal(size=shape) * std).astype(self.dtype)
        self.params[name] = nm.Tensor(data, requires_grad=True, name=name)

    def _affine(self, name, width, rng):
        self.params[f"{name}.g"] = nm.Tensor(
            np.ones(width, dtype=self.dtype), requires_grad=True)
        self.params[f"{name}.b"] = nm.Tensor(
            np.zeros(width, dtype=self.dtype), requires_grad=True)
        self.bn[name] = nm.BatchNormState.create(
            width, momentum=self.config.bn_momentum, dtype=self.dtype)

    def _linear_init(self, name, n_in, n_out, rng, std=None):
        self._param(f"{name}.w", (n_in, n_out), rng, std)
        self.params[f"{name}.b"] = nm.Tensor(
            np.zeros(n_out, dtype=self.dtype), requires_grad=True)

    def _init(self, rng):
        cfg = self.config
        feat = 0
        for r, rnd in enumerate(cfg.rounds):
            width_in = feat + 3
            for i, width in enumerate(rnd.widths):
                self._linear_init(f"enc{r}.l{i}", width_in, width, rng)
                self._affine(f"enc{r}.l{i}.bn", width, rng)
                width_in = width
            feat = rnd.widths[-1]
        if feat != cfg.embed_dim:
            raise ContractError(
                f"last round width {feat} must equal embed_dim {cfg.embed_dim}")
        self.params["codebook"] = nm.Tensor(
            (rng.normal(size=(cfg.codebook_size, cfg.embed_dim)) * 0.5
             ).astype(self.dtype),
            requires_grad=True, name="codebook")
        h = cfg.decoder_hidden
        self._linear_init("dec.in", cfg.embed_dim, h, rng)
        self._affine("dec.in.bn", h, rng)
        for b in range(cfg.decoder_blocks):
            self._linear_init(f"dec.b{b}.c1", h, h, rng)
            self._affine(f"dec.b{b}.c1.bn", h, rng)
            self._linear_init(f"dec.b{b}.c2", h, h, rng)
            self._affine(f"dec.b{b}.c2.bn", h, rng)
        self._linear_init("dec.d1", h, cfg.decoder_dense, rng)
        self._affine("dec.d1.bn", cfg.decoder_dense, rng)
        self._linear_init("dec.out", cfg.decoder_dense, cfg.out_points * 3, rng,
                          std=0.01)

    # ------------------------------------------------------------------ #

    def state_tensors(self):
        """Everything a checkpoint needs for bit-identical reload."""
        out = {name: p.data for name, p in self.params.items()}
        for name, st in self.bn.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def load_state_tensors(self, tensors):
        for name, p in self.params.items():
            p.data = np.asarray(tensors[name], dtype=self.dtype).reshape(p.shape)
        for name, st in self.bn.items():
            st.running_mean = np.asarray(tensors[f"{name}.running_mean"],
                                         dtype=self.dtype)
            st.running_var = np.asarray(tensors[f"{name}.running_var"],
                                        dtype=self.dtype)


def _pad_points(clouds, minimum):
    """Repeat points cyclically so every cloud has at least `minimum`."""
    clouds = np.asarray(clouds)
    n = clouds.shape[-2]
    if n >= minimum:
        return clouds
    idx = np.arange(minimum) % n
    return clouds[..., idx, :]


def build_plan(clouds, config):
    """FPS and ball-query index structure for a (B, n, 3) stack.

    The plan depends only on coordinates, so training can compute it once
    per cloud and replay it every epoch (and perturbation audits can replay
    it against modified clouds).
    """
    pts = np.asarray(clouds, dtype=np.float64)
    if pts.ndim == 2:
        pts = pts[None]
    pts = _pad_points(pts, config.rounds[0].centers)
    plan = []
    pos = pts
    for rnd in config.rounds:
        cidx = geo.farthest_point_sample_batch(pos, rnd.centers)
        centers = np.take_along_axis(pos, cidx[:, :, None], axis=1)
        gidx = geo.ball_query_batch(pos, centers, rnd.radius, rnd.neighbors)
        plan.append((cidx, gidx))
        pos = centers
    return plan


def encode(model, clouds, plan=None, training=False, update_stats=True):
    """Per-part embeddings (B, code_length, D) for a batch of clouds.

    Absolute coordinates of the final centers are discarded; each embedding
    sees only points inside its composed query radius.
    """
    cfg = model.config
    pts = np.asarray(clouds, dtype=np.float64)
    squeeze = pts.ndim == 2
    if squeeze:
        pts = pts[None]
    if pts.shape[-2] == 0:
        raise ContractError("encode: empty cloud")
    pts = _pad_points(pts, cfg.rounds[0].centers)
    if plan is None:
        plan = build_plan(pts, cfg)
    pos = pts
    feats = None
    for r, rnd in enumerate(cfg.rounds):
        cidx, gidx = plan[r]
        b, c, k = gidx.shape
        centers = np.take_along_axis(pos, cidx[:, :, None], axis=1)
        batch = np.arange(b)[:, None, None]
        rel = (pos[batch, gidx] - centers[:, :, None, :]).astype(model.dtype)
        x = nm.Tensor(rel.reshape(b * c * k, 3))
        if feats is not None:
            gathered = nm.batch_gather(feats, gidx)
            x = nm.concat([nm.reshape(gathered, (b * c * k, -1)), x], axis=1)
        for i in range(len(rnd.widths)):
            x = nm.matmul(x, model.params[f"enc{r}.l{i}.w"])
            x = nm.add(x, model.params[f"enc{r}.l{i}.b"])
            x = nm.batch_normalize(x, model.params[f"enc{r}.l{i}.bn.g"],
                                   model.params[f"enc{r}.l{i}.bn.b"],
                                   model.bn[f"enc{r}.l{i}.bn"], training,
                                   update_stats)
            x = nm.relu(x)
        x = nm.reshape(x, (b, c, k, rnd.widths[-1]))
        feats = nm.max_pool_over_axis(x, axis=2)
        pos = centers
    return feats, plan


def quantize(embeddings, codebook):
    """Nearest codebook row per embedding (ties pick the lowest index).

    Returns (codes, straight-through embeddings, gathered rows): the
    straight-through tensor feeds the decoder and copies its gradient back
    to the encoder output unchanged; the gathered rows carry the gradient
    path into the codebook for the VQ loss terms.
    """
    z = embeddings.data
    flat = z.reshape(-1, z.shape[-1]).astype(np.float64)
    rows = codebook.data.astype(np.float64)
    d2 = ((flat * flat).sum(axis=1)[:, None]
          + (rows * rows).sum(axis=1)[None, :] - 2.0 * (flat @ rows.T))
    codes = d2.argmin(axis=1)
    gathered = nm.embedding_gather(codebook, codes)
    gathered = nm.reshape(gathered, z.shape)
    quantized = nm.straight_through(embeddings, gathered.detach())
    return codes.reshape(z.shape[:-1]), quantized, gathered


def decode(model, code_or_quantized, training=False, update_stats=True):
    """Decode codes (or straight-through embeddings) to (B, out_points, 3)."""
    cfg = model.config

    def bn(x, name):
        return nm.batch_normalize(x, model.params[f"{name}.g"],
                                  model.params[f"{name}.b"], model.bn[name],
                                  training, update_stats)

    if isinstance(code_or_quantized, nm.Tensor):
        x = code_or_quantized
        squeeze = False
    else:
        codes = np.asarray(code_or_quantized)
        squeeze = codes.ndim == 1
        if squeeze:
            codes = codes[None]
        if codes.min() < 0 or codes.max() >= cfg.codebook_size:
            raise ContractError(
                f"decode: code id outside [0, {cfg.codebook_size})")
        x = nm.embedding_gather(model.params["codebook"], codes)
    x = nm.add(nm.matmul(x, model.params["dec.in.w"]), model.params["dec.in.b"])
    x = nm.relu(bn(x, "dec.in.bn"))
    for bl in range(cfg.decoder_blocks):
        y = nm.add(nm.matmul(x, model.params[f"dec.b{bl}.c1.w"]),
                   model.params[f"dec.b{bl}.c1.b"])
        y = nm.relu(bn(y, f"dec.b{bl}.c1.bn"))
        y = nm.add(nm.matmul(y, model.params[f"dec.b{bl}.c2.w"]),
                   model.params[f"dec.b{bl}.c2.b"])
        y = bn(y, f"dec.b{bl}.c2.bn")
        x = nm.relu(nm.add(x, y))
    x = nm.max_pool_over_axis(x, axis=1)
    x = nm.add(nm.matmul(x, model.params["dec.d1.w"]), model.params["dec.d1.b"])
    x = nm.relu(bn(x, "dec.d1.bn"))
    x = nm.add(nm.matmul(x, model.params["dec.out.w"]), model.params["dec.out.b"])
    x = nm.reshape(x, (x.shape[0], cfg.out_points, 3))
    if squeeze:
        x = nm.select_index(x, 0, axis=0)
    return x


def encode_to_codes(model, clouds, plan=None):
    """Cloud(s) -> integer point codes (inference path, eval-mode stats)."""
    z, _ = encode(model, clouds, plan=plan, training=False)
    codes, _, _ = quantize(z, model.params["codebook"])
    if np.asarray(clouds).ndim == 2:
        return codes[0]
    return codes


def vqvae_loss(pc_in, pc_out, encoder_out, quantized_rows, emd_eps=None):
    """EMD + CD + codebook and commitment terms, summed unweighted.

    `pc_in` is the target cloud (constant). The EMD term needs equal point
    counts; a larger target is FPS-resampled down to the output size (CD
    always uses the full target).
    """
    target = pc_in.detach() if isinstance(pc_in, nm.Tensor) else \
        nm.Tensor(np.asarray(pc_in, dtype=pc_out.dtype))
    n_out = pc_out.shape[0]
    if target.shape[0] == n_out:
        emd_target = target
    elif target.shape[0] > n_out:
        keep = geo.farthest_point_sample(target.data, n_out)
        emd_target = nm.Tensor(target.data[keep])
    else:
        raise ContractError(
            f"vqvae_loss: target has {target.shape[0]} points, fewer than "
            f"the {n_out}-point reconstruction")
    recon = nm.add(geo.emd_loss(pc_out, emd_target, eps_final=emd_eps),
                   geo.chamfer_loss(pc_out, target))
    vq = nm.squared_l2(encoder_out.detach(), quantized_rows)
    commit = nm.squared_l2(encoder_out, quantized_rows.detach())
    return nm.add(recon, nm.add(vq, commit))


def train_vqvae(clouds, config, schedule, rng, epochs, batch_size=32,
                emd_eps=None, emd_points=64, log_progress=None):
    """Train on a stack of normalized clouds; deterministic per seed.

    Returns (model, log) where the log holds per-epoch mean reconstruction
    CD (epoch 0 is the untrained baseline), per-epoch codebook usage
    counts, and per-step losses. Aborts with TrainingDivergence when the
    loss exceeds 10x its initial value.
    """
    clouds = np.asarray(clouds, dtype=np.float32)
    if clouds.ndim != 3 or clouds.shape[0] == 0:
        raise ContractError("train_vqvae: need a nonempty (N, n, 3) stack")
    n_clouds = clouds.shape[0]
    model = PointVqvae(config, rng)
    plans = build_plan(clouds, config)
    # fixed targets: CD against an FPS resample at the output size, EMD on a
    # smaller FPS subsample (the assignment cost is quadratic); the training
    # auction runs at a coarse epsilon, the precise schedule is for metrics
    emd_n = min(emd_points, config.out_points)
    if emd_eps is None:
        emd_eps = 1.0 / (2.0 * emd_n)
    emd_keep = geo.farthest_point_sample_batch(clouds, emd_n)
    emd_targets = np.take_along_axis(clouds, emd_keep[:, :, None], axis=1)
    out_keep = geo.farthest_point_sample_batch(clouds, min(config.out_points,
                                                           clouds.shape[1]))
    cd_targets = np.take_along_axis(clouds, out_keep[:, :, None], axis=1)

    state = nm.OptimState()
    losses = []
    epoch_cd = [eval_mean_cd(model, clouds, plans, cd_targets)]
    usage_log = []
    initial_loss = None
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n_clouds)
        usage = np.zeros(config.codebook_size, dtype=np.int64)
        last_z = None
        for start in range(0, n_clouds, batch_size):
            batch = order[start:start + batch_size]
            cl = clouds[batch]
            plan = [(c[batch], g[batch]) for c, g in plans]
            nm.zero_grad(model.params)
            z, _ = encode(model, cl, plan=plan, training=True)
            codes, quantized, gathered = quantize(z, model.params["codebook"])
            out = decode(model, quantized, training=True)
            np.add.at(usage, codes.reshape(-1), 1)
            last_z = z.data.reshape(-1, config.embed_dim)
            recon = geo.chamfer_loss_batch(out, cd_targets[batch])
            if emd_n < config.out_points:
                keep = geo.farthest_point_sample_batch(out.data, emd_n)
                emd_side = nm.batch_gather(out, keep)
            else:
                emd_side = out
            recon = nm.add(recon, geo.emd_loss_batch(
                emd_side, emd_targets[batch], eps_final=emd_eps))
            vq = nm.squared_l2(z.detach(), gathered)
            commit = nm.squared_l2(z, gathered.detach())
            loss = nm.mul(nm.add(recon, nm.add(vq, commit)), 1.0 / len(batch))
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergence(f"non-finite loss at step {step}")
            if initial_loss is None:
                initial_loss = value
            if value > 10.0 * initial_loss:
                raise TrainingDivergence(
                    f"loss {value:.4f} exceeds 10x initial {initial_loss:.4f}")
            losses.append(value)
            nm.backward(loss)
            lr = nm.cosine_lr(schedule, min(step, schedule.total_steps))
            nm.adam_step(model.params, state, lr)
            step += 1
        dead = np.flatnonzero(usage == 0)
        if dead.size and last_z is not None:
            # reinitialize stranded rows from recent encoder outputs
            pick = rng.integers(0, last_z.shape[0], size=dead.size)
            model.params["codebook"].data[dead] = last_z[pick].astype(model.dtype)
            log.debug("epoch %d: reinitialized %d dead codebook rows",
                      epoch, dead.size)
        usage_log.append(usage)
        epoch_cd.append(eval_mean_cd(model, clouds, plans, cd_targets))
        if log_progress:
            log_progress(epoch, epoch_cd[-1])
    return model, {"epoch_cd": epoch_cd, "usage": usage_log, "loss": losses}


def eval_mean_cd(model, clouds, plans=None, targets=None, batch_size=32):
    """Mean reconstruction Chamfer distance, batch-stat forward, no updates."""
    clouds = np.asarray(clouds, dtype=np.float32)
    if plans is None:
        plans = build_plan(clouds, model.config)
    if targets is None:
        keep = geo.farthest_point_sample_batch(
            clouds, min(model.config.out_points, clouds.shape[1]))
        targets = np.take_along_axis(clouds, keep[:, :, None], axis=1)
    total = 0.0
    for start in range(0, clouds.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        plan = [(c[sl], g[sl]) for c, g in plans]
        z, _ = encode(model, clouds[sl], plan=plan, training=True,
                      update_stats=False)
        codes, quantized, _ = quantize(z, model.params["codebook"])
        out = decode(model, quantized, training=True, update_stats=False)
        total += geo.chamfer_batch(out.data, targets[sl]).sum()
    return float(total) / clouds.shape[0]
