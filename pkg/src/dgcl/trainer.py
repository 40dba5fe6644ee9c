"""Joint BPR + contrastive training with per-epoch diffusion refits."""

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import ndtape as nd
from .config import TrainConfig
from .contrastive import ViewPair, info_nce
from .dataio import block_dataset, build_norm_adjacency, iter_epoch_batches, load_interactions, split_train_test
from .diffusion import (
    DenoiserNet,
    VaeAugmenter,
    build_schedule,
    diffusion_loss,
    reverse_sample,
    uniform_noise_view,
    vae_augment,
    vae_loss,
)
from .encoder import aggregate_layers, init_embeddings, layer_stack, mix_hard_negatives
from .errors import CheckpointError, TrainingError
from .metrics import evaluate_embeddings

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dgcl-checkpoint"
CHECKPOINT_VERSION = 1


def bpr_loss(u, i_pos, i_neg):
    """Mean of ``softplus(-(<u, i+> - <u, i->))``, i.e. ``-log sigmoid`` of the score gap."""
    gap = nd.row_dot(u, i_pos) - nd.row_dot(u, i_neg)
    return nd.mean(nd.softplus(-gap))


def load_dataset(cfg):
    if cfg.dataset == "synthetic":
        return block_dataset(cfg.synth_users, cfg.synth_items, cfg.synth_blocks, cfg.synth_p,
                             seed=cfg.seed, ratio=cfg.split_ratio)
    return split_train_test(load_interactions(cfg.dataset), cfg.split_ratio, seed=cfg.seed)


def _streams(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


class DGCLModel:
    """Encoder embeddings plus one augmenter per entity type (users, items)."""

    def __init__(self, cfg, ds, rng=None):
        self.cfg = cfg
        self.num_users, self.num_items = ds.num_users, ds.num_items
        self.adj = build_norm_adjacency(ds)
        self.schedule = build_schedule(cfg.beta_schedule, cfg.diff_steps, cfg.beta_min, cfg.beta_max)
        init_rng, user_rng, item_rng = _streams(cfg.seed, 3) if rng is None else (rng, rng, rng)
        self.embeddings = init_embeddings(ds.num_nodes, cfg.embed_dim, init_rng, cfg.init_std)
        self.augmenters = {}
        if cfg.ablation in ("full", "no-neg"):
            for kind, r in (("user", user_rng), ("item", item_rng)):
                self.augmenters[kind] = DenoiserNet(cfg.embed_dim, cfg.heads,
                                                    row_independent=cfg.row_independent, rng=r)
        elif cfg.ablation == "vae":
            for kind, r in (("user", user_rng), ("item", item_rng)):
                self.augmenters[kind] = VaeAugmenter(cfg.embed_dim, cfg.vae_latent or None, rng=r)
        self.optim = nd.AdamState(cfg.lr)
        self.aug_optim = {k: nd.AdamState(cfg.diff_lr) for k in self.augmenters}

    # -- encoder ---------------------------------------------------------
    def encode(self, e0):
        stack = layer_stack(self.adj, e0, self.cfg.layers)
        return stack, aggregate_layers(stack, self.cfg.include_layer_zero)

    def final_embeddings(self):
        _, agg = self.encode(self.embeddings)
        return agg.data[: self.num_users], agg.data[self.num_users:]

    # -- augmentation ----------------------------------------------------
    def make_view(self, kind, rows, rng):
        cfg = self.cfg
        if cfg.ablation == "uniform-noise":
            return uniform_noise_view(rows, rng, cfg.uniform_eps)
        aug = self.augmenters[kind]
        if cfg.ablation == "vae":
            return vae_augment(aug, rows, rng)
        return reverse_sample(aug.bind(), rows, self.schedule, cfg.view_start, rng)

    # -- parameters ------------------------------------------------------
    def state_dict(self):
        out = {"embeddings": self.embeddings}
        for kind, aug in self.augmenters.items():
            for name, arr in aug.params.items():
                out[f"{kind}_aug/{name}"] = arr
        return out

    def load_state_dict(self, params):
        for name, arr in params.items():
            if name == "embeddings":
                target = self.embeddings
            else:
                kind, pname = name.split("/", 1)
                kind = kind[: -len("_aug")]
                if kind not in self.augmenters or pname not in self.augmenters[kind].params:
                    raise CheckpointError(f"unexpected parameter {name!r}")
                target = self.augmenters[kind].params[pname]
            if target.shape != arr.shape:
                raise CheckpointError(f"shape mismatch for {name}: checkpoint {arr.shape}, model {target.shape}")
            target[...] = arr


@dataclass
class StepResult:
    l_rec: float
    l_cl: float
    l_joint: float
    l_reg: float
    grads: dict = field(repr=False)


def joint_gradients(model, batch, rng):
    """Losses and encoder gradient for one mini-batch (no parameter update)."""
    cfg = model.cfg
    nu = model.num_users
    tape = nd.Tape()
    e0 = tape.watch(model.embeddings)
    stack, agg = model.encode(e0)

    users = np.asarray(batch.users)
    pos = np.asarray(batch.pos_items)
    hard = mix_hard_negatives(stack, nu, users, pos, np.asarray(batch.neg_candidates), rng,
                              cfg.include_layer_zero, mix=cfg.ablation != "no-neg")
    u_emb = nd.gather_rows(agg, users)
    p_emb = nd.gather_rows(agg, pos + nu)
    l_rec = bpr_loss(u_emb, p_emb, hard.embedding)

    ego = nd.gather_rows(e0, np.concatenate([users, pos + nu, hard.items + nu]))
    l_reg = nd.sum(nd.mul(ego, ego)) * (0.5 * cfg.weight_decay / len(users))

    use_cl = cfg.ablation != "no-diff" and cfg.lam > 0
    l_cl = None
    if use_cl:
        pairs = []
        for kind, ids in (("user", np.unique(users)), ("item", np.unique(pos) + nu)):
            rows = nd.gather_rows(agg, ids)
            view_a = model.make_view(kind, rows, rng)
            view_b = model.make_view(kind, rows, rng)
            pairs.append(ViewPair(view_a, view_b, kind, cfg.tau))
        l_cl = info_nce(pairs[0], cfg.raw_dot) + info_nce(pairs[1], cfg.raw_dot)
        objective = l_rec + l_cl * cfg.lam + l_reg
    else:
        objective = l_rec + l_reg
    if not np.isfinite(objective.item()):
        raise TrainingError(f"non-finite joint loss (L_rec={l_rec.item()}, "
                            f"L_cl={None if l_cl is None else l_cl.item()})")
    tape.backward(objective)
    grads = {"embeddings": tape.grad(e0)}
    rec, cl = l_rec.item(), (l_cl.item() if l_cl is not None else 0.0)
    return StepResult(rec, cl, rec + cfg.lam * cl, l_reg.item(), grads)


def joint_step(model, batch, rng):
    """One encoder update on ``L_rec + lambda * L_cl`` (plus L2 on the batch's ego embeddings)."""
    res = joint_gradients(model, batch, rng)
    nd.adam_step({"embeddings": model.embeddings}, res.grads, model.optim)
    return res


def train_augmenter_epoch(model, kind, embeddings, rng):
    """Refit one augmenter on detached embeddings; returns the mean loss."""
    cfg = model.cfg
    aug = model.augmenters[kind]
    losses = []
    n = embeddings.shape[0]
    for _ in range(cfg.diff_iters):
        order = rng.permutation(n)
        for start in range(0, n, cfg.diff_batch_size):
            batch = embeddings[order[start:start + cfg.diff_batch_size]]
            tape = nd.Tape()
            w = aug.weights(tape)
            if isinstance(aug, VaeAugmenter):
                loss = vae_loss(aug, batch, rng, w)
            else:
                loss = diffusion_loss(aug.bind(w), batch, model.schedule, rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite {kind} augmenter loss at step {model.aug_optim[kind].step}")
            tape.backward(loss)
            nd.adam_step(aug.params, nd.collect_grads(tape, w), model.aug_optim[kind])
            losses.append(value)
    return float(np.mean(losses)) if losses else 0.0


def train_diffusion_epoch(model, rng):
    """Refit both augmenters on the current (detached) aggregated embeddings."""
    if not model.augmenters:
        return 0.0
    users, items = model.final_embeddings()
    total = []
    for kind, emb in (("user", users), ("item", items)):
        total.append(train_augmenter_epoch(model, kind, emb, rng))
    return float(np.mean(total))


@dataclass
class TrainReport:
    config: dict
    dataset: dict
    epochs: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    config_diff: dict = field(default_factory=dict)
    best_epoch: int = 0

    def to_jsonl(self):
        return "\n".join(json.dumps(rec, sort_keys=True) for rec in self.epochs)

    def to_dict(self):
        return {"config": self.config, "dataset": self.dataset, "epochs": self.epochs,
                "final": self.final, "config_diff": self.config_diff, "best_epoch": self.best_epoch}

    def deterministic_view(self):
        """Report contents without wall-clock fields."""
        d = self.to_dict()
        d["epochs"] = [{k: v for k, v in rec.items() if k != "wall_time"} for rec in self.epochs]
        return d


def _metrics(model, ds):
    users, items = model.final_embeddings()
    return evaluate_embeddings(users, items, ds, model.cfg.cutoffs).as_dict()


def train(cfg, ds=None, progress=None):
    """Full training run; returns ``(report, model)``."""
    ds = load_dataset(cfg) if ds is None else ds
    model = DGCLModel(cfg, ds)
    sample_rng, diff_rng, view_rng = _streams(cfg.seed + 1, 3)
    report = TrainReport(cfg.to_dict(), ds.summary(),
                         config_diff=cfg.diff(cfg.replace(ablation="full")))
    k = max(cfg.cutoffs)
    watch = (f"recall@{k}", f"ndcg@{k}")

    for _ in range(cfg.diff_pretrain_epochs):
        train_diffusion_epoch(model, diff_rng)

    best, best_epoch, best_emb, stale = (-1.0, -1.0), 0, model.embeddings.copy(), 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        l_diff = train_diffusion_epoch(model, diff_rng)
        rec, cl, joint = [], [], []
        for batch in iter_epoch_batches(ds, cfg.batch_size, cfg.neg_candidates, sample_rng):
            res = joint_step(model, batch, view_rng)
            rec.append(res.l_rec)
            cl.append(res.l_cl)
            joint.append(res.l_joint)
        record = {"epoch": epoch, "l_rec": float(np.mean(rec)), "l_cl": float(np.mean(cl)),
                  "l_joint": float(np.mean(joint)), "l_diff": l_diff}
        if cfg.eval_every and epoch % cfg.eval_every == 0:
            metrics = _metrics(model, ds)
            record["metrics"] = metrics
            score = (metrics[watch[0]], metrics[watch[1]])
            if score > best:
                best, best_epoch, best_emb, stale = score, epoch, model.embeddings.copy(), 0
            else:
                stale += 1
        record["wall_time"] = time.perf_counter() - t0
        report.epochs.append(record)
        if progress is not None:
            progress(record)
        log.debug("epoch %d: %s", epoch, record)
        if cfg.patience and stale >= cfg.patience:
            log.info("early stop at epoch %d (best %s=%.4f at %d)", epoch, watch[0], best[0], best_epoch)
            break

    if cfg.restore_best and best_epoch:
        model.embeddings[...] = best_emb
    report.best_epoch = best_epoch
    report.final = _metrics(model, ds)
    model.rng_state = {"sample": sample_rng.bit_generator.state, "diffusion": diff_rng.bit_generator.state,
                       "views": view_rng.bit_generator.state}
    return report, model


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, model, report=None):
    """JSON file: versioned header, config echo, RNG state, named tensors.

    Each tensor is stored as ``{"shape": [...], "data": [...]}`` with the data
    flattened in row-major order.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "num_users": model.num_users,
        "num_items": model.num_items,
        "rng_state": getattr(model, "rng_state", None),
        "params": {name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                   for name, arr in model.state_dict().items()},
    }
    if report is not None:
        payload["final"] = report.final
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def read_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path} is not a checkpoint: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a dgcl checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    params = {}
    for name, t in payload["params"].items():
        arr = np.asarray(t["data"], dtype=np.float64)
        if arr.size != int(np.prod(t["shape"])):
            raise CheckpointError(f"tensor {name} has {arr.size} values for shape {t['shape']}")
        params[name] = arr.reshape(t["shape"])
    payload["params"] = params
    return payload


def load_checkpoint(path, ds=None):
    """Rebuild a model from a checkpoint; ``ds`` defaults to the config's dataset."""
    payload = read_checkpoint(path)
    cfg = TrainConfig.from_dict(payload["config"])
    ds = load_dataset(cfg) if ds is None else ds
    if (ds.num_users, ds.num_items) != (payload["num_users"], payload["num_items"]):
        raise CheckpointError(
            f"checkpoint is for {payload['num_users']} users x {payload['num_items']} items, "
            f"dataset has {ds.num_users} x {ds.num_items}"
        )
    model = DGCLModel(cfg, ds)
    model.load_state_dict(payload["params"])
    model.rng_state = payload.get("rng_state")
    return model, ds


def evaluate_model(path, ds=None, cutoffs=None):
    model, ds = load_checkpoint(path, ds)
    users, items = model.final_embeddings()
    return evaluate_embeddings(users, items, ds, cutoffs or model.cfg.cutoffs)
