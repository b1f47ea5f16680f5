"""Staged adversarial training of the six networks.

Schedule: pre-train encoder + classifier (+ hash loss) on labeled source data,
then run stages of full-objective training. Within every step the
discriminators update first on their own loss with everything else frozen,
then encoder, classifier and generators update on the combined objective with
the discriminators frozen. At stage boundaries the encoder and classifier
carry over while generators and discriminators restart from fresh seeds.

Target ground truth is quarantined: the training loop stores a label-stripped
view of the target dataset, so only the explicit evaluation arguments ever see
target labels.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses as ls
from . import networks as nets
from .datasets import Dataset
from .fileio import atomic_write_text
from .pseudolabel import PseudoLabels, confident_fraction, pseudo_label

METRICS_HEADER = "stage,epoch,L_c,L_h,L_s,L_1,L_a_d,L_a_g,src_acc,tgt_acc,confident_frac"

_NET_FILES = {
    "encoder": "encoder.params",
    "classifier": "classifier.params",
    "gen_src": "generator_source.params",
    "gen_tgt": "generator_target.params",
    "disc_src": "discriminator_source.params",
    "disc_tgt": "discriminator_target.params",
}


@dataclass
class ModelSizes:
    """Hidden-layer widths of the four network families."""

    encoder_hidden: tuple[int, ...] = (128, 64)
    generator_hidden: tuple[int, ...] = (64, 128)
    discriminator_hidden: tuple[int, ...] = (128, 64)
    classifier_hidden: tuple[int, ...] = ()


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray | None


@dataclass
class StepLosses:
    """Unweighted per-term values from one train_step (nan when disabled)."""

    class_loss: float
    hash_loss: float
    centroid_loss: float
    recon_loss: float
    disc_loss: float
    adv_gen_loss: float


@dataclass
class EpochMetrics:
    stage: int
    epoch: int
    class_loss: float
    hash_loss: float
    centroid_loss: float
    recon_loss: float
    disc_loss: float
    adv_gen_loss: float
    src_acc: float
    tgt_acc: float
    confident_frac: float

    def csv_row(self) -> str:
        vals = [self.class_loss, self.hash_loss, self.centroid_loss,
                self.recon_loss, self.disc_loss, self.adv_gen_loss,
                self.src_acc, self.tgt_acc, self.confident_frac]
        return f"{self.stage},{self.epoch}," + ",".join(f"{v:.6f}" for v in vals)


@dataclass
class ModelParams:
    """The six parameter sets. Generators never share storage, nor do
    discriminators; the adversarial pair symmetry is architectural only."""

    encoder: nets.ParameterSet
    classifier: nets.ParameterSet
    gen_src: nets.ParameterSet
    gen_tgt: nets.ParameterSet
    disc_src: nets.ParameterSet
    disc_tgt: nets.ParameterSet

    @classmethod
    def build(cls, feature_dim: int, n_classes: int, code_bits: int,
              sizes: ModelSizes, seed: int, stage: int = 0) -> "ModelParams":
        def rng_seed(idx: int):
            return (seed, stage, idx)

        enc_cfg = nets.NetConfig(feature_dim, sizes.encoder_hidden, code_bits)
        cls_cfg = nets.NetConfig(code_bits, sizes.classifier_hidden, n_classes)
        gen_cfg = nets.NetConfig(code_bits, sizes.generator_hidden, feature_dim)
        dsc_cfg = nets.NetConfig(feature_dim, sizes.discriminator_hidden, n_classes + 1)
        return cls(
            encoder=nets.init_net(enc_cfg, rng_seed(0), "encoder"),
            classifier=nets.init_net(cls_cfg, rng_seed(1), "classifier"),
            gen_src=nets.init_net(gen_cfg, rng_seed(2), "gen_src"),
            gen_tgt=nets.init_net(gen_cfg, rng_seed(3), "gen_tgt"),
            disc_src=nets.init_net(dsc_cfg, rng_seed(4), "disc_src"),
            disc_tgt=nets.init_net(dsc_cfg, rng_seed(5), "disc_tgt"),
        )

    def all_sets(self) -> dict[str, nets.ParameterSet]:
        return {"encoder": self.encoder, "classifier": self.classifier,
                "gen_src": self.gen_src, "gen_tgt": self.gen_tgt,
                "disc_src": self.disc_src, "disc_tgt": self.disc_tgt}

    def clone(self) -> "ModelParams":
        return ModelParams(**{k: v.clone() for k, v in self.all_sets().items()})

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        for key, pset in self.all_sets().items():
            nets.save_params(os.path.join(directory, _NET_FILES[key]), pset)

    @classmethod
    def load(cls, directory: str) -> "ModelParams":
        kwargs = {}
        for key, fname in _NET_FILES.items():
            kwargs[key] = nets.load_params(os.path.join(directory, fname), name=key)
        return cls(**kwargs)


@dataclass
class TrainState:
    model: ModelParams
    hp: ls.Hyperparams
    n_classes: int
    sizes: ModelSizes
    rng: np.random.Generator
    stage: int = 0
    epoch: int = 0
    step: int = 0
    learning_rate: float = 0.0
    pretrain_losses: list[float] = field(default_factory=list)
    history: list[EpochMetrics] = field(default_factory=list)


def new_state(feature_dim: int, n_classes: int, hp: ls.Hyperparams,
              sizes: ModelSizes | None = None) -> TrainState:
    sizes = sizes or ModelSizes()
    hp.validate(n_classes)
    model = ModelParams.build(feature_dim, n_classes, hp.code_bits, sizes, hp.seed)
    return TrainState(model=model, hp=hp, n_classes=n_classes, sizes=sizes,
                      rng=np.random.default_rng(hp.seed),
                      learning_rate=hp.learning_rate)


def _index_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    full = n // batch_size
    return [perm[i * batch_size:(i + 1) * batch_size] for i in range(full)]


def make_batches(dataset: Dataset, batch_size: int, seed: int) -> list[Batch]:
    """Shuffled full batches covering one epoch; the final short batch is
    dropped because centroid estimates need complete batches."""
    if batch_size <= dataset.n_classes:
        raise ValueError(
            f"batch size must be larger than the number of classes: "
            f"{batch_size} <= {dataset.n_classes}")
    rng = np.random.default_rng(seed)
    return _batches(dataset, batch_size, rng)


def _batches(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> list[Batch]:
    out = []
    for idx in _index_batches(len(dataset), batch_size, rng):
        labels = dataset.labels[idx] if dataset.labels is not None else None
        out.append(Batch(dataset.features[idx], labels))
    return out


def evaluate_accuracy(encoder: nets.ParameterSet, classifier: nets.ParameterSet,
                      features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax-correct predictions; evaluation only."""
    labels = np.asarray(labels)
    if len(features) != len(labels):
        raise ValueError(f"{len(features)} rows vs {len(labels)} labels")
    u = nets.encode(encoder, ad.leaf(features))
    probs = nets.classify(classifier, u).value
    return float((probs.argmax(axis=1) == labels).mean())


def _target_pseudo_labels(state: TrainState, features: np.ndarray) -> PseudoLabels:
    u = nets.encode(state.model.encoder, ad.leaf(features))
    probs = nets.classify(state.model.classifier, u).value
    return pseudo_label(probs, state.hp.confidence_threshold)


def discriminator_step(state: TrainState, src_batch: Batch, tgt_batch: Batch,
                       pl: PseudoLabels) -> float:
    """One or more discriminator updates; encoder/generators stay frozen
    (their outputs enter as constants)."""
    model, hp = state.model, state.hp
    u_src = nets.encode(model.encoder, ad.leaf(src_batch.features)).value
    u_tgt = nets.encode(model.encoder, ad.leaf(tgt_batch.features)).value
    fake_src_to_tgt = nets.reconstruct(model.gen_tgt, ad.leaf(u_src)).value
    fake_tgt_to_src = nets.reconstruct(model.gen_src, ad.leaf(u_tgt)).value

    value = math.nan
    for _ in range(hp.d_steps):
        d_src_real = nets.discriminate(model.disc_src, ad.leaf(src_batch.features))
        d_src_fake = nets.discriminate(model.disc_src, ad.leaf(fake_tgt_to_src))
        d_tgt_real = nets.discriminate(model.disc_tgt, ad.leaf(tgt_batch.features))
        d_tgt_fake = nets.discriminate(model.disc_tgt, ad.leaf(fake_src_to_tgt))
        loss = ad.add(
            ls.discriminator_loss(d_src_real, src_batch.labels, d_src_fake,
                                  state.n_classes),
            ls.discriminator_loss(d_tgt_real, pl.labels, d_tgt_fake,
                                  state.n_classes))
        ad.backward(loss)
        model.disc_src.sgd_step(state.learning_rate)
        model.disc_tgt.sgd_step(state.learning_rate)
        value = float(loss.value[0, 0])
    return value


def encoder_generator_step(state: TrainState, src_batch: Batch, tgt_batch: Batch,
                           pl: PseudoLabels) -> StepLosses:
    """Combined-objective update of encoder, classifier and generators with
    the discriminators frozen (they stay in the graph as functions)."""
    model, hp = state.model, state.hp
    n_classes = state.n_classes
    x_src = ad.leaf(src_batch.features)
    x_tgt = ad.leaf(tgt_batch.features)
    u_src = nets.encode(model.encoder, x_src)
    u_tgt = nets.encode(model.encoder, x_tgt)

    p_src = nets.classify(model.classifier, u_src)
    p_tgt = nets.classify(model.classifier, u_tgt)
    class_loss = ls.classification_loss(p_src, src_batch.labels, p_tgt, pl.labels,
                                        hp.pseudo_weight)

    hash_loss = centroid_loss = recon_loss = adv_gen = None
    if hp.use_hash:
        sim = ls.similarity_matrix(src_batch.labels)
        hash_loss = ls.pairwise_hash_loss(u_src, sim, hp.quant_weight)
    if hp.use_centroid:
        centroid_loss = ls.centroid_alignment_loss(u_src, src_batch.labels,
                                                   u_tgt, pl.labels, n_classes)
    generators_active = hp.use_adversarial or hp.use_recon
    if hp.use_recon:
        recon_src = nets.reconstruct(model.gen_src, u_src)
        recon_tgt = nets.reconstruct(model.gen_tgt, u_tgt)
        recon_loss = ls.reconstruction_l1_loss(x_src, recon_src, x_tgt, recon_tgt)
    if hp.use_adversarial:
        fake_src_to_tgt = nets.reconstruct(model.gen_tgt, u_src)
        fake_tgt_to_src = nets.reconstruct(model.gen_src, u_tgt)
        adv_gen = ls.generator_adversarial_loss(
            nets.discriminate(model.disc_tgt, fake_src_to_tgt), src_batch.labels,
            nets.discriminate(model.disc_src, fake_tgt_to_src), pl.labels,
            n_classes)

    total = ls.combined_model_loss(class_loss, adv_gen, hash_loss, centroid_loss,
                                   recon_loss, hp)
    ad.backward(total)
    model.encoder.sgd_step(state.learning_rate)
    model.classifier.sgd_step(state.learning_rate)
    if generators_active:
        model.gen_src.sgd_step(state.learning_rate)
        model.gen_tgt.sgd_step(state.learning_rate)

    def val(node):
        return float(node.value[0, 0]) if node is not None else math.nan

    return StepLosses(class_loss=val(class_loss), hash_loss=val(hash_loss),
                      centroid_loss=val(centroid_loss), recon_loss=val(recon_loss),
                      disc_loss=math.nan, adv_gen_loss=val(adv_gen))


def train_step(state: TrainState, src_batch: Batch, tgt_batch: Batch) -> StepLosses:
    """One full-objective step: pseudo-labels, discriminator update, then
    encoder/classifier/generator update."""
    if src_batch.labels is None:
        raise ValueError("source batch must be labeled")
    pl = _target_pseudo_labels(state, tgt_batch.features)
    disc_loss = math.nan
    if state.hp.use_adversarial:
        disc_loss = discriminator_step(state, src_batch, tgt_batch, pl)
    step = encoder_generator_step(state, src_batch, tgt_batch, pl)
    step.disc_loss = disc_loss
    state.step += 1
    return step


def pretrain_source(state: TrainState, source: Dataset,
                    epochs: int | None = None) -> TrainState:
    """Source-only warm start of encoder and classifier.

    Minimizes the source classification loss (plus the weighted hash loss
    unless disabled); no target data, no adversarial terms.
    """
    if len(source) == 0 or source.labels is None:
        raise ValueError("pretraining needs a non-empty labeled source dataset")
    hp = state.hp
    epochs = hp.pretrain_epochs if epochs is None else epochs
    batch_size = hp.effective_batch_size(state.n_classes)
    for _ in range(epochs):
        epoch_total = 0.0
        batches = _batches(source, batch_size, state.rng)
        for batch in batches:
            u = nets.encode(state.model.encoder, ad.leaf(batch.features))
            probs = nets.classify(state.model.classifier, u)
            loss = ls.classification_loss(probs, batch.labels, None, None,
                                          hp.pseudo_weight)
            if hp.use_hash:
                sim = ls.similarity_matrix(batch.labels)
                hash_term = ls.pairwise_hash_loss(u, sim, hp.quant_weight)
                loss = ad.add(loss, ad.scale(hash_term, hp.hash_weight))
            ad.backward(loss)
            state.model.encoder.sgd_step(state.learning_rate)
            state.model.classifier.sgd_step(state.learning_rate)
            epoch_total += float(loss.value[0, 0])
        state.pretrain_losses.append(epoch_total / max(len(batches), 1))
    return state


def _epoch_metrics(state: TrainState, stage: int, epoch: int,
                   sums: StepLosses, steps: int, source: Dataset,
                   target_features: np.ndarray,
                   eval_target: Dataset | None) -> EpochMetrics:
    inv = 1.0 / max(steps, 1)
    src_acc = evaluate_accuracy(state.model.encoder, state.model.classifier,
                                source.features, source.labels)
    tgt_acc = math.nan
    if eval_target is not None and eval_target.labels is not None:
        tgt_acc = evaluate_accuracy(state.model.encoder, state.model.classifier,
                                    eval_target.features, eval_target.labels)
    pl = _target_pseudo_labels(state, target_features)
    return EpochMetrics(
        stage=stage, epoch=epoch,
        class_loss=sums.class_loss * inv, hash_loss=sums.hash_loss * inv,
        centroid_loss=sums.centroid_loss * inv, recon_loss=sums.recon_loss * inv,
        disc_loss=sums.disc_loss * inv, adv_gen_loss=sums.adv_gen_loss * inv,
        src_acc=src_acc, tgt_acc=tgt_acc,
        confident_frac=confident_fraction(pl))


def _accumulate(sums: StepLosses, step: StepLosses) -> None:
    for name in ("class_loss", "hash_loss", "centroid_loss", "recon_loss",
                 "disc_loss", "adv_gen_loss"):
        current = getattr(sums, name)
        incoming = getattr(step, name)
        if math.isnan(incoming):
            continue
        setattr(sums, name, incoming if math.isnan(current) else current + incoming)


def metrics_csv_text(history: list[EpochMetrics]) -> str:
    lines = [METRICS_HEADER]
    lines.extend(m.csv_row() for m in history)
    return "\n".join(lines) + "\n"


def start_stage(state: TrainState, stage: int, feature_dim: int) -> None:
    """Stage-boundary contract: encoder and classifier carry over bitwise,
    generators and discriminators restart from fresh stage-specific seeds,
    and the learning rate decays."""
    hp = state.hp
    state.stage = stage
    state.learning_rate = hp.learning_rate * (hp.lr_stage_decay ** stage)
    if stage > 0:
        fresh = ModelParams.build(feature_dim, state.n_classes, hp.code_bits,
                                  state.sizes, hp.seed, stage=stage)
        state.model.gen_src = fresh.gen_src
        state.model.gen_tgt = fresh.gen_tgt
        state.model.disc_src = fresh.disc_src
        state.model.disc_tgt = fresh.disc_tgt


def run_stages(state: TrainState, source: Dataset, target: Dataset,
               eval_target: Dataset | None = None,
               metrics_path: str | None = None,
               checkpoint_dir: str | None = None) -> TrainState:
    """Full staged schedule over an already pre-trained state.

    The target dataset is stripped of labels on entry; evaluation reads only
    ``eval_target``. Encoder and classifier survive stage boundaries, the
    adversarial pairs restart from fresh seeds, and the learning rate decays
    by hp.lr_stage_decay per stage.
    """
    target = target.without_labels()
    hp = state.hp
    batch_size = hp.effective_batch_size(state.n_classes)
    feature_dim = source.feature_dim

    for stage in range(hp.stages):
        start_stage(state, stage, feature_dim)
        for epoch in range(hp.epochs_per_stage):
            state.epoch = epoch
            sums = StepLosses(*([math.nan] * 6))
            src_batches = _batches(source, batch_size, state.rng)
            tgt_batches = _batches(target, batch_size, state.rng)
            steps = 0
            for src_batch, tgt_batch in zip(src_batches, tgt_batches):
                _accumulate(sums, train_step(state, src_batch, tgt_batch))
                steps += 1
            metrics = _epoch_metrics(state, stage, epoch, sums, steps, source,
                                     target.features, eval_target)
            state.history.append(metrics)
            if metrics_path is not None:
                atomic_write_text(metrics_path, metrics_csv_text(state.history))
        if checkpoint_dir is not None:
            state.model.save(os.path.join(checkpoint_dir, f"stage_{stage:02d}"))
    return state
