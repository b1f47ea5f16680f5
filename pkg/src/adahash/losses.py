"""Loss terms for the adaptive-hashing objective.

All losses are batch sums (not means), are built as autodiff graph nodes, and
return scalar (1, 1) nodes. Target-domain rows whose pseudo-label is -1
("unassigned") contribute nothing to any term that consumes pseudo-labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


def sign_pm1(x: np.ndarray) -> np.ndarray:
    """Sign with the deterministic tie-break sign(0) = +1; values in {-1, +1}."""
    return np.where(x >= 0, 1.0, -1.0)


@dataclass
class Hyperparams:
    """Every scalar knob of the model and its training schedule."""

    hash_weight: float = 1.0          # weight on the pairwise hash loss
    centroid_weight: float = 0.5      # weight on the centroid-alignment loss
    recon_weight: float = 0.1         # weight on the L1 reconstruction loss
    pseudo_weight: float = 0.1        # weight on the pseudo-label cross-entropy
    quant_weight: float = 0.01        # weight on the quantization (relaxation) term
    confidence_threshold: float = 0.9  # pseudo-label acceptance threshold
    learning_rate: float = 0.01
    lr_stage_decay: float = 0.5       # learning-rate factor applied at each new stage
    code_bits: int = 64               # embedding width d == hash-code length
    batch_size: int = 0               # 0 means the default 10 * n_classes
    stages: int = 3
    epochs_per_stage: int = 30
    pretrain_epochs: int = 20
    d_steps: int = 1                  # discriminator updates per generator update
    seed: int = 0
    # Ablation toggles; the classification term is always on.
    use_hash: bool = True
    use_centroid: bool = True
    use_adversarial: bool = True
    use_recon: bool = True

    def effective_batch_size(self, n_classes: int) -> int:
        return self.batch_size if self.batch_size > 0 else 10 * n_classes

    def validate(self, n_classes: int) -> None:
        for attr in ("hash_weight", "centroid_weight", "recon_weight",
                     "pseudo_weight", "quant_weight"):
            if getattr(self, attr) < 0:
                raise ValueError(f"{attr} must be >= 0, got {getattr(self, attr)}")
        if not 1.0 / n_classes < self.confidence_threshold < 1.0:
            raise ValueError(
                f"confidence_threshold must lie in (1/{n_classes}, 1), "
                f"got {self.confidence_threshold}")
        batch = self.effective_batch_size(n_classes)
        if batch <= n_classes:
            raise ValueError(
                f"batch size must be larger than the number of classes: "
                f"{batch} <= {n_classes}")
        if self.code_bits < 1:
            raise ValueError(f"code_bits must be >= 1, got {self.code_bits}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.stages < 1:
            raise ValueError(f"stages must be >= 1, got {self.stages}")
        if self.d_steps < 1:
            raise ValueError(f"d_steps must be >= 1, got {self.d_steps}")


def similarity_matrix(labels: np.ndarray) -> np.ndarray:
    """Pairwise label-agreement matrix with entries in {-1, +1}.

    Symmetric with +1 diagonal: entry (i, j) is +1 iff labels match.
    """
    labels = np.asarray(labels)
    return np.where(labels[:, None] == labels[None, :], 1.0, -1.0)


def _check_labels(labels: np.ndarray, n_classes: int, what: str,
                  allow_unassigned: bool) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    low = -1 if allow_unassigned else 0
    if labels.size and (labels.min() < low or labels.max() >= n_classes):
        raise ValueError(
            f"{what}: labels must lie in [{max(low, 0)}, {n_classes})"
            f"{' or be -1' if allow_unassigned else ''}, "
            f"got range [{labels.min()}, {labels.max()}]")
    return labels


def _one_hot(labels: np.ndarray, n_cols: int) -> np.ndarray:
    """Rows with label -1 come out all-zero (excluded from the sum)."""
    mask = np.zeros((len(labels), n_cols))
    valid = labels >= 0
    mask[np.nonzero(valid)[0], labels[valid]] = 1.0
    return mask


def pairwise_hash_loss(u: ad.Node, sim: np.ndarray, quant_weight: float) -> ad.Node:
    """Code-agreement loss over all ordered pairs plus a quantization penalty.

    Half the squared gap between (1/d) u_i . u_j and the target similarity,
    summed over every ordered pair including i == j, plus
    quant_weight * 1/2 * sum((u - sign(u))^2). The sign is held constant
    during differentiation (straight-through), so the penalty's gradient is
    quant_weight * (u - sign(u)).
    """
    n, d = u.value.shape
    sim = np.asarray(sim, dtype=np.float64)
    if sim.shape != (n, n):
        raise ValueError(f"similarity matrix shape {sim.shape} does not match batch {n}")
    inner = ad.scale(ad.matmul(u, ad.transpose(u)), 1.0 / d)
    pair = ad.scale(ad.sum_all(ad.square(ad.subtract(inner, ad.leaf(sim)))), 0.5)
    gap = ad.subtract(u, ad.leaf(sign_pm1(u.value)))
    quant = ad.scale(ad.sum_all(ad.square(gap)), 0.5 * quant_weight)
    return ad.add(pair, quant)


def centroid_alignment_loss(u_src: ad.Node, src_labels: np.ndarray,
                            u_tgt: ad.Node, tgt_labels: np.ndarray,
                            n_classes: int) -> ad.Node:
    """Squared distance between per-class embedding centroids of the domains.

    Only classes present in the source batch AND carried by at least one
    confident (non -1) target pseudo-label contribute; with no common class
    the loss is exactly zero.
    """
    src_labels = _check_labels(src_labels, n_classes, "centroid source", False)
    tgt_labels = _check_labels(tgt_labels, n_classes, "centroid target", True)
    common = sorted(set(src_labels.tolist()) & set(tgt_labels[tgt_labels >= 0].tolist()))
    if not common:
        return ad.leaf(np.zeros((1, 1)))
    # Constant row-averaging matrices: centroids = selector @ embeddings.
    sel_src = np.zeros((len(common), len(src_labels)))
    sel_tgt = np.zeros((len(common), len(tgt_labels)))
    for row, cls in enumerate(common):
        src_members = src_labels == cls
        tgt_members = tgt_labels == cls
        sel_src[row, src_members] = 1.0 / src_members.sum()
        sel_tgt[row, tgt_members] = 1.0 / tgt_members.sum()
    cent_src = ad.matmul(ad.leaf(sel_src), u_src)
    cent_tgt = ad.matmul(ad.leaf(sel_tgt), u_tgt)
    return ad.sum_all(ad.square(ad.subtract(cent_src, cent_tgt)))


def classification_loss(p_src: ad.Node | None, src_labels: np.ndarray | None,
                        p_tgt: ad.Node | None, tgt_labels: np.ndarray | None,
                        pseudo_weight: float) -> ad.Node:
    """Cross-entropy: full weight on source truth, discounted on pseudo-labels.

    Either domain may be absent (None); sums within the batch, log floored at
    1e-12.
    """
    total: ad.Node | None = None
    if p_src is not None:
        n_classes = p_src.value.shape[1]
        src_labels = _check_labels(src_labels, n_classes, "classification source", False)
        mask = _one_hot(src_labels, n_classes)
        term = ad.scale(ad.sum_all(ad.multiply(ad.leaf(mask), ad.log(p_src))), -1.0)
        total = term
    if p_tgt is not None:
        n_classes = p_tgt.value.shape[1]
        tgt_labels = _check_labels(tgt_labels, n_classes, "classification target", True)
        mask = _one_hot(tgt_labels, n_classes)
        term = ad.scale(ad.sum_all(ad.multiply(ad.leaf(mask), ad.log(p_tgt))),
                        -pseudo_weight)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ValueError("classification_loss: need probabilities for at least one domain")
    return total


def reconstruction_l1_loss(x_src: ad.Node | None, recon_src: ad.Node | None,
                           x_tgt: ad.Node | None, recon_tgt: ad.Node | None) -> ad.Node:
    """Sum of elementwise absolute reconstruction errors over both domains."""
    total: ad.Node | None = None
    for x, rec, dom in ((x_src, recon_src, "source"), (x_tgt, recon_tgt, "target")):
        if x is None and rec is None:
            continue
        if x is None or rec is None:
            raise ValueError(f"reconstruction_l1_loss: {dom} pair is incomplete")
        if x.value.shape != rec.value.shape:
            raise ValueError(
                f"reconstruction_l1_loss: {dom} shapes differ, "
                f"{x.value.shape} vs {rec.value.shape}")
        term = ad.sum_all(ad.absolute(ad.subtract(x, rec)))
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ValueError("reconstruction_l1_loss: need at least one domain pair")
    return total


def discriminator_loss(d_real: ad.Node, real_labels: np.ndarray,
                       d_fake: ad.Node, n_classes: int) -> ad.Node:
    """Discriminator objective as a minimizable cross-entropy.

    Real rows should get probability mass on their class slot (rows labelled
    -1 are skipped), fake rows on the final fake slot.
    """
    if d_real.value.shape[1] != n_classes + 1 or d_fake.value.shape[1] != n_classes + 1:
        raise ValueError(
            f"discriminator outputs must have {n_classes + 1} columns, got "
            f"{d_real.value.shape} and {d_fake.value.shape}")
    real_labels = _check_labels(real_labels, n_classes, "discriminator real", True)
    real_mask = _one_hot(real_labels, n_classes + 1)
    fake_mask = np.zeros((d_fake.value.shape[0], n_classes + 1))
    fake_mask[:, n_classes] = 1.0
    real_term = ad.sum_all(ad.multiply(ad.leaf(real_mask), ad.log(d_real)))
    fake_term = ad.sum_all(ad.multiply(ad.leaf(fake_mask), ad.log(d_fake)))
    return ad.scale(ad.add(real_term, fake_term), -1.0)


def generator_adversarial_loss(d_fake_src_to_tgt: ad.Node, src_labels: np.ndarray,
                               d_fake_tgt_to_src: ad.Node, tgt_labels: np.ndarray,
                               n_classes: int) -> ad.Node:
    """Non-saturating generator objective over the two cross reconstructions.

    Each cross-reconstruction should be scored as REAL with the class label
    carried over from the embedding it was generated from; unassigned target
    rows are skipped.
    """
    for node in (d_fake_src_to_tgt, d_fake_tgt_to_src):
        if node.value.shape[1] != n_classes + 1:
            raise ValueError(
                f"discriminator outputs must have {n_classes + 1} columns, "
                f"got {node.value.shape}")
    src_labels = _check_labels(src_labels, n_classes, "generator source", False)
    tgt_labels = _check_labels(tgt_labels, n_classes, "generator target", True)
    src_mask = _one_hot(src_labels, n_classes + 1)
    tgt_mask = _one_hot(tgt_labels, n_classes + 1)
    st_term = ad.sum_all(ad.multiply(ad.leaf(src_mask), ad.log(d_fake_src_to_tgt)))
    ts_term = ad.sum_all(ad.multiply(ad.leaf(tgt_mask), ad.log(d_fake_tgt_to_src)))
    return ad.scale(ad.add(st_term, ts_term), -1.0)


def combined_model_loss(class_loss: ad.Node,
                        adv_gen_loss: ad.Node | None,
                        hash_loss: ad.Node | None,
                        centroid_loss: ad.Node | None,
                        recon_loss: ad.Node | None,
                        hp: Hyperparams) -> ad.Node:
    """Weighted sum the encoder/classifier/generators minimize.

    class_loss + adv_gen_loss + hash_weight * hash_loss
    + centroid_weight * centroid_loss + recon_weight * recon_loss;
    None terms are simply omitted (the discriminators train on their own loss).
    """
    total = class_loss
    if adv_gen_loss is not None:
        total = ad.add(total, adv_gen_loss)
    for term, weight in ((hash_loss, hp.hash_weight),
                         (centroid_loss, hp.centroid_weight),
                         (recon_loss, hp.recon_weight)):
        if term is not None:
            total = ad.add(total, ad.scale(term, weight))
    return total
