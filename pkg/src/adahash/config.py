"""Plain-text run configuration: one `section.key=value` per line.

Blank lines and `#` comments are ignored; unknown keys are rejected so typos
fail fast instead of silently training with defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .datasets import Dataset, ShiftSpec, load_csv, load_idx, make_synthetic_pair
from .losses import Hyperparams
from .training import ModelSizes


@dataclass
class DataConfig:
    kind: str = "synthetic"
    # synthetic benchmark knobs
    classes: int = 4
    per_class: int = 200
    dim: int = 2
    cluster_sigma: float = 0.15
    radius: float = 1.0
    rotation_deg: float = 50.0
    translation: tuple[float, ...] = (0.3, -0.2)
    scale: float = 1.0
    noise_sigma: float = 0.0
    seed: int = -1  # -1: reuse the training seed
    # csv paths
    source_csv: str = ""
    target_csv: str = ""
    target_labeled: bool = True
    # idx paths
    source_images: str = ""
    source_labels: str = ""
    target_images: str = ""
    target_labels: str = ""
    limit: int = 0  # 0: no cap


@dataclass
class RunConfig:
    data: DataConfig
    sizes: ModelSizes
    hp: Hyperparams


def _to_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _to_int_tuple(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(part) for part in raw.split(","))


def _to_float_tuple(raw: str) -> tuple[float, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(float(part) for part in raw.split(","))


_DATA_TYPES = {
    "kind": str, "classes": int, "per_class": int, "dim": int,
    "cluster_sigma": float, "radius": float, "rotation_deg": float,
    "translation": _to_float_tuple, "scale": float, "noise_sigma": float,
    "seed": int, "source_csv": str, "target_csv": str,
    "target_labeled": _to_bool, "source_images": str, "source_labels": str,
    "target_images": str, "target_labels": str, "limit": int,
}

_NET_TYPES = {
    "encoder_hidden": _to_int_tuple,
    "generator_hidden": _to_int_tuple,
    "discriminator_hidden": _to_int_tuple,
    "classifier_hidden": _to_int_tuple,
}

_TRAIN_TYPES = {
    "hash_weight": float, "centroid_weight": float, "recon_weight": float,
    "pseudo_weight": float, "quant_weight": float,
    "confidence_threshold": float, "learning_rate": float,
    "lr_stage_decay": float, "code_bits": int, "batch_size": int,
    "stages": int, "epochs_per_stage": int, "pretrain_epochs": int,
    "d_steps": int, "seed": int,
    "use_hash": _to_bool, "use_centroid": _to_bool,
    "use_adversarial": _to_bool, "use_recon": _to_bool,
}

_SECTIONS = {"data": _DATA_TYPES, "net": _NET_TYPES, "train": _TRAIN_TYPES}


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    values: dict[str, dict[str, object]] = {"data": {}, "net": {}, "train": {}}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{origin}:{lineno}: expected key=value, got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if "." not in key:
            raise ValueError(f"{origin}:{lineno}: key must be section.name, got {key!r}")
        section, _, name = key.partition(".")
        if section not in _SECTIONS:
            raise ValueError(f"{origin}:{lineno}: unknown section {section!r}")
        types = _SECTIONS[section]
        if name not in types:
            raise ValueError(f"{origin}:{lineno}: unknown key {key!r}")
        try:
            values[section][name] = types[name](raw_value)
        except ValueError as exc:
            raise ValueError(f"{origin}:{lineno}: bad value for {key}: {exc}") from None

    data = DataConfig(**values["data"])
    sizes = ModelSizes(**values["net"])
    hp = Hyperparams(**values["train"])
    if data.kind not in ("synthetic", "csv", "idx"):
        raise ValueError(f"data.kind must be synthetic, csv or idx, got {data.kind!r}")
    return RunConfig(data=data, sizes=sizes, hp=hp)


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), origin=path)


def config_text(cfg: RunConfig) -> str:
    """Render a RunConfig back to the key=value format (defaults included)."""
    lines = []
    for section, obj in (("data", cfg.data), ("net", cfg.sizes), ("train", cfg.hp)):
        for f in fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{section}.{f.name}={value}")
    return "\n".join(lines) + "\n"


def _align_target_labels(target: Dataset, source: Dataset) -> Dataset:
    """Remap CSV target labels into the source's contiguous class ids."""
    if target.labels is None or target.label_map is None or source.label_map is None:
        return target
    inverse = {new: orig for orig, new in target.label_map.items()}
    originals = np.array([inverse[int(v)] for v in target.labels])
    missing = sorted(set(originals.tolist()) - set(source.label_map.keys()))
    if missing:
        raise ValueError(f"target labels {missing} never appear in the source domain")
    remapped = np.array([source.label_map[int(v)] for v in originals], dtype=np.int64)
    return Dataset(target.features, remapped, target.domain, source.n_classes,
                   label_map=source.label_map)


def build_datasets(cfg: DataConfig, fallback_seed: int) -> tuple[Dataset, Dataset]:
    """Load or synthesize the (labeled source, labeled-if-possible target) pair.

    Target labels, when present, are for evaluation only; the trainer strips
    them before touching target data.
    """
    if cfg.kind == "synthetic":
        seed = cfg.seed if cfg.seed >= 0 else fallback_seed
        shift = ShiftSpec(rotation=np.deg2rad(cfg.rotation_deg),
                          translation=cfg.translation,
                          scale=cfg.scale,
                          noise_sigma=cfg.noise_sigma)
        return make_synthetic_pair(cfg.classes, cfg.per_class, cfg.dim, shift,
                                   seed, cluster_sigma=cfg.cluster_sigma,
                                   radius=cfg.radius)
    if cfg.kind == "csv":
        if not cfg.source_csv or not cfg.target_csv:
            raise ValueError("csv data needs data.source_csv and data.target_csv")
        source = load_csv(cfg.source_csv, has_labels=True, domain="source")
        target = load_csv(cfg.target_csv, has_labels=cfg.target_labeled,
                          domain="target", n_classes=source.n_classes)
        target = _align_target_labels(target, source)
        if target.labels is None and target.n_classes != source.n_classes:
            target = Dataset(target.features, None, "target", source.n_classes)
        return source, target
    if cfg.kind == "idx":
        for key in ("source_images", "source_labels", "target_images", "target_labels"):
            if not getattr(cfg, key):
                raise ValueError(f"idx data needs data.{key}")
        limit = cfg.limit if cfg.limit > 0 else None
        source = load_idx(cfg.source_images, cfg.source_labels, limit, domain="source")
        target = load_idx(cfg.target_images, cfg.target_labels, limit, domain="target")
        n = max(source.n_classes, target.n_classes)
        if source.n_classes != n:
            source = Dataset(source.features, source.labels, "source", n)
        if target.n_classes != n:
            target = Dataset(target.features, target.labels, "target", n)
        return source, target
    raise ValueError(f"unknown data kind {cfg.kind!r}")
