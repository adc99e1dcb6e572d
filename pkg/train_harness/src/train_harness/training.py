"""Fine-tuning and evaluation over encrypted shard corpora.

Runs are reproducible given (config, seed, manifests): seeding covers model
initialization and batch order, the models use no dropout, and everything
executes single-process on whatever device is configured.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import torch
from torch.utils.data import DataLoader

from .data import ShardDataset, combined_digest, load_corpus, resolve_source
from .model import build_model


@dataclass(frozen=True)
class TrainConfig:
    """Reference hyperparameters; any override is recorded in the metrics."""

    model: str = "vit_b_16"
    num_classes: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 3
    seed: int = 0
    weights_path: str | None = None
    device: str = "cpu"

    def __post_init__(self):
        if not 1 <= self.epochs <= 20:
            raise ValueError(f"epochs must be in [1, 20], got {self.epochs}")
        if self.batch_size < 1 or self.num_classes < 2:
            raise ValueError("batch_size must be >= 1 and num_classes >= 2")
        for name in ("learning_rate", "momentum", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def overrides(self) -> dict:
        """Fields that differ from the reference defaults."""
        out = {}
        for f in fields(self):
            if getattr(self, f.name) != f.default:
                out[f.name] = getattr(self, f.name)
        return out

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class MetricsRecord:
    train_loss: list[float] = field(default_factory=list)  # one mean per epoch
    train_accuracy: list[float] = field(default_factory=list)
    test_accuracy: float | None = None
    config: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    config_sha256: str = ""
    train_manifest_sha256: str = ""
    test_manifest_sha256: str | None = None
    model_sha256: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def _run_epoch(net, loader, device, loss_fn, optimizer=None):
    training = optimizer is not None
    net.train(training)
    total_loss = 0.0
    correct = 0
    seen = 0
    with torch.set_grad_enabled(training):
        for x, y in loader:
            x, y = x.to(device), y.to(device)
            logits = net(x)
            loss = loss_fn(logits, y)
            if training:
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            total_loss += loss.item() * len(y)
            correct += int((logits.argmax(dim=1) == y).sum())
            seen += len(y)
    if seen == 0:
        raise ValueError("empty corpus")
    return total_loss / seen, correct / seen


def _loader(corpus, cfg, *, shuffle, generator=None):
    return DataLoader(
        ShardDataset(corpus),
        batch_size=cfg.batch_size,
        shuffle=shuffle,
        generator=generator,
        num_workers=0,
    )


def fine_tune(train_source, cfg: TrainConfig, *, test_manifest=None, artifact_path=None) -> MetricsRecord:
    """Train on the shards a manifest (or epoch-indexed directory) lists.

    Returns the metrics record; when `artifact_path` is given the trained
    model is saved there as an opaque blob and its digest recorded, ready
    to be served over the collection protocol's model channel.
    """
    manifests = resolve_source(train_source, cfg.epochs)
    device = torch.device(cfg.device)
    torch.manual_seed(cfg.seed)

    first = load_corpus(manifests[0], num_classes=cfg.num_classes)
    if first.h != first.w:
        raise ValueError(f"model input must be square, corpus is {first.h}x{first.w}")
    net = build_model(cfg.model, first.h, cfg.num_classes, cfg.weights_path).to(device)
    optimizer = torch.optim.SGD(
        net.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )
    loss_fn = torch.nn.CrossEntropyLoss()

    record = MetricsRecord(
        config=cfg.to_dict(),
        overrides=cfg.overrides(),
        config_sha256=cfg.sha256(),
        train_manifest_sha256=combined_digest(manifests),
    )
    corpus = first
    for epoch, manifest in enumerate(manifests):
        if epoch > 0 and manifest != manifests[epoch - 1]:
            corpus = load_corpus(manifest, num_classes=cfg.num_classes)
            if (corpus.h, corpus.w, corpus.c) != (first.h, first.w, first.c):
                raise ValueError(f"epoch {epoch} geometry differs from epoch 0")
        generator = torch.Generator().manual_seed(cfg.seed * 10_000 + epoch)
        loss, acc = _run_epoch(net, _loader(corpus, cfg, shuffle=True, generator=generator),
                               device, loss_fn, optimizer)
        record.train_loss.append(loss)
        record.train_accuracy.append(acc)

    if artifact_path is not None:
        _save_artifact(net, cfg, first.h, artifact_path)
        record.model_sha256 = _sha256_file(artifact_path)
    if test_manifest is not None:
        test = load_corpus(test_manifest, num_classes=cfg.num_classes)
        if (test.h, test.w, test.c) != (first.h, first.w, first.c):
            raise ValueError("test corpus geometry differs from training corpus")
        _, record.test_accuracy = _run_epoch(net, _loader(test, cfg, shuffle=False), device, loss_fn)
        record.test_manifest_sha256 = test.manifest_sha256
    return record


def _save_artifact(net, cfg: TrainConfig, image_size: int, path) -> None:
    torch.save(
        {
            "state_dict": net.state_dict(),
            "model": cfg.model,
            "num_classes": cfg.num_classes,
            "image_size": image_size,
        },
        path,
    )


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def evaluate(artifact_path, test_manifest, *, batch_size: int = 64, device: str = "cpu") -> float:
    """Top-1 accuracy of a saved model artifact over an encrypted test corpus."""
    blob = torch.load(artifact_path, map_location="cpu")
    test = load_corpus(test_manifest, num_classes=blob["num_classes"])
    if test.h != blob["image_size"] or test.w != blob["image_size"]:
        raise ValueError(
            f"model expects {blob['image_size']}x{blob['image_size']} input, "
            f"corpus is {test.h}x{test.w}"
        )
    dev = torch.device(device)
    net = build_model(blob["model"], blob["image_size"], blob["num_classes"]).to(dev)
    net.load_state_dict(blob["state_dict"])
    cfg = TrainConfig(model=blob["model"], num_classes=blob["num_classes"], batch_size=batch_size)
    _, accuracy = _run_epoch(net, _loader(test, cfg, shuffle=False), dev, torch.nn.CrossEntropyLoss())
    return accuracy
