"""Vision transformer factory.

Two presets: the full-width ViT-Base/16 used for real runs (weights loaded
from a local checkpoint; this environment cannot download them), and a
deliberately tiny variant so the training loop is testable on one CPU.
"""

from __future__ import annotations

import torch
from torchvision.models.vision_transformer import VisionTransformer

PRESETS = {
    "vit_b_16": dict(patch_size=16, num_layers=12, num_heads=12, hidden_dim=768, mlp_dim=3072),
    "vit_tiny_test": dict(patch_size=4, num_layers=2, num_heads=2, hidden_dim=32, mlp_dim=64),
}

# keys whose shape depends on num_classes; dropped when adapting a
# checkpoint trained against a different label set
_HEAD_KEYS = ("heads.head.weight", "heads.head.bias")


def build_model(model: str, image_size: int, num_classes: int, weights_path=None) -> VisionTransformer:
    if model not in PRESETS:
        raise ValueError(f"unknown model {model!r}, have {sorted(PRESETS)}")
    preset = PRESETS[model]
    if image_size % preset["patch_size"]:
        raise ValueError(f"image size {image_size} is not a multiple of patch {preset['patch_size']}")
    net = VisionTransformer(image_size=image_size, num_classes=num_classes, **preset)
    if weights_path is not None:
        state = torch.load(weights_path, map_location="cpu")
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        own = net.state_dict()
        for key in _HEAD_KEYS:
            if key in state and state[key].shape != own[key].shape:
                del state[key]
        missing, unexpected = net.load_state_dict(state, strict=False)
        real_missing = [k for k in missing if k not in _HEAD_KEYS]
        if real_missing or unexpected:
            raise ValueError(
                f"checkpoint does not fit {model}: missing {real_missing}, unexpected {unexpected}"
            )
    return net
