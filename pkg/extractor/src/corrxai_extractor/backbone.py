"""Convolutional backbone wrapper: pooled global feature + pre-pool patch grid.

The classifier geometry is the final convolutional stage of a ResNet-50:
a 224x224 input yields a 7x7x2048 activation grid whose average pool is the
2048-d global embedding. Weight sources:

    imagenet        torchvision pretrained weights (needs download/cache)
    random:<seed>   deterministic random initialization, for offline
                    fixtures and plumbing tests
    <path>.pth      a local state_dict checkpoint

Inference always runs in eval mode with a fixed preprocessing pipeline, so
extraction is deterministic for fixed weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models, transforms

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

GLOBAL_DIM = 2048
GRID = 7
INPUT_SIZE = 224
RESIZE_SIZE = 256


@dataclass(frozen=True)
class BackboneInfo:
    weights: str
    input_size: int
    resize_size: int
    grid: int
    dim: int


class FeatureBackbone:
    """ResNet-50 feature stage with the classification head removed."""

    def __init__(self, weights: str = "imagenet", input_size: int = INPUT_SIZE,
                 resize_size: int = RESIZE_SIZE):
        if weights == "imagenet":
            model = models.resnet50(weights=models.ResNet50_Weights.IMAGENET1K_V1)
        elif weights.startswith("random:"):
            seed = int(weights.split(":", 1)[1])
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                model = models.resnet50(weights=None)
        else:
            model = models.resnet50(weights=None)
            state = torch.load(weights, map_location="cpu", weights_only=True)
            model.load_state_dict(state, strict=False)
        model.eval()
        self._stem = torch.nn.Sequential(
            model.conv1, model.bn1, model.relu, model.maxpool,
            model.layer1, model.layer2, model.layer3, model.layer4)
        self.info = BackboneInfo(weights=weights, input_size=input_size,
                                 resize_size=resize_size, grid=GRID, dim=GLOBAL_DIM)
        self._preprocess = transforms.Compose([
            transforms.Resize(resize_size),
            transforms.CenterCrop(input_size),
            transforms.ToTensor(),
            transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
        ])

    def load_image(self, path: str | Path) -> torch.Tensor:
        with Image.open(path) as img:
            return self._preprocess(img.convert("RGB"))

    @torch.no_grad()
    def extract(self, batch: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
        """(B, 3, H, W) -> global (B, 2048) and patches (B, g, g, 2048)."""
        if batch.ndim == 3:
            batch = batch.unsqueeze(0)
        fmap = self._stem(batch)  # (B, 2048, g, g)
        pooled = fmap.mean(dim=(2, 3))
        patches = fmap.permute(0, 2, 3, 1).contiguous()
        return pooled.numpy(), patches.numpy()
