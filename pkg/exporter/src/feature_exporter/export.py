"""Backbone feature extraction and FTEN serialization.

Preprocessing is fixed: resize to 256x256 (bilinear), scale to [0, 1],
normalize with mean [0.485, 0.456, 0.406] and std [0.229, 0.224, 0.225].
No augmentation is applied.

For EfficientNet-B4 the exportable "blocks" are the last stage of each of
the first four resolution scales of the torchvision implementation:

    block 1 -> features[1]   (24 channels, stride 2)
    block 2 -> features[2]   (32 channels, stride 4)
    block 3 -> features[3]   (56 channels, stride 8)
    block 4 -> features[5]  (160 channels, stride 16)

so blocks 1-4 resized to 16x16 concatenate to a 272 x 16 x 16 feature map
per image. The chosen layer names are recorded in the export manifest.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torchvision.models import EfficientNet_B4_Weights, efficientnet_b4

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
INPUT_SIZE = 256
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

# backbone name -> {block number: (module index within .features, channels)}
BACKBONES = {
    "efficientnet_b4": {1: (1, 24), 2: (2, 32), 3: (3, 56), 4: (5, 160)},
}


@dataclass
class ExportConfig:
    image_dir: str
    out_path: str
    backbone: str = "efficientnet_b4"
    blocks: tuple[int, ...] = (1, 2, 3, 4)
    hw: tuple[int, int] = (16, 16)
    pretrained: bool = True
    block_taps: dict = field(init=False)

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; "
                             f"available: {sorted(BACKBONES)}")
        taps = BACKBONES[self.backbone]
        bad = [b for b in self.blocks if b not in taps]
        if bad or not self.blocks:
            raise ValueError(f"invalid blocks {self.blocks} for {self.backbone}; "
                             f"valid: {sorted(taps)}")
        if min(self.hw) < 1:
            raise ValueError("target resolution must be positive")
        self.block_taps = {b: taps[b] for b in sorted(set(self.blocks))}

    @property
    def channels(self) -> int:
        return sum(c for _, c in self.block_taps.values())


def load_backbone(cfg: ExportConfig) -> torch.nn.Module:
    """Instantiate the backbone; pretrained weights missing is a hard error."""
    if cfg.pretrained:
        try:
            model = efficientnet_b4(weights=EfficientNet_B4_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise RuntimeError(
                f"pretrained weights for {cfg.backbone} unavailable: {exc}") from exc
    else:
        model = efficientnet_b4(weights=None)
    model.eval()
    return model


def load_image(path: Path) -> torch.Tensor:
    """One image as a normalized (1, 3, 256, 256) tensor."""
    with Image.open(path) as img:
        img = img.convert("RGB").resize((INPUT_SIZE, INPUT_SIZE), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(IMAGENET_MEAN, dtype=np.float32)) \
        / np.asarray(IMAGENET_STD, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1))[None]


@torch.no_grad()
def extract(model: torch.nn.Module, cfg: ExportConfig, batch: torch.Tensor) -> np.ndarray:
    """Concatenated block features for one preprocessed batch."""
    h, w = cfg.hw
    taps = {idx: None for idx, _ in cfg.block_taps.values()}
    x = batch
    last = max(taps)
    for i, module in enumerate(model.features):
        x = module(x)
        if i in taps:
            taps[i] = F.interpolate(x, size=(h, w), mode="bilinear",
                                    align_corners=False)
        if i >= last:
            break
    feats = torch.cat([taps[idx] for idx, _ in cfg.block_taps.values()], dim=1)
    return feats.numpy().astype(np.float64)


def list_images(image_dir: str) -> list[Path]:
    root = Path(image_dir)
    if not root.is_dir():
        raise ValueError(f"image directory {image_dir!r} does not exist")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def export_features(cfg: ExportConfig) -> tuple[int, int]:
    """Export all readable images; returns (n_exported, n_skipped).

    Writes the FTEN file at cfg.out_path and a manifest CSV next to it
    (``<out>.manifest.csv``) with one row per image: filename, index into
    the FTEN stack (empty when skipped), and status. Header comments
    record the backbone layer each block maps to.
    """
    model = load_backbone(cfg)
    paths = list_images(cfg.image_dir)
    if not paths:
        raise ValueError(f"no images found under {cfg.image_dir!r}")
    feats: list[np.ndarray] = []
    manifest: list[str] = []
    for path in paths:
        try:
            batch = load_image(path)
        except Exception as exc:
            log.warning("skipping unreadable image %s: %s", path.name, exc)
            manifest.append(f"{path.name},,skipped")
            continue
        feats.append(extract(model, cfg, batch)[0])
        manifest.append(f"{path.name},{len(feats) - 1},ok")
    if not feats:
        raise ValueError("all images were unreadable")
    stack = np.stack(feats)
    write_ften(cfg.out_path, stack)

    lines = [f"# backbone: {cfg.backbone} (pretrained={cfg.pretrained})"]
    for b, (idx, ch) in cfg.block_taps.items():
        lines.append(f"# block {b} -> features[{idx}] ({ch} channels)")
    lines.append("filename,index,status")
    lines.extend(manifest)
    Path(str(cfg.out_path) + ".manifest.csv").write_text("\n".join(lines) + "\n")
    skipped = len(paths) - len(feats)
    log.info("exported %d images (%d skipped) to %s", len(feats), skipped, cfg.out_path)
    return len(feats), skipped


def write_ften(path, tensors: np.ndarray) -> None:
    """FTEN writer: magic "FTEN", u32 version=1, u32 N,C,h,w, f32 payload."""
    arr = np.asarray(tensors)
    if arr.ndim != 4:
        raise ValueError(f"expected (N, C, h, w), got {arr.shape}")
    n, c, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"FTEN")
        fh.write(struct.pack("<IIIII", 1, n, c, h, w))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
