"""Rendering of compositional kernel activation channels and mask overlays.

Activation panels are written in row-major kernel order (panel j = kernel j),
with values in [0, 1] mapped to the full 8-bit grayscale range and upscaled
to image resolution with nearest-neighbor so they align with the input.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .data import Domain, Image, normalize_intensity, read_image_file
from .training import Mode, TrainState, predict_target
from .translation import DOWNSAMPLE_FACTOR
from .vmf import activations, normalize_features

# Overlay colors by class index (1-based foreground classes); background is
# left as the grayscale input. Indices beyond the palette wrap around.
CLASS_COLORS = [
    (220, 60, 50),   # class 1: red
    (70, 190, 80),   # class 2: green
    (70, 100, 230),  # class 3: blue
    (230, 200, 60),  # class 4: yellow
    (180, 80, 200),  # class 5: purple
]

GRID_COLS = 5
GRID_PAD = 2


def activation_panels(state: TrainState, image: Image, raw: bool = False) -> np.ndarray:
    """(J, H, W) activation maps for one image through the target encoder."""
    if state.mode is not Mode.PROPOSED:
        raise ValueError("activation visualization requires a proposed-mode checkpoint")
    batch = torch.from_numpy(image.pixels[None, None]).float()
    with torch.no_grad():
        z = normalize_features(state.nets.e_y(batch))
        comp = activations(state.bank, z, normalize_over_kernels=not raw)
    panels = comp[0].cpu().numpy()
    return np.repeat(np.repeat(panels, DOWNSAMPLE_FACTOR, axis=1), DOWNSAMPLE_FACTOR, axis=2)


def panel_to_u8(panel: np.ndarray) -> np.ndarray:
    return np.round(np.clip(panel, 0.0, 1.0) * 255.0).astype(np.uint8)


def image_to_u8(pixels: np.ndarray) -> np.ndarray:
    return np.round((np.clip(pixels, -1.0, 1.0) + 1.0) / 2.0 * 255.0).astype(np.uint8)


def panel_grid(panels: np.ndarray, cols: int = GRID_COLS, pad: int = GRID_PAD) -> np.ndarray:
    """Tile (J, H, W) panels row-major into one grayscale grid image."""
    j, h, w = panels.shape
    cols = min(cols, j)
    rows = (j + cols - 1) // cols
    grid = np.full((rows * h + (rows + 1) * pad, cols * w + (cols + 1) * pad), 32, dtype=np.uint8)
    for idx in range(j):
        r, c = divmod(idx, cols)
        top = pad + r * (h + pad)
        left = pad + c * (w + pad)
        grid[top:top + h, left:left + w] = panel_to_u8(panels[idx])
    return grid


def overlay_mask(pixels: np.ndarray, mask: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend class colors over the grayscale image; background stays gray."""
    gray = image_to_u8(pixels)
    rgb = np.stack([gray, gray, gray], axis=-1).astype(np.float64)
    for class_id in np.unique(mask):
        if class_id == 0:
            continue
        color = np.array(CLASS_COLORS[(int(class_id) - 1) % len(CLASS_COLORS)], dtype=np.float64)
        sel = mask == class_id
        rgb[sel] = (1.0 - alpha) * rgb[sel] + alpha * color
    return np.round(rgb).astype(np.uint8)


def write_visualization(
    state: TrainState,
    image_path: Path | str,
    out_dir: Path | str,
    raw: bool = False,
) -> dict[str, Path]:
    """Write per-kernel panels, their grid, the input, and the prediction overlay.

    Emits channel_<j>.png for every kernel (row-major order matching the
    grid), channels.png, input.png, and overlay.png under out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pixels = normalize_intensity(read_image_file(image_path))
    image = Image(pixels=pixels, domain=Domain.TARGET, spacing=(1.0, 1.0),
                  id=Path(image_path).stem)
    panels = activation_panels(state, image, raw=raw)
    pred = predict_target(state, [image])[0]

    paths: dict[str, Path] = {}
    for j in range(panels.shape[0]):
        p = out_dir / f"channel_{j:02d}.png"
        PILImage.fromarray(panel_to_u8(panels[j]), mode="L").save(p)
        paths[f"channel_{j:02d}"] = p
    grid_path = out_dir / "channels.png"
    PILImage.fromarray(panel_grid(panels), mode="L").save(grid_path)
    paths["channels"] = grid_path
    input_path = out_dir / "input.png"
    PILImage.fromarray(image_to_u8(pixels), mode="L").save(input_path)
    paths["input"] = input_path
    overlay_path = out_dir / "overlay.png"
    PILImage.fromarray(overlay_mask(pixels, pred), mode="RGB").save(overlay_path)
    paths["overlay"] = overlay_path
    return paths
