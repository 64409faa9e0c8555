"""Synthetic rectified stereo pairs with exact ground truth.

A scene is a stack of axis-aligned textured rectangles ("layers") painted
back to front. Each layer has a disparity that is constant or linear in x/y.
The right view samples every layer at ``x' = x - d`` with nearest-pixel
rounding, so integer-disparity scenes have exact ground truth.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .imgio import DisparityMap, ImagePair

TEXTURES = ("random", "stripes", "flat")

VISIBLE, OCCLUDED, OUT_OF_FRAME = 0, 1, 2


@dataclass
class Layer:
    # rectangle in left-image coordinates, end exclusive; None = whole canvas
    rect: tuple[int, int, int, int] | None = None
    disparity: float = 0.0
    grad_x: float = 0.0
    grad_y: float = 0.0
    texture: str = "random"
    period: int = 8
    level: int = 128
    contrast: int = 255
    cell: int = 1

    def disparity_at(self, x, y):
        x0, y0 = (self.rect[0], self.rect[1]) if self.rect else (0, 0)
        return self.disparity + self.grad_x * (np.asarray(x) - x0) + self.grad_y * (np.asarray(y) - y0)


@dataclass
class SceneSpec:
    width: int
    height: int
    d_max: int
    layers: list = field(default_factory=list)
    noise_sigma: float = 0.0
    seed: int = 0
    subpixel: bool = False

    @property
    def canvas_width(self) -> int:
        # the right view looks up to d_max pixels past the left image's right edge
        return self.width + self.d_max + 1

    def validate(self) -> None:
        if self.width < 1 or self.height < 1 or self.d_max < 1:
            raise ValueError("scene needs positive width, height and d_max")
        if not self.layers:
            raise ValueError("scene needs at least one layer")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        ys, xs = np.mgrid[0 : self.height, 0 : self.width]
        for i, layer in enumerate(self.layers):
            if layer.texture not in TEXTURES:
                raise ValueError(f"layer {i}: unknown texture {layer.texture!r}")
            if layer.grad_x >= 1:
                raise ValueError(f"layer {i}: grad_x must be < 1")
            if layer.period < 1 or layer.cell < 1:
                raise ValueError(f"layer {i}: period and cell must be >= 1")
            if not self.subpixel:
                vals = (layer.disparity, layer.grad_x, layer.grad_y)
                if any(v != int(v) for v in vals):
                    raise ValueError(f"layer {i}: non-integer disparity needs subpixel=True")
            d = layer.disparity_at(xs, ys)[_rect_mask(layer, self.height, self.width)]
            if d.size and (d.min() < 0 or d.max() >= self.d_max):
                raise ValueError(f"layer {i}: disparity outside [0, {self.d_max})")


def _rect_mask(layer: Layer, height: int, width: int) -> np.ndarray:
    """Pixels of the left image covered by the layer."""
    m = np.zeros((height, width), dtype=bool)
    if layer.rect is None:
        m[:] = True
    else:
        x0, y0, x1, y1 = layer.rect
        m[max(y0, 0) : max(y1, 0), max(x0, 0) : max(x1, 0)] = True
    return m


def _texture(layer: Layer, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Integer texture over the full canvas, indexed by left-image x."""
    if layer.texture == "flat":
        return np.full((height, width), layer.level, dtype=np.int64)
    if layer.texture == "stripes":
        x = np.arange(width)
        on = (x // max(layer.period // 2, 1)) % 2 == 0
        lo = layer.level - layer.contrast // 2
        row = np.where(on, lo + layer.contrast, lo)
        return np.clip(np.broadcast_to(row, (height, width)), 0, 255).astype(np.int64)
    c = layer.cell
    cells = rng.integers(0, layer.contrast + 1, size=(-(-height // c), -(-width // c)))
    tex = np.repeat(np.repeat(cells, c, axis=0), c, axis=1)[:height, :width]
    return np.clip(tex + layer.level - layer.contrast // 2, 0, 255).astype(np.int64)


def _round_half_up(x):
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


@dataclass
class Rendered:
    pair: ImagePair
    gt: DisparityMap
    occlusion: np.ndarray  # uint8: VISIBLE / OCCLUDED / OUT_OF_FRAME
    layer_id: np.ndarray


def render(spec: SceneSpec) -> Rendered:
    """Composite left/right views, ground truth and the occlusion mask."""
    spec.validate()
    h, w, cw = spec.height, spec.width, spec.canvas_width
    tex_rng = np.random.Generator(np.random.PCG64([spec.seed, 0]))
    noise_rng = np.random.Generator(np.random.PCG64([spec.seed, 1]))

    left = np.zeros((h, w), dtype=np.int64)
    right = np.zeros((h, w), dtype=np.int64)
    gt = np.zeros((h, w), dtype=np.float64)
    left_id = np.full((h, w), -1, dtype=np.int64)
    right_id = np.full((h, w), -1, dtype=np.int64)
    ys, xs = np.mgrid[0:h, 0:w]

    for k, layer in enumerate(spec.layers):
        tex = _texture(layer, h, cw, tex_rng)
        x0, y0, x1, y1 = layer.rect if layer.rect is not None else (0, 0, cw, h)
        inside = (xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)
        left[inside] = tex[ys[inside], xs[inside]]
        gt[inside] = layer.disparity_at(xs[inside], ys[inside])
        left_id[inside] = k

        # invert x' = x - d(x, y) for the linear disparity model
        src_x = (xs + layer.disparity - layer.grad_x * x0 + layer.grad_y * (ys - y0)) / (
            1.0 - layer.grad_x
        )
        sx = _round_half_up(src_x)
        hit = (sx >= x0) & (sx < x1) & (sx < cw) & (sx >= 0) & (ys >= y0) & (ys < y1)
        right[hit] = tex[ys[hit], sx[hit]]
        right_id[hit] = k

    target = _round_half_up(xs - gt)
    occ = np.full((h, w), VISIBLE, dtype=np.uint8)
    out = target < 0
    occ[out] = OUT_OF_FRAME
    seen = right_id[ys[~out], target[~out]]
    occ_in = np.zeros_like(out)
    occ_in[~out] = seen != left_id[~out]
    occ[occ_in] = OCCLUDED

    if spec.noise_sigma > 0:
        left = np.rint(left + noise_rng.normal(0.0, spec.noise_sigma, left.shape))
        right = np.rint(right + noise_rng.normal(0.0, spec.noise_sigma, right.shape))
    left = np.clip(left, 0, 255).astype(np.uint8)[:, :, None]
    right = np.clip(right, 0, 255).astype(np.uint8)[:, :, None]
    return Rendered(ImagePair(left, right), DisparityMap(gt, spec.d_max), occ, left_id)


def two_layer_scene(seed: int, width: int = 128, height: int = 96, d_max: int = 32,
                    noise_sigma: float = 8.0, slant: float = 0.0) -> SceneSpec:
    """Seeded background plane plus one foreground rectangle.

    ``slant`` tilts the background like a road surface: its disparity grows
    by ``slant`` px per image row.
    """
    if 2 + slant * (height - 1) >= d_max:
        raise ValueError(f"slant {slant} over {height} rows does not fit below d_max")
    rng = np.random.Generator(np.random.PCG64([seed, 2]))
    d_bg = int(rng.integers(2, max(3, d_max // 3 - int(np.ceil(slant * height)))))
    d_fg = int(rng.integers(d_max // 2, d_max - 2))
    fw = int(rng.integers(width // 4, width // 2))
    fh = int(rng.integers(height // 3, 2 * height // 3))
    fx = int(rng.integers(d_fg, width - fw))
    fy = int(rng.integers(0, height - fh))
    background = Layer(None, d_bg, grad_y=slant, texture="stripes", period=int(rng.integers(6, 12)),
                       level=128, contrast=60)
    foreground = Layer((fx, fy, fx + fw, fy + fh), d_fg, texture="random",
                       level=int(rng.integers(60, 200)), contrast=40, cell=4)
    return SceneSpec(width, height, d_max, [background, foreground], noise_sigma, seed,
                     subpixel=slant != int(slant))


# ---------------------------------------------------------------------------
# text config


def _parse_rect(text: str):
    if text.strip().lower() in ("", "full", "none"):
        return None
    vals = [int(v) for v in text.replace(",", " ").split()]
    if len(vals) != 4:
        raise ValueError(f"rect needs 4 integers, got {text!r}")
    return tuple(vals)


def parse_scene(text: str) -> SceneSpec:
    """Parse an INI scene description: ``[scene]`` plus ``[layer.N]`` sections."""
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if "scene" not in cp:
        raise ValueError("missing [scene] section")
    s = cp["scene"]
    layers = []
    names = sorted((n for n in cp.sections() if n.startswith("layer")),
                   key=lambda n: int(n.split(".")[-1]) if n.split(".")[-1].isdigit() else n)
    for name in names:
        sec = cp[name]
        layers.append(Layer(
            rect=_parse_rect(sec.get("rect", "full")),
            disparity=float(sec.get("disparity", "0")),
            grad_x=float(sec.get("grad_x", "0")),
            grad_y=float(sec.get("grad_y", "0")),
            texture=sec.get("texture", "random"),
            period=sec.getint("period", 8),
            level=sec.getint("level", 128),
            contrast=sec.getint("contrast", 255),
            cell=sec.getint("cell", 1),
        ))
    spec = SceneSpec(
        width=s.getint("width"),
        height=s.getint("height"),
        d_max=s.getint("d_max"),
        layers=layers,
        noise_sigma=s.getfloat("noise_sigma", 0.0),
        seed=s.getint("seed", 0),
        subpixel=s.getboolean("subpixel", False),
    )
    spec.validate()
    return spec


def format_scene(spec: SceneSpec) -> str:
    lines = ["[scene]", f"width = {spec.width}", f"height = {spec.height}",
             f"d_max = {spec.d_max}", f"noise_sigma = {float(spec.noise_sigma)!r}",
             f"seed = {spec.seed}", f"subpixel = {str(spec.subpixel).lower()}"]
    for i, layer in enumerate(spec.layers):
        rect = "full" if layer.rect is None else " ".join(str(v) for v in layer.rect)
        lines += ["", f"[layer.{i}]", f"rect = {rect}",
                  f"disparity = {float(layer.disparity)!r}", f"grad_x = {float(layer.grad_x)!r}",
                  f"grad_y = {float(layer.grad_y)!r}", f"texture = {layer.texture}",
                  f"period = {layer.period}", f"level = {layer.level}",
                  f"contrast = {layer.contrast}", f"cell = {layer.cell}"]
    return "\n".join(lines) + "\n"
