"""Random ellipse phantoms with analytic ground truth.

Stand-in for clinical data: a soft-tissue body ellipse, a few internal
structures of varying contrast, and small low-contrast lesions (flagged,
so patch sampling can bias toward them). Geometry lives in [-1, 1]^2
coordinates; attenuation composes additively on an air background.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rng import RngStream

AIR_HU = -1000.0
HU_MIN, HU_MAX = -1024.0, 3071.0


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float  # semi-axis along the ellipse's own x, unit coords
    b: float
    theta: float  # rotation, radians
    hu: float  # additive attenuation contribution
    lesion: bool = False

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ConfigError("ellipse semi-axes must be positive")
        reach = float(np.hypot(self.cx, self.cy)) + max(self.a, self.b)
        if reach > 1.0 + 1e-9:
            raise ConfigError(f"ellipse leaves the unit disk (reach {reach:.3f})")
        if not (HU_MIN <= self.hu <= HU_MAX):
            raise ConfigError(f"ellipse HU {self.hu} outside [{HU_MIN}, {HU_MAX}]")


@dataclass
class Phantom:
    ellipses: list = field(default_factory=list)
    grid_size: int = 256

    @property
    def lesions(self):
        return [e for e in self.ellipses if e.lesion]


def generate_phantom(rng: RngStream, complexity=(4, 10), grid_size=256) -> Phantom:
    """Random nested phantom with a total ellipse count drawn from `complexity`.

    The first ellipse is always the body; about a third of the remaining
    budget (at most 3) becomes small low-contrast lesions, the rest are
    internal structures of varying contrast.
    """
    if grid_size < 64:
        raise ConfigError(f"grid_size must be >= 64, got {grid_size}")
    lo, hi = complexity
    if not (1 <= lo <= hi):
        raise ConfigError(f"bad complexity range {complexity}")
    g = rng.generator
    total = int(g.integers(lo, hi + 1))
    ellipses = []

    # the body contributes ~+1050 over the -1000 air background so that the
    # composed soft-tissue value lands near +50 HU (water-ish attenuation)
    body_a = g.uniform(0.72, 0.88)
    body_b = g.uniform(0.58, 0.78)
    body = Ellipse(
        cx=g.uniform(-0.03, 0.03), cy=g.uniform(-0.03, 0.03),
        a=body_a, b=body_b, theta=g.uniform(-0.25, 0.25),
        hu=1000.0 + g.uniform(40.0, 60.0),
    )
    ellipses.append(body)

    def inside_body(cx, cy, a, b):
        # conservative: ellipse fits inside the body ellipse's inscribed box
        margin = max(a, b)
        return (abs(cx - body.cx) + margin < 0.85 * body_a
                and abs(cy - body.cy) + margin < 0.85 * body_b)

    n_lesions = min(3, (total - 1) // 3)
    n_struct = total - 1 - n_lesions

    for _ in range(n_struct):
        for _attempt in range(50):
            a = g.uniform(0.05, 0.28)
            b = g.uniform(0.05, 0.28)
            cx = g.uniform(-0.6, 0.6)
            cy = g.uniform(-0.55, 0.55)
            if inside_body(cx, cy, a, b):
                ellipses.append(Ellipse(cx, cy, a, b, g.uniform(0, np.pi),
                                        g.uniform(-250.0, 350.0)))
                break

    for _ in range(n_lesions):
        for _attempt in range(50):
            r = g.uniform(0.02, 0.06)
            cx = g.uniform(-0.5, 0.5)
            cy = g.uniform(-0.45, 0.45)
            if inside_body(cx, cy, r, r):
                sign = 1.0 if g.uniform() < 0.5 else -1.0
                ellipses.append(Ellipse(cx, cy, r, r * g.uniform(0.7, 1.0),
                                        g.uniform(0, np.pi),
                                        sign * g.uniform(10.0, 30.0),
                                        lesion=True))
                break

    return Phantom(ellipses=ellipses, grid_size=grid_size)


def rasterize(phantom: Phantom, n=None) -> np.ndarray:
    """HU image: air background plus the sum of covering ellipses, by pixel center."""
    n = phantom.grid_size if n is None else n
    half = n / 2.0
    coords = (np.arange(n) - (n - 1) / 2.0) / half
    u, v = np.meshgrid(coords, coords)  # u: column/x, v: row/y
    img = np.full((n, n), AIR_HU)
    for e in phantom.ellipses:
        du, dv = u - e.cx, v - e.cy
        c, s = np.cos(e.theta), np.sin(e.theta)
        img += np.where(((du * c + dv * s) / e.a) ** 2
                        + ((-du * s + dv * c) / e.b) ** 2 <= 1.0, e.hu, 0.0)
    return img


def lesion_boxes(phantom: Phantom, n=None):
    """Pixel-space bounding boxes (r0, r1, c0, c1) of the lesion ellipses."""
    n = phantom.grid_size if n is None else n
    half = n / 2.0
    boxes = []
    for e in phantom.lesions:
        reach = max(e.a, e.b)
        c0 = int(np.floor((e.cx - reach) * half + (n - 1) / 2.0))
        c1 = int(np.ceil((e.cx + reach) * half + (n - 1) / 2.0)) + 1
        r0 = int(np.floor((e.cy - reach) * half + (n - 1) / 2.0))
        r1 = int(np.ceil((e.cy + reach) * half + (n - 1) / 2.0)) + 1
        boxes.append((max(r0, 0), min(r1, n), max(c0, 0), min(c1, n)))
    return boxes
