"""Color functions for alphabets and preference spectra.

The generic alphabet colors a lattice cell by hue = col/cols and
lightness = 0.35 + 0.5 * row/rows. The preference spectrum is a fixed
256-entry ramp from warm red-orange (aversion) to cold blue-cyan
(preference), interpolated in CIELAB so lightness varies linearly in
perceptual terms.
"""

from __future__ import annotations

import colorsys

import numpy as np

WARM_RGB = (224, 82, 38)
COLD_RGB = (38, 150, 224)
RAMP_SIZE = 256

# sRGB <-> CIELAB with D65 white, the standard 2-degree observer
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE = _RGB_TO_XYZ @ np.ones(3)


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1 / 2.4) - 0.055)


def _f_lab(t: np.ndarray) -> np.ndarray:
    d = 6.0 / 29.0
    return np.where(t > d**3, np.cbrt(t), t / (3 * d * d) + 4.0 / 29.0)


def _f_lab_inv(t: np.ndarray) -> np.ndarray:
    d = 6.0 / 29.0
    return np.where(t > d, t**3, 3 * d * d * (t - 4.0 / 29.0))


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    xyz = _srgb_to_linear(np.asarray(rgb, dtype=np.float64) / 255.0) @ _RGB_TO_XYZ.T
    f = _f_lab(xyz / _WHITE)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_lab_inv(fx), _f_lab_inv(fy), _f_lab_inv(fz)], axis=-1) * _WHITE
    rgb = _linear_to_srgb(xyz @ _XYZ_TO_RGB.T)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def preference_ramp() -> np.ndarray:
    """256x3 uint8 ramp, index 0 = warmest (aversion), 255 = coldest."""
    lab_warm = rgb_to_lab(np.array(WARM_RGB, dtype=np.float64))
    lab_cold = rgb_to_lab(np.array(COLD_RGB, dtype=np.float64))
    t = np.linspace(0.0, 1.0, RAMP_SIZE)[:, None]
    return lab_to_rgb((1 - t) * lab_warm + t * lab_cold)


_RAMP = preference_ramp()


def ramp_color(preference: float) -> tuple[int, int, int]:
    """Preference in [0,1]; 0 maps to the warm end, 1 to the cold end."""
    if not 0.0 <= preference <= 1.0:
        raise ValueError(f"preference {preference} outside [0, 1]")
    idx = int(round(preference * (RAMP_SIZE - 1)))
    r, g, b = _RAMP[idx]
    return int(r), int(g), int(b)


def grid_color(row: int, col: int, rows: int, cols: int) -> tuple[int, int, int]:
    """Generic alphabet color for lattice cell (row, col)."""
    hue = col / cols
    lightness = 0.35 + 0.5 * row / rows
    r, g, b = colorsys.hls_to_rgb(hue, lightness, 0.85)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))
