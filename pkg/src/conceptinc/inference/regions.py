"""Bounding-box conditions and the regional cross-attention that honours them."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .. import numkit as nk
from ..errors import DimensionError
from ..toyldm.text import PromptSpec

ATTENTION_KINDS = ("sigmoid", "softmax")


def check_box(box, height: int, width: int) -> None:
    top, left, h, w = box
    if h < 1 or w < 1 or top < 0 or left < 0 or top + h > height or left + w > width:
        raise DimensionError(f"box {tuple(box)} does not fit a {height}x{width} grid")


@dataclass(frozen=True)
class RegionCondition:
    prompt: PromptSpec
    box: tuple[int, int, int, int]  # top, left, height, width

    def check(self, height: int, width: int) -> None:
        check_box(self.box, height, width)

    @classmethod
    def parse(cls, text: str) -> "RegionCondition":
        """``'tok tok@top,left,h,w'``."""
        m = re.fullmatch(r"\s*(.+?)\s*@\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*", text)
        if m is None:
            raise ValueError(f"region {text!r} is not of the form 'tokens@top,left,h,w'")
        return cls(PromptSpec.parse(m.group(1)), tuple(int(m.group(i)) for i in range(2, 6)))

    def __str__(self):
        return f"{self.prompt}@{','.join(map(str, self.box))}"


def region_mask(box, height: int, width: int) -> np.ndarray:
    check_box(box, height, width)
    top, left, h, w = box
    m = np.zeros((height, width))
    m[top:top + h, left:left + w] = 1.0
    return m


def regional_cross_attention(f, c, box, w_q, w_k, w_v, attention: str = "sigmoid", length=None):
    """Cross-attention between box pixels of feature map ``f`` [h, w, d] and region rows ``c`` [n_e, d].

    Returns the region feature ``[box_h, box_w, d]``. With softmax attention,
    rows past ``length`` are excluded; sigmoid scores each row independently,
    so zero padding rows contribute nothing.
    """
    if attention not in ATTENTION_KINDS:
        raise ValueError(f"attention must be one of {ATTENTION_KINDS}")
    f = np.asarray(f)
    if f.ndim != 3:
        raise DimensionError(f"feature map must be [h, w, d], got {f.shape}")
    h, w, d = f.shape
    top, left, bh, bw = box
    mask = region_mask(box, h, w)
    q_full = nk.matmul(f, w_q) * mask[:, :, None]
    q = np.ascontiguousarray(q_full[top:top + bh, left:left + bw]).reshape(bh * bw, d)
    k = nk.matmul(np.asarray(c), w_k)
    v = nk.matmul(np.asarray(c), w_v)
    scores = nk.matmul(q, np.ascontiguousarray(k.T)) * (1.0 / np.sqrt(d))
    if attention == "sigmoid":
        att = nk.sigmoid(scores)
    else:
        n = scores.shape[1] if length is None else int(length)
        att = nk.softmax(np.where(np.arange(scores.shape[1])[None, :] < n, scores, -1e30))
    return nk.matmul(att, v).reshape(bh, bw, d)


def apply_regions(f, regions) -> np.ndarray:
    """Overwrite each ``(box, feature)`` interior of ``f``; later boxes win on overlap."""
    out = np.array(f, copy=True)
    for box, feat in regions:
        top, left, bh, bw = box
        out[top:top + bh, left:left + bw] = feat
    return out
