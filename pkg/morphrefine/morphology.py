"""
Binary hit-or-miss, thinning and pruning with 3x3 ternary structuring elements.

Patterns are written as 9 characters over the 3x3 window, row-major:
'1' foreground, '0' background, 'x' don't care. Pixels outside the image are
background.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage

from morphrefine.core import BinaryMask

logger = logging.getLogger(__name__)

# ring of the 8 neighbours, clockwise from the top-left corner
_RING: Tuple[int, ...] = (0, 1, 2, 5, 8, 7, 6, 3)

# bit k of a neighbourhood code is cell k of the row-major 3x3 window
_WINDOW_BITS = (1 << np.arange(9)).reshape(3, 3)
_OFFSETS: Tuple[Tuple[int, int], ...] = tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1))
_ALL_CODES = np.arange(512)
_FULL_WINDOW = 511


@dataclass(frozen=True)
class StructuringElement3x3:
    pattern: str

    def __post_init__(self):
        if len(self.pattern) != 9 or set(self.pattern) - set("10x"):
            raise ValueError(f"invalid structuring element pattern: {self.pattern!r}")

    @property
    def foreground(self) -> np.ndarray:
        return np.array([c == "1" for c in self.pattern]).reshape(3, 3)

    @property
    def background(self) -> np.ndarray:
        return np.array([c == "0" for c in self.pattern]).reshape(3, 3)

    @property
    def lookup(self) -> np.ndarray:
        """Match table over all 512 neighbourhood codes."""
        fg = int(_WINDOW_BITS[self.foreground].sum())
        bg = int(_WINDOW_BITS[self.background].sum())
        return ((_ALL_CODES & fg) == fg) & ((_ALL_CODES & bg) == 0)

    def rotated(self, steps: int = 1) -> "StructuringElement3x3":
        """Rotate the neighbour ring by `steps` positions (45 degrees each)."""
        cells = list(self.pattern)
        ring = [self.pattern[i] for i in _RING]
        ring = ring[-steps:] + ring[:-steps]
        for pos, value in zip(_RING, ring):
            cells[pos] = value
        return StructuringElement3x3("".join(cells))

    def rows(self) -> List[str]:
        return [self.pattern[0:3], self.pattern[3:6], self.pattern[6:9]]


def _rotation_family(base: str) -> Tuple[StructuringElement3x3, ...]:
    first = StructuringElement3x3(base)
    return tuple(first.rotated(k) for k in range(8))


# B1: top row background, bottom row foreground; B2..B8 are 45 degree steps
THINNING_ELEMENTS = _rotation_family("000x1x111")

# one foreground neighbour, everything else background
ENDPOINT_ELEMENTS = _rotation_family("100010000")

_ENDPOINT_LOOKUP = np.logical_or.reduce([se.lookup for se in ENDPOINT_ELEMENTS])


def neighbourhood_codes(data: np.ndarray) -> np.ndarray:
    """9-bit code of every pixel's 3x3 window, outside pixels reading as background."""
    return ndimage.correlate(np.asarray(data, dtype=np.int32), _WINDOW_BITS, mode="constant", cval=0)


def _window_codes(flat: np.ndarray, index: np.ndarray, stride: int) -> np.ndarray:
    """Codes of the windows centred on `index` in a flattened image with a background border."""
    code = np.zeros(index.size, dtype=np.int32)
    for bit, (dr, dc) in enumerate(_OFFSETS):
        code |= flat[index + dr * stride + dc].astype(np.int32) << bit
    return code


def hit_or_miss(mask: BinaryMask, se: StructuringElement3x3) -> BinaryMask:
    return BinaryMask(mask.width, mask.height, se.lookup[neighbourhood_codes(mask.data)])


def thin(mask: BinaryMask, n_iter: int) -> BinaryMask:
    """Up to `n_iter` passes over B1..B8; each element removes all its matches at once."""
    if n_iter < 0:
        raise ValueError("n_iter must be non-negative")
    padded = np.pad(np.asarray(mask.data, dtype=bool), 1)
    flat = padded.ravel()
    stride = mask.width + 2
    ring = np.array([dr * stride + dc for dr, dc in _OFFSETS if (dr, dc) != (0, 0)])

    for it in range(n_iter):
        # every thinning element needs a background neighbour, so only the contour can match
        candidates = np.flatnonzero(padded & (neighbourhood_codes(padded) != _FULL_WINDOW))
        removed = 0
        for se in THINNING_ELEMENTS:
            if candidates.size == 0:
                break
            hits = candidates[se.lookup[_window_codes(flat, candidates, stride)]]
            if hits.size == 0:
                continue
            flat[hits] = False
            removed += int(hits.size)
            exposed = (hits[:, None] + ring).ravel()
            candidates = np.union1d(candidates[flat[candidates]], exposed[flat[exposed]])
        logger.debug(f"thin iteration {it + 1}: removed {removed} pixels")
        if removed == 0:
            break
    return BinaryMask(mask.width, mask.height, padded[1:-1, 1:-1].copy())


def endpoints(mask: BinaryMask) -> BinaryMask:
    return BinaryMask(mask.width, mask.height, _ENDPOINT_LOOKUP[neighbourhood_codes(mask.data)])


def prune(mask: BinaryMask, n_iter: int) -> BinaryMask:
    if n_iter < 0:
        raise ValueError("n_iter must be non-negative")
    data = np.array(mask.data, dtype=bool)
    for it in range(n_iter):
        ends = data & _ENDPOINT_LOOKUP[neighbourhood_codes(data)]
        if not ends.any():
            break
        data &= ~ends
        logger.debug(f"prune iteration {it + 1}: removed {int(ends.sum())} endpoints")
    return BinaryMask(mask.width, mask.height, data)


ELEMENT_FILE = Path(__file__).parent / "data" / "structuring_elements.txt"


def read_element_file(path=ELEMENT_FILE) -> Dict[str, Tuple[StructuringElement3x3, ...]]:
    """Parse `[section]` headers followed by one 9-character pattern per line; '#' starts a comment."""
    sections: Dict[str, List[StructuringElement3x3]] = {}
    current = None
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1], [])
        elif current is None:
            raise ValueError(f"pattern outside a section: {line!r}")
        else:
            current.append(StructuringElement3x3(line))
    return {name: tuple(elements) for name, elements in sections.items()}
