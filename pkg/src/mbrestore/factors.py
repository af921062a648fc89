"""Degradation factors and the canonical orders they appear in."""

from __future__ import annotations

from enum import Enum


class Factor(str, Enum):
    """One of the four degradation families the network can remove."""

    RAIN = "rain"
    BLUR = "blur"
    JPEG = "jpeg"
    HAZE = "haze"

    def __str__(self) -> str:
        return self.value


# Order in which factors are processed on the recurrent single-input path.
DEFAULT_RESTORE_ORDER = (Factor.JPEG, Factor.HAZE, Factor.BLUR, Factor.RAIN)

# Order in which synthetic degradations are layered onto a clean image.
SYNTHESIS_ORDER = (Factor.HAZE, Factor.RAIN, Factor.BLUR, Factor.JPEG)

# Number of post-stem refinement blocks traversed before each factor's head.
TAP_DEPTH = {Factor.RAIN: 0, Factor.BLUR: 1, Factor.JPEG: 2, Factor.HAZE: 3}


def parse_order(text: str, require_complete: bool = True):
    """Parse a comma-separated factor list such as ``jpeg,haze,blur,rain``."""
    from .errors import UsageError

    names = [t.strip().lower() for t in text.split(",") if t.strip()]
    try:
        order = tuple(Factor(n) for n in names)
    except ValueError as exc:
        raise UsageError(f"unknown factor in order {text!r}") from exc
    if len(set(order)) != len(order):
        raise UsageError(f"order {text!r} repeats a factor")
    if require_complete and set(order) != set(Factor):
        raise UsageError(f"order {text!r} must list each of the four factors exactly once")
    return order


def order_to_text(order) -> str:
    return ",".join(f.value for f in order)
