"""Response classes, dimensions and timestamp handling shared by every stage."""

from __future__ import annotations

import math
from datetime import datetime, timezone

THERMAL = ("prefer_cooler", "no_change", "prefer_warmer")
LIGHT = ("prefer_dimmer", "no_change", "prefer_brighter")
NOISE = ("prefer_quieter", "no_change", "prefer_louder")

DIMENSIONS: dict[str, tuple[str, str, str]] = {
    "thermal": THERMAL,
    "light": LIGHT,
    "noise": NOISE,
}

# The six non-neutral responses, in the order used by room/history ratio features.
DIRECTIONAL = (
    ("thermal", "prefer_cooler"),
    ("thermal", "prefer_warmer"),
    ("light", "prefer_dimmer"),
    ("light", "prefer_brighter"),
    ("noise", "prefer_quieter"),
    ("noise", "prefer_louder"),
)
DIRECTIONAL_SHORT = ("cooler", "warmer", "dimmer", "brighter", "quieter", "louder")

# All nine (dimension, class) pairs in canonical order.
RESPONSE_CLASSES = tuple((dim, cls) for dim, classes in DIMENSIONS.items() for cls in classes)


def class_label(dimension: str, cls: str) -> str:
    """Human label of a response class; ``no_change`` is qualified by its dimension."""
    return f"{dimension}_no_change" if cls == "no_change" else cls


def ratio_column(dimension: str, cls: str) -> str:
    return f"{dimension}_{cls}"


def check_dimension(dimension: str) -> str:
    if dimension not in DIMENSIONS:
        raise ValueError(f"unknown dimension {dimension!r}; expected one of {sorted(DIMENSIONS)}")
    return dimension


def parse_timestamp(text: str) -> datetime:
    """Parse an RFC 3339 instant into an aware UTC datetime at second precision.

    Naive timestamps are refused: the canonical files carry an explicit offset.
    """
    text = text.strip()
    if not text:
        raise ValueError("empty timestamp")
    if text[-1] in "zZ":
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        raise ValueError("timestamp without UTC offset")
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def epoch(dt: datetime) -> int:
    return int(dt.timestamp())


def format_float(value: float | None) -> str:
    # repr round-trips exactly through float()
    return "" if value is None else repr(float(value))


def parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value
