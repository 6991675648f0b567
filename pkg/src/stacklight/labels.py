"""The 10-class light-combination label space shared by all stages."""

from __future__ import annotations

from enum import Enum


class LightCombination(Enum):
    """Which lamp colors of a tower are lit, plus the non-tower class Other."""

    GREEN = "Green"
    GREEN_RED = "GreenRed"
    GREEN_WHITE = "GreenWhite"
    GREEN_YELLOW = "GreenYellow"
    GREEN_YELLOW_RED = "GreenYellowRed"
    YELLOW = "Yellow"
    YELLOW_RED = "YellowRed"
    RED = "Red"
    OFF = "Off"
    OTHER = "Other"


# Fixed class order used by classifier outputs, confusion matrices and model
# files: the nine combinations first, Other last.
CLASS_ORDER: tuple[LightCombination, ...] = (
    LightCombination.GREEN,
    LightCombination.GREEN_RED,
    LightCombination.GREEN_WHITE,
    LightCombination.GREEN_YELLOW,
    LightCombination.GREEN_YELLOW_RED,
    LightCombination.YELLOW,
    LightCombination.YELLOW_RED,
    LightCombination.RED,
    LightCombination.OFF,
    LightCombination.OTHER,
)

CLASS_NAMES: tuple[str, ...] = tuple(c.value for c in CLASS_ORDER)

_LIT = {
    LightCombination.GREEN: frozenset({"green"}),
    LightCombination.GREEN_RED: frozenset({"green", "red"}),
    LightCombination.GREEN_WHITE: frozenset({"green", "white"}),
    LightCombination.GREEN_YELLOW: frozenset({"green", "yellow"}),
    LightCombination.GREEN_YELLOW_RED: frozenset({"green", "yellow", "red"}),
    LightCombination.YELLOW: frozenset({"yellow"}),
    LightCombination.YELLOW_RED: frozenset({"yellow", "red"}),
    LightCombination.RED: frozenset({"red"}),
    LightCombination.OFF: frozenset(),
}


def lit_colors(combination: LightCombination) -> frozenset[str]:
    """Set of lamp colors lit for a combination. Not defined for Other."""
    if combination is LightCombination.OTHER:
        raise ValueError("Other is not a light state and has no lit colors")
    return _LIT[combination]


def combination_from_colors(colors) -> LightCombination:
    """Inverse of lit_colors: map a set of lit lamp colors to its label."""
    wanted = frozenset(colors)
    for combo, lit in _LIT.items():
        if lit == wanted:
            return combo
    raise ValueError(f"no combination lights exactly {sorted(wanted)}")


def parse_label(name: str) -> LightCombination:
    for combo in CLASS_ORDER:
        if combo.value == name:
            return combo
    raise ValueError(f"unknown light combination {name!r}")
