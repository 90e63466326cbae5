"""Route-recommendation metrics over weighted road segments.

A route is a mapping ``segment_id -> length``. Coverage is measured in
length, so these work unchanged with ``fractions.Fraction`` lengths.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

Route = Mapping[str, float]


@dataclass(frozen=True)
class NavigationSession:
    recommended: Sequence[Route]
    actual: Route
    #: 1-based index of the recommended route the user picked, if known
    selected: int | None = None

    def __post_init__(self):
        if not self.recommended:
            raise ValueError("a session needs at least one recommended route")


def route_length(route: Route):
    return sum(route.values())


def acr(candidate: Route, actual: Route):
    """Length of the actual route that the candidate shares, over the actual length."""
    total = route_length(actual)
    if total <= 0:
        raise ValueError("actual route has zero length")
    shared = sum(length for seg, length in actual.items() if seg in candidate)
    return shared / total


def _require(sessions):
    if not sessions:
        raise ValueError("no navigation sessions")


def fcr_avg(sessions: Sequence[NavigationSession]):
    _require(sessions)
    return sum(acr(s.recommended[0], s.actual) for s in sessions) / len(sessions)


def yawed(session: NavigationSession) -> bool:
    """True when some driven length lies outside every recommended route."""
    covered = set().union(*(r.keys() for r in session.recommended))
    return any(length > 0 for seg, length in session.actual.items() if seg not in covered)


def yr_avg(sessions: Sequence[NavigationSession]):
    _require(sessions)
    return Fraction(sum(1 for s in sessions if yawed(s)), len(sessions))


def fsr_avg(sessions: Sequence[NavigationSession]):
    _require(sessions)
    if any(s.selected is None for s in sessions):
        raise ValueError("every session needs a selected route index")
    return Fraction(sum(1 for s in sessions if s.selected == 1), len(sessions))
