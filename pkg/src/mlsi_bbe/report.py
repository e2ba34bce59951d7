from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass
class Report:
    """Outcome of a verification: violations are reported, never raised."""

    name: str
    ok: bool
    max_violation: float = 0.0
    details: dict[str, Any] = field(default_factory=dict)
    offenders: list[Any] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok

    def as_dict(self) -> dict[str, Any]:
        return {"name": self.name, "ok": self.ok, "max_violation": self.max_violation,
                "details": self.details, "offenders": [list(map(_plain, o)) if isinstance(o, tuple)
                                                       else _plain(o) for o in self.offenders]}


def _plain(x):
    if hasattr(x, "item"):
        return x.item()
    if isinstance(x, tuple):
        return [_plain(v) for v in x]
    return x
