"""Bounding functions applied to soft advantages.

A valid bounding function ``h`` is non-decreasing, fixes 0, never flips the
sign of its argument, never increases its magnitude, and has a connected
codomain inside ``[-c_h, c_h]``. ``sign`` is kept for ablations even though
it breaks the magnitude condition.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

KINDS = ("identity", "zero", "clip", "tanh", "sign", "tdclip")

# Log-spaced grid of z < 0 used for the entropy-reduction supremum.
DELTA_BAR_GRID = -np.logspace(-9, 15, 2401)


@dataclass(frozen=True)
class BoundingFn:
    kind: str
    scale: float = 1.0
    lo: float = -1.0
    hi: float = 1.0
    t1: float = 1e6
    t2: float = 10.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown bounding function {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("clip", "tanh") and not self.scale > 0:
            raise ValueError(f"{self.kind} scale must be positive, got {self.scale}")
        if self.kind == "clip" and not self.lo <= self.hi:
            raise ValueError(f"clip needs lo <= hi, got [{self.lo}, {self.hi}]")
        if self.kind == "tdclip" and not (self.t1 > 0 and self.t2 >= 0):
            raise ValueError("tdclip needs T1 > 0 and T2 >= 0")

    def __call__(self, x, step: int = 0):
        return bound_eval(self, x, step)

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    @property
    def c_h(self) -> float:
        """Uniform bound on |h|; infinite for the identity and for tdclip."""
        return {
            "identity": math.inf,
            "zero": 0.0,
            "clip": max(abs(self.lo), abs(self.hi)),
            "tanh": 1.0,
            "sign": 1.0,
            "tdclip": math.inf,
        }[self.kind]

    def bound_at(self, step: int) -> float:
        if self.kind == "tdclip":
            return tdclip_schedule(self.t1, self.t2, step)[0]
        return self.c_h

    @property
    def flagged_invalid(self) -> bool:
        return self.kind == "sign"

    def to_config(self) -> dict:
        keys = {
            "identity": (), "zero": (), "sign": (),
            "clip": ("scale", "lo", "hi"), "tanh": ("scale",), "tdclip": ("t1", "t2"),
        }[self.kind]
        out = {"type": self.kind}
        data = asdict(self)
        out.update({("T1" if k == "t1" else "T2" if k == "t2" else k): data[k] for k in keys})
        return out

    @classmethod
    def from_config(cls, spec) -> BoundingFn:
        if isinstance(spec, str):
            spec = {"type": spec}
        if not isinstance(spec, dict) or "type" not in spec:
            raise ValueError(f"bounding function must be a record with a 'type' field, got {spec!r}")
        spec = dict(spec)
        kind = str(spec.pop("type")).lower()
        renames = {"T1": "t1", "T2": "t2"}
        kwargs = {renames.get(k, k): float(v) for k, v in spec.items()}
        allowed = {"identity": set(), "zero": set(), "sign": set(),
                   "clip": {"scale", "lo", "hi"}, "tanh": {"scale"}, "tdclip": {"t1", "t2"}}
        if kind not in allowed:
            raise ValueError(f"unknown bounding function {kind!r}")
        extra = set(kwargs) - allowed[kind]
        if extra:
            raise ValueError(f"unexpected fields for {kind}: {sorted(extra)}")
        return cls(kind, **kwargs)

    def label(self) -> str:
        if self.kind == "clip":
            return f"clip({self.scale:g},{self.lo:g},{self.hi:g})"
        if self.kind == "tanh":
            return f"tanh({self.scale:g})"
        if self.kind == "tdclip":
            return f"tdclip({self.t1:g},{self.t2:g})"
        return self.kind


def identity() -> BoundingFn:
    return BoundingFn("identity")


def zero() -> BoundingFn:
    return BoundingFn("zero")


def clip(scale: float = 1.0, lo: float = -1.0, hi: float = 1.0) -> BoundingFn:
    return BoundingFn("clip", scale=scale, lo=lo, hi=hi)


def tanh(scale: float = 1.0) -> BoundingFn:
    return BoundingFn("tanh", scale=scale)


def sign() -> BoundingFn:
    return BoundingFn("sign")


def tdclip(t1: float = 1e6, t2: float = 10.0) -> BoundingFn:
    return BoundingFn("tdclip", t1=t1, t2=t2)


def munchausen_clip(lower: float = -1.0) -> BoundingFn:
    """The ``[x]^0_lower`` clipping used by Munchausen-DQN implementations."""
    return clip(1.0, lower, 0.0)


def tdclip_schedule(t1: float, t2: float, step: int) -> tuple[float, float]:
    """Return ``(bound, slope)`` of the time-dependent clip at ``step``."""
    level = (step + t1) / t1
    return level, level / (level + t2)


def bound_eval(fn: BoundingFn, x, step: int = 0):
    """Evaluate ``fn`` elementwise; ``step`` only matters for tdclip."""
    x = np.asarray(x, dtype=np.float64)
    kind = fn.kind
    if kind == "identity":
        out = x.copy()
    elif kind == "zero":
        out = np.zeros_like(x)
    elif kind == "clip":
        out = np.clip(x / fn.scale, fn.lo, fn.hi)
    elif kind == "tanh":
        out = np.tanh(x / fn.scale)
    elif kind == "sign":
        out = np.sign(x)
    else:
        level, slope = tdclip_schedule(fn.t1, fn.t2, step)
        out = np.clip(x * slope, -level, level)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BoundingReport:
    zero_at_origin: bool
    monotone: bool
    sign_preserving: bool
    magnitude: bool
    bounded: bool
    c_h: float
    first_violation: dict

    @property
    def valid(self) -> bool:
        return all((self.zero_at_origin, self.monotone, self.sign_preserving,
                    self.magnitude, self.bounded))


def validate_bounding(fn: BoundingFn, grid=None, step: int = 0) -> BoundingReport:
    """Check the bounding-function conditions on a sample grid.

    The grid is sorted and 0 is always added. ``first_violation`` maps each
    failed condition to the first offending sample.
    """
    if grid is None:
        grid = np.linspace(-10.0, 10.0, 20001)
    x = np.unique(np.append(np.asarray(grid, dtype=np.float64), 0.0))
    h = np.asarray(bound_eval(fn, x, step))
    c_h = fn.bound_at(step)
    violations: dict[str, float] = {}

    def note(name: str, mask: np.ndarray, at: np.ndarray) -> bool:
        if np.any(mask):
            violations[name] = float(at[np.argmax(mask)])
            return False
        return True

    zero_ok = bound_eval(fn, 0.0, step) == 0.0
    if not zero_ok:
        violations["zero_at_origin"] = 0.0
    mono = note("monotone", np.diff(h) < 0, x[1:])
    pos, neg = x > 0, x < 0
    sign_ok = note("sign_preserving", (pos & (h < 0)) | (neg & (h > 0)), x)
    mag_ok = note("magnitude", (pos & (h > x)) | (neg & (h < x)), x)
    bnd_ok = note("bounded", np.abs(h) > c_h, x)
    return BoundingReport(bool(zero_ok), mono, sign_ok, mag_ok, bnd_ok, c_h, violations)


def delta_bar(fn: BoundingFn, alpha: float, step: int = 0) -> float:
    """``sup_{z<0} (1 - h(alpha z) / (alpha z))`` clamped to [0, 1].

    Exact for identity (0) and zero (1); otherwise the supremum over the fixed
    grid ``DELTA_BAR_GRID``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if fn.kind == "identity":
        return 0.0
    if fn.kind == "zero":
        return 1.0
    x = alpha * DELTA_BAR_GRID
    ratio = np.asarray(bound_eval(fn, x, step)) / x
    return float(np.clip(np.max(1.0 - ratio), 0.0, 1.0))
