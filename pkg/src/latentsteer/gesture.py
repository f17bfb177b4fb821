"""Map body and hand landmarks to generator control values.

Pure helpers compute single readings (angle, scale, corruption magnitude)
from one keypoint set; `GestureTracker` owns the temporal behavior: hand
selection with hysteresis, hold-last on dropout, and exponential smoothing.

Landmark ids follow the common 21-point hand numbering (wrist = 0, middle
fingertip = 12). Coordinates are normalized image coordinates with y down.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import KeypointSet, PipelineConfig, TransformMatrix, ema_smooth
from .errors import ContractError, DegenerateInputError

WRIST = 0
MIDDLE_FINGER_TIP = 12

FRAME_CENTER = (0.5, 0.5)
# farthest a normalized point can sit from the frame center (any corner)
HALF_DIAGONAL = math.sqrt(0.5)


def wrap_angle(deg: float) -> float:
    """Fold any angle into (-180, 180]."""
    deg = math.fmod(deg, 360.0)
    if deg <= -180.0:
        deg += 360.0
    elif deg > 180.0:
        deg -= 360.0
    return deg


def shortest_arc(from_deg: float, to_deg: float) -> float:
    """Signed smallest rotation taking from_deg to to_deg."""
    return wrap_angle(to_deg - from_deg)


def hand_angle(keypoints: KeypointSet, *, floor: float = 0.0) -> float:
    """Rotation of the wrist-to-middle-fingertip ray, clockwise degrees.

    Pointing up on screen reads 0, right +90, down 180, left -90. Raises
    when either landmark is missing, below the confidence floor, or the two
    coincide (no direction to measure).
    """
    wrist = keypoints.find(WRIST)
    tip = keypoints.find(MIDDLE_FINGER_TIP)
    if wrist is None or tip is None:
        raise DegenerateInputError("need both wrist and middle fingertip landmarks")
    if wrist[2] < floor or tip[2] < floor:
        raise DegenerateInputError("wrist or fingertip below the confidence floor")
    dx = float(tip[0] - wrist[0])
    dy = float(tip[1] - wrist[1])
    if dx == 0.0 and dy == 0.0:
        raise DegenerateInputError("wrist and fingertip coincide")
    # y grows downward, so -dy makes "up" the zero direction and
    # atan2(dx, -dy) sweeps clockwise-positive
    return wrap_angle(math.degrees(math.atan2(dx, -dy)))


def hand_center(keypoints: KeypointSet, *, floor: float = 0.0) -> tuple[float, float]:
    """Mean (x, y) of the landmarks at or above the confidence floor."""
    mask = keypoints.confident_mask(floor)
    if not mask.any():
        raise DegenerateInputError("no landmark meets the confidence floor")
    pts = keypoints.points[mask]
    return float(pts[:, 0].mean()), float(pts[:, 1].mean())


def center_distance(x: float, y: float) -> float:
    """Distance from the frame center, normalized so a corner reads 1."""
    d = math.hypot(x - FRAME_CENTER[0], y - FRAME_CENTER[1]) / HALF_DIAGONAL
    return min(max(d, 0.0), 1.0)


def hand_scale(keypoints: KeypointSet, *, max_scale: float = 2.0, floor: float = 0.0) -> float:
    """Zoom factor from hand position: 1 at the center, max_scale at a corner.

    Linear in the normalized center distance: 1 + d * (max_scale - 1).
    """
    if max_scale <= 1.0:
        raise ContractError(f"max_scale must be > 1, got {max_scale}")
    x, y = hand_center(keypoints, floor=floor)
    return 1.0 + center_distance(x, y) * (max_scale - 1.0)


def corruption_magnitude(keypoints: KeypointSet, *, floor: float = 0.0) -> float:
    """Mean normalized center distance of the confident landmarks, in [0, 1].

    Spread-out or off-center poses push toward 1; a subject collapsed on
    the frame center reads near 0.
    """
    mask = keypoints.confident_mask(floor)
    if not mask.any():
        raise DegenerateInputError("no landmark meets the confidence floor")
    pts = keypoints.points[mask]
    d = [center_distance(float(x), float(y)) for x, y in pts[:, :2]]
    return min(max(math.fsum(d) / len(d), 0.0), 1.0)


def select_active_hand(
    hands: Sequence[KeypointSet],
    previous: str | None = None,
    *,
    floor: float = 0.5,
    hysteresis: float = 0.1,
) -> KeypointSet | None:
    """Pick the hand to steer with.

    Candidates must reach the mean-confidence floor (inclusive). A hand
    matching the previously active handedness stays selected until some
    other hand beats its confidence by more than `hysteresis`; among equal
    newcomers the right hand wins. Returns None when nothing qualifies.
    """
    candidates = [h for h in hands if h.part == "hand" and h.mean_confidence() >= floor]
    if not candidates:
        return None

    def preference(h: KeypointSet) -> tuple:
        return (h.mean_confidence(), 1 if h.handedness == "right" else 0)

    if previous is not None:
        incumbents = [h for h in candidates if h.handedness == previous]
        if incumbents:
            incumbent = max(incumbents, key=preference)
            others = [h for h in candidates if h.handedness != previous]
            if others:
                challenger = max(others, key=preference)
                if challenger.mean_confidence() > incumbent.mean_confidence() + hysteresis:
                    return challenger
            return incumbent
    return max(candidates, key=preference)


def make_affine(angle_deg: float, scale: float) -> TransformMatrix:
    """Homogeneous rotation-scale matrix for the given clockwise angle."""
    if not math.isfinite(angle_deg) or not math.isfinite(scale):
        raise ContractError("angle and scale must be finite")
    if scale <= 0.0:
        raise ContractError(f"scale must be positive, got {scale}")
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    return TransformMatrix(np.array([
        [scale * c, -scale * s, 0.0],
        [scale * s, scale * c, 0.0],
        [0.0, 0.0, 1.0],
    ]))


@dataclass(frozen=True)
class GestureReading:
    """Smoothed control values for one frame."""

    angle_deg: float = 0.0
    scale: float = 1.0
    corruption: float = 0.0
    handedness: str | None = None
    hand_seen: bool = False
    body_seen: bool = False


class GestureTracker:
    """Temporal gesture state: selection hysteresis, hold-last, smoothing.

    Angle smoothing follows the shortest arc so a hand crossing the
    +/-180 seam does not whip the rotation the long way round.
    """

    def __init__(self, config: PipelineConfig):
        self._floor = config.confidence_floor
        self._hysteresis = config.hand_hysteresis
        self._max_scale = config.max_scale
        self._lam = config.gesture_smoothing
        self._part = config.corruption_part
        self._handedness: str | None = None
        self._angle: float | None = None
        self._scale: float | None = None
        self._corruption: float | None = None

    def reconfigure(self, config: PipelineConfig) -> None:
        """Adopt new thresholds without losing the smoothed state."""
        self._floor = config.confidence_floor
        self._hysteresis = config.hand_hysteresis
        self._max_scale = config.max_scale
        self._lam = config.gesture_smoothing
        self._part = config.corruption_part

    def _smooth_scalar(self, prev: float | None, raw: float) -> float:
        if prev is None:
            return raw
        return float(ema_smooth(np.array([prev]), np.array([raw]), self._lam)[0])

    def update(self, keypoint_sets: Sequence[KeypointSet] | None) -> GestureReading:
        sets = list(keypoint_sets or ())
        hands = [k for k in sets if k.part == "hand"]
        bodies = [k for k in sets if k.part == self._part]

        hand_seen = False
        active = select_active_hand(
            hands, self._handedness, floor=self._floor, hysteresis=self._hysteresis
        )
        if active is not None:
            self._handedness = active.handedness
            try:
                raw_angle = hand_angle(active, floor=self._floor)
                raw_scale = hand_scale(
                    active, max_scale=self._max_scale, floor=self._floor
                )
            except DegenerateInputError:
                pass  # hold the last usable reading
            else:
                hand_seen = True
                if self._angle is None:
                    self._angle = raw_angle
                else:
                    step = self._lam * shortest_arc(self._angle, raw_angle)
                    self._angle = wrap_angle(self._angle + step)
                self._scale = self._smooth_scalar(self._scale, raw_scale)

        body_seen = False
        confident = [
            b for b in bodies if b.confident_mask(self._floor).any()
        ]
        if confident:
            per_set = [corruption_magnitude(b, floor=self._floor) for b in confident]
            raw = math.fsum(per_set) / len(per_set)
            self._corruption = self._smooth_scalar(self._corruption, raw)
            body_seen = True

        return GestureReading(
            angle_deg=self._angle if self._angle is not None else 0.0,
            scale=self._scale if self._scale is not None else 1.0,
            corruption=self._corruption if self._corruption is not None else 0.0,
            handedness=self._handedness,
            hand_seen=hand_seen,
            body_seen=body_seen,
        )
