"""Leader-follower formation geometry.

Everything here is pure and stateless: synchronized formation targets with
opposing yaw, the conservative cruise speed, the mission timeout and the
relative-error signals that feed the supervisor gates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import wrap_angle

log = logging.getLogger(__name__)

SPEED_MARGIN = 0.8
TIMEOUT_FLOOR = 30.0  # s
LEADER_YAW = 0.0
FOLLOWER_YAW = math.pi


@dataclass(frozen=True)
class FormationSpec:
    g: tuple[float, float, float] = (0.0, 0.0, 2.0)  # formation center (m)
    d_dock: float = 0.46  # docking separation along world x (m)
    v_form_leader: float = 0.3  # m/s
    v_form_follower: float = 0.5  # m/s
    t_usr: float = 120.0  # user timeout cap (s)

    def validate(self) -> list[str]:
        errs = []
        if not all(math.isfinite(c) for c in self.g):
            errs.append("spec.g must be finite")
        if not self.d_dock > 0:
            errs.append(f"spec.d_dock ({self.d_dock}) must be > 0")
        if not self.v_form_leader > 0:
            errs.append(f"spec.v_form_leader ({self.v_form_leader}) must be > 0")
        if not self.v_form_follower > 0:
            errs.append(f"spec.v_form_follower ({self.v_form_follower}) must be > 0")
        if not self.t_usr > 0:
            errs.append(f"spec.t_usr ({self.t_usr}) must be > 0")
        return errs


@dataclass(frozen=True)
class FormationTargets:
    p_L_star: np.ndarray
    p_F_star: np.ndarray
    psi_L_star: float = LEADER_YAW
    psi_F_star: float = FOLLOWER_YAW


def baseline_vector(d_dock: float) -> np.ndarray:
    return np.array([d_dock, 0.0, 0.0])


def formation_targets(spec: FormationSpec) -> FormationTargets:
    """Place the pair symmetrically about ``g`` along world x, facing each other."""
    g = np.asarray(spec.g, dtype=float)
    half = 0.5 * baseline_vector(spec.d_dock)
    return FormationTargets(p_L_star=g - half, p_F_star=g + half)


def pair_targets(center: np.ndarray, separation: float) -> tuple[np.ndarray, np.ndarray]:
    """Leader/follower setpoints for an arbitrary center and x-separation."""
    half = np.array([0.5 * separation, 0.0, 0.0])
    return center - half, center + half


def sync_speed(spec: FormationSpec) -> float:
    return SPEED_MARGIN * min(spec.v_form_leader, spec.v_form_follower)


def mission_timeout(spec: FormationSpec, p_L, p_F) -> float:
    """Docking timeout from the commanded formation-center displacement.

    Twice the nominal transit time at the synchronized speed, clipped to
    ``[30 s, t_usr]``. When ``t_usr`` is below the floor the user cap wins.
    """
    v = sync_speed(spec)
    if not v > 0:
        raise ValueError("synchronized speed must be positive")
    c = 0.5 * (np.asarray(p_L, dtype=float) + np.asarray(p_F, dtype=float))
    t_hat = float(np.linalg.norm(np.asarray(spec.g, dtype=float) - c)) / v
    if spec.t_usr < TIMEOUT_FLOOR:
        log.warning(
            "t_usr=%.3g s is below the %.0f s timeout floor; using t_usr", spec.t_usr, TIMEOUT_FLOOR
        )
        return float(spec.t_usr)
    return float(min(max(2.0 * t_hat, TIMEOUT_FLOOR), spec.t_usr))


def baseline_error(p_L, p_F, d_dock: float) -> float:
    d = np.asarray(p_F, dtype=float) - np.asarray(p_L, dtype=float)
    return float(math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])) - d_dock


def yaw_error(psi_L: float, psi_F: float) -> float:
    return wrap_angle((psi_F - psi_L) - math.pi)


def relative_speed(v_L, v_F) -> float:
    d = np.asarray(v_F, dtype=float) - np.asarray(v_L, dtype=float)
    return float(math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]))
