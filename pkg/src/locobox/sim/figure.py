"""Planar articulated figure: kinematic tree, geometry, and actuation constants.

The rig is a sagittal-plane humanoid: a torso root link, two legs with
thigh/shin segments plus small feet, and two arms with upper-arm/forearm
segments whose tips act as palm sites. World axes: x horizontal, z up,
angles CCW, gravity along -z. Joint angles are child-relative-to-parent
rotations; all zeros is an upright stand with hanging arms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Link indices (topological order: parents before children).
TORSO = 0
THIGH_L = 1
SHIN_L = 2
FOOT_L = 3
THIGH_R = 4
SHIN_R = 5
FOOT_R = 6
UARM_L = 7
FARM_L = 8
UARM_R = 9
FARM_R = 10

LINK_NAMES = [
    "torso",
    "thigh_l", "shin_l", "foot_l",
    "thigh_r", "shin_r", "foot_r",
    "uarm_l", "farm_l",
    "uarm_r", "farm_r",
]

JOINT_NAMES = [
    "hip_l", "knee_l", "ankle_l",
    "hip_r", "knee_r", "ankle_r",
    "shoulder_l", "elbow_l",
    "shoulder_r", "elbow_r",
]

# Bodies tracked by observations, rewards, and metrics.
TRACKED_BODIES = ["root", "l_knee", "r_knee", "l_foot", "r_foot", "l_palm", "r_palm"]
KEY_ANCHORS = ["l_foot", "r_foot", "l_palm", "r_palm"]  # retarget-stage position anchors
CONTACT_TRACKED = ["l_foot", "r_foot", "l_palm", "r_palm"]  # links with contact labels

# Parent->child edges between tracked bodies, used for link-direction matching.
TRACKED_EDGES = [
    ("root", "l_knee"), ("l_knee", "l_foot"),
    ("root", "r_knee"), ("r_knee", "r_foot"),
    ("root", "l_palm"), ("root", "r_palm"),
]


@dataclass
class FigureModel:
    """Geometry, mass, and actuation parameters of the planar figure."""

    # per-link arrays, length n_links
    parent: np.ndarray          # int, -1 for root
    anchor: np.ndarray          # (L, 2) joint anchor in parent frame
    com: np.ndarray             # (L, 2) CoM in own frame
    mass: np.ndarray            # (L,)
    inertia: np.ndarray         # (L,) about CoM
    # per-joint arrays, length n_joints = n_links - 1; joint j drives link j+1
    joint_limit_lo: np.ndarray
    joint_limit_hi: np.ndarray
    torque_limit: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    damping: np.ndarray         # viscous joint damping (gearbox friction)
    armature: np.ndarray        # reflected rotor inertia added to joint dofs
    default_pose: np.ndarray    # (J,) stand pose
    action_scale: float
    leg_length: float           # hip-to-sole, used for retarget scaling
    # named points: name -> (link_idx, (x, z)) in link frame
    sites: dict = field(default_factory=dict)
    ground_points: list = field(default_factory=list)   # point names touching ground
    box_points: list = field(default_factory=list)      # point names tested against the box

    # derived, filled by finalize()
    n_links: int = 0
    n_joints: int = 0
    n_dof: int = 0
    ancestor_mask: np.ndarray = None  # (L, n_dof) 1 where dof moves link
    total_mass: float = 0.0

    def finalize(self) -> "FigureModel":
        L = len(self.parent)
        self.n_links = L
        self.n_joints = L - 1
        self.n_dof = 3 + self.n_joints
        anc = np.zeros((L, self.n_dof))
        anc[:, 2] = 1.0  # root rotation moves every link
        for l in range(1, L):
            anc[l] = anc[self.parent[l]].copy()
            anc[l, 2 + l] = 1.0  # joint j = l - 1 sits at dof 3 + (l - 1)
        self.ancestor_mask = anc
        self.total_mass = float(self.mass.sum())
        return self

    def joint_of_link(self, link: int) -> int:
        return link - 1

    def dof_of_joint(self, joint: int) -> int:
        return 3 + joint


def _rod(mass: float, length: float) -> float:
    return mass * length * length / 12.0


def default_figure(scale: float = 1.0, arm_scale: float = 1.0,
                   torso_scale: float = 1.0) -> FigureModel:
    """Desk-scale figure, about 1.05 m tall at scale 1.

    arm_scale/torso_scale skew proportions relative to the legs, used to
    build source embodiments whose shape genuinely differs from the target.
    """
    s = scale
    l_torso = 0.45 * s * torso_scale
    l_thigh = 0.26 * s
    l_shin = 0.26 * s
    l_uarm = 0.22 * s * arm_scale
    l_farm = 0.22 * s * arm_scale
    ankle_h = 0.04 * s
    heel = -0.05 * s
    toe = 0.10 * s

    parent = np.array([-1, TORSO, THIGH_L, SHIN_L, TORSO, THIGH_R, SHIN_R,
                       TORSO, UARM_L, TORSO, UARM_R])
    anchor = np.zeros((11, 2))
    anchor[THIGH_L] = (0.0, 0.0)
    anchor[SHIN_L] = (0.0, -l_thigh)
    anchor[FOOT_L] = (0.0, -l_shin)
    anchor[THIGH_R] = (0.0, 0.0)
    anchor[SHIN_R] = (0.0, -l_thigh)
    anchor[FOOT_R] = (0.0, -l_shin)
    anchor[UARM_L] = (0.0, l_torso)
    anchor[FARM_L] = (0.0, -l_uarm)
    anchor[UARM_R] = (0.0, l_torso)
    anchor[FARM_R] = (0.0, -l_uarm)

    com = np.zeros((11, 2))
    com[TORSO] = (0.0, 0.55 * l_torso)
    com[THIGH_L] = com[THIGH_R] = (0.0, -0.5 * l_thigh)
    com[SHIN_L] = com[SHIN_R] = (0.0, -0.5 * l_shin)
    com[FOOT_L] = com[FOOT_R] = (0.5 * (heel + toe), -ankle_h)
    com[UARM_L] = com[UARM_R] = (0.0, -0.5 * l_uarm)
    com[FARM_L] = com[FARM_R] = (0.0, -0.5 * l_farm)

    m3 = s ** 3
    mass = np.array([8.0, 2.0, 1.5, 0.5, 2.0, 1.5, 0.5, 1.0, 0.8, 1.0, 0.8]) * m3
    inertia = np.array([
        _rod(mass[TORSO], l_torso * 1.2),
        _rod(mass[THIGH_L], l_thigh), _rod(mass[SHIN_L], l_shin),
        _rod(mass[FOOT_L], toe - heel),
        _rod(mass[THIGH_R], l_thigh), _rod(mass[SHIN_R], l_shin),
        _rod(mass[FOOT_R], toe - heel),
        _rod(mass[UARM_L], l_uarm), _rod(mass[FARM_L], l_farm),
        _rod(mass[UARM_R], l_uarm), _rod(mass[FARM_R], l_farm),
    ])

    # hip knee ankle x2, shoulder elbow x2 (order matches JOINT_NAMES)
    lo = np.array([-2.0, -2.4, -0.9, -2.0, -2.4, -0.9, -3.0, -0.05, -3.0, -0.05])
    hi = np.array([2.0, 0.05, 0.9, 2.0, 0.05, 0.9, 3.0, 2.7, 3.0, 2.7])
    tau = np.array([60.0, 60.0, 30.0, 60.0, 60.0, 30.0, 40.0, 30.0, 40.0, 30.0])
    # ankle stiffness needs clear margin over m*g*h_com (~115 N*m/rad total)
    # or the figure cannot balance statically
    kp = np.array([120.0, 120.0, 120.0, 120.0, 120.0, 120.0, 60.0, 40.0, 60.0, 40.0])
    kd = np.array([6.0, 6.0, 5.0, 6.0, 6.0, 5.0, 3.0, 2.0, 3.0, 2.0])
    damping = np.array([0.6, 0.6, 0.3, 0.6, 0.6, 0.3, 0.3, 0.2, 0.3, 0.2])
    armature = np.full(10, 0.02)
    default_pose = np.array([0.05, -0.10, 0.05, 0.05, -0.10, 0.05,
                             0.20, 0.30, 0.20, 0.30])

    sites = {
        "root": (TORSO, (0.0, 0.0)),
        "shoulder": (TORSO, (0.0, l_torso)),
        "l_knee": (SHIN_L, (0.0, 0.0)),
        "r_knee": (SHIN_R, (0.0, 0.0)),
        "l_foot": (FOOT_L, (0.5 * (heel + toe), -ankle_h)),
        "r_foot": (FOOT_R, (0.5 * (heel + toe), -ankle_h)),
        "l_palm": (FARM_L, (0.0, -l_farm)),
        "r_palm": (FARM_R, (0.0, -l_farm)),
        "l_heel": (FOOT_L, (heel, -ankle_h)),
        "l_toe": (FOOT_L, (toe, -ankle_h)),
        "r_heel": (FOOT_R, (heel, -ankle_h)),
        "r_toe": (FOOT_R, (toe, -ankle_h)),
        "l_elbow": (FARM_L, (0.0, 0.0)),
        "r_elbow": (FARM_R, (0.0, 0.0)),
        "head": (TORSO, (0.0, l_torso + 0.10 * s)),
    }
    ground_points = ["l_heel", "l_toe", "r_heel", "r_toe", "l_palm", "r_palm",
                     "l_knee", "r_knee", "root", "shoulder", "l_elbow", "r_elbow"]
    box_points = ["l_palm", "r_palm", "l_toe", "r_toe", "l_knee", "r_knee", "root"]

    return FigureModel(
        parent=parent, anchor=anchor, com=com, mass=mass, inertia=inertia,
        joint_limit_lo=lo, joint_limit_hi=hi, torque_limit=tau,
        kp=kp, kd=kd, damping=damping, armature=armature,
        default_pose=default_pose, action_scale=0.5,
        leg_length=l_thigh + l_shin + ankle_h,
        sites=sites, ground_points=ground_points, box_points=box_points,
    ).finalize()


def source_figure(limb_ratio: float = 1.3) -> FigureModel:
    """Longer-limbed source embodiment used by the synthetic motion generator.

    Legs are limb_ratio times the target's, but arms run proportionally
    longer and the torso shorter, so leg-ratio scaling alone cannot map
    source kinematics onto the target and the retargeting stage has real
    work to do.
    """
    return default_figure(scale=limb_ratio, arm_scale=1.18, torso_scale=0.92)


def fk(model: FigureModel, root_pose: np.ndarray, joint_pos: np.ndarray):
    """Forward kinematics.

    root_pose: (n, 3) as (x, z, pitch); joint_pos: (n, J).
    Returns (origins (n, L, 2), angles (n, L)).
    """
    n = root_pose.shape[0]
    L = model.n_links
    origins = np.empty((n, L, 2))
    angles = np.empty((n, L))
    origins[:, TORSO] = root_pose[:, :2]
    angles[:, TORSO] = root_pose[:, 2]
    for l in range(1, L):
        p = model.parent[l]
        pa = angles[:, p]
        c, s = np.cos(pa), np.sin(pa)
        ax, az = model.anchor[l]
        origins[:, l, 0] = origins[:, p, 0] + c * ax - s * az
        origins[:, l, 1] = origins[:, p, 1] + s * ax + c * az
        angles[:, l] = pa + joint_pos[:, l - 1]
    return origins, angles


def points_world(origins: np.ndarray, angles: np.ndarray,
                 link_idx: np.ndarray, local_xy: np.ndarray) -> np.ndarray:
    """World positions of points given by (link index, local offset).

    origins: (n, L, 2); angles: (n, L); link_idx: (P,); local_xy: (P, 2).
    Returns (n, P, 2).
    """
    a = angles[:, link_idx]                       # (n, P)
    c, s = np.cos(a), np.sin(a)
    x, z = local_xy[:, 0], local_xy[:, 1]
    out = np.empty(a.shape + (2,))
    out[..., 0] = origins[:, link_idx, 0] + c * x - s * z
    out[..., 1] = origins[:, link_idx, 1] + s * x + c * z
    return out


def site_table(model: FigureModel, names: list[str]):
    """(link_idx array, local_xy array) for a list of site names."""
    link_idx = np.array([model.sites[n][0] for n in names], dtype=int)
    local = np.array([model.sites[n][1] for n in names])
    return link_idx, local


def facing_sign(origins: np.ndarray, angles: np.ndarray, model: FigureModel) -> np.ndarray:
    """+1 when the figure faces +x, -1 otherwise, from mean toe-minus-heel x."""
    li, lx = site_table(model, ["l_toe", "r_toe", "l_heel", "r_heel"])
    p = points_world(origins, angles, li, lx)
    d = (p[:, 0, 0] - p[:, 2, 0]) + (p[:, 1, 0] - p[:, 3, 0])
    return np.where(d >= 0.0, 1.0, -1.0)


def stand_pose(model: FigureModel) -> tuple[np.ndarray, np.ndarray]:
    """(root_pose (3,), joint_pos (J,)) with the lowest sole point on the ground."""
    jp = model.default_pose.copy()
    origins, angles = fk(model, np.array([[0.0, 0.0, 0.0]]), jp[None])
    li, lx = site_table(model, ["l_heel", "l_toe", "r_heel", "r_toe"])
    soles = points_world(origins, angles, li, lx)
    return np.array([0.0, -soles[0, :, 1].min(), 0.0]), jp
