"""Batched planar rigid-body dynamics.

The figure integrates in reduced coordinates (root x/z/pitch + joint angles)
so joints are exact by construction; the box is a free planar body. Contacts
are velocity-level impulses with Coulomb friction, activated speculatively
within contact_offset so resting bodies sit on the surface instead of
sinking, plus a slop-gated position projection as a safety net. The velocity
update projects gravity-kicked link momenta onto the joint subspace at the
predicted configuration (Coriolis effects come from the metric shift, not an
explicit bias term); joint damping integrates implicitly and joint limits act
as impulse rows. Every free-dynamics energy pathway is then a projection or
an exact square, which is what the energy monotonicity test leans on.

Everything is vectorized over env slots (leading dim n); no cross-env
reductions, so batched stepping is bitwise identical to stepping slots alone.
"""

from __future__ import annotations

import numpy as np

from .figure import FigureModel, TORSO, LINK_NAMES, TRACKED_BODIES, site_table, facing_sign
from .state import SimConfig, SimState, blank_state
from .domain_rand import DomainParams


def _perp(v: np.ndarray) -> np.ndarray:
    """90-degree CCW rotation, last axis = (x, z)."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


def _rot(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.cos(theta), np.sin(theta)


class Engine:
    """Precomputed tables + the substep kernel for one (figure, config) pair."""

    def __init__(self, model: FigureModel, cfg: SimConfig):
        self.model = model
        self.cfg = cfg
        m = model
        J = m.n_joints
        self.nf = m.n_dof                      # figure dofs
        self.nd = m.n_dof + 3                  # + box dofs

        # --- dynamics point set -------------------------------------------
        # axis origins (one per figure dof; 0/1 unused), link CoMs, contact
        # points, tracked sites, head. All evaluated in one FK pass.
        pts_link = []
        pts_local = []

        def add(link, local):
            pts_link.append(link)
            pts_local.append(local)
            return len(pts_link) - 1

        self.i_axis = [add(TORSO, (0.0, 0.0)) for _ in range(3)]
        for l in range(1, m.n_links):
            self.i_axis.append(add(l, (0.0, 0.0)))
        self.i_com = [add(l, tuple(m.com[l])) for l in range(m.n_links)]
        self.i_ground = [add(*m.sites[nm]) for nm in m.ground_points]
        self.i_box = [add(*m.sites[nm]) for nm in m.box_points]
        self.i_tracked = [add(*m.sites[nm]) for nm in TRACKED_BODIES]
        self.i_head = add(*m.sites["head"])

        self.pt_link = np.array(pts_link, dtype=int)
        self.pt_local = np.array(pts_local)
        self.n_pts = len(pts_link)
        self.pt_mask = m.ancestor_mask[self.pt_link]          # (P, nf)
        self.torso_com_pt = self.i_com[TORSO]

        # constant angular part of the mass matrix
        anc = m.ancestor_mask
        self.M_ang = np.einsum("ld,le,l->de", anc, anc, m.inertia)

        # --- contact candidate table --------------------------------------
        # kind 0: figure point vs ground; 1: figure point vs box; 2: box corner
        kinds, fig_pt, pair_names = [], [], []
        for k, nm in enumerate(m.ground_points):
            kinds.append(0)
            fig_pt.append(self.i_ground[k])
            pair_names.append((LINK_NAMES[m.sites[nm][0]], "ground"))
        for k, nm in enumerate(m.box_points):
            kinds.append(1)
            fig_pt.append(self.i_box[k])
            pair_names.append((LINK_NAMES[m.sites[nm][0]], "box"))
        for k in range(4):
            kinds.append(2)
            fig_pt.append(-1)
            pair_names.append(("box", "ground"))
        self.c_kind = np.array(kinds, dtype=int)
        self.c_figpt = np.array(fig_pt, dtype=int)
        self.contact_pairs = pair_names
        self.n_con = len(kinds)
        self.corner_sign = np.array([(1, 1), (1, -1), (-1, -1), (-1, 1)], dtype=float)

        # indices of foot/palm contacts for reward queries
        self.kin_tracked_names = list(TRACKED_BODIES)

    # ------------------------------------------------------------------
    def make_state(self, n: int) -> SimState:
        st = blank_state(n, self.model.n_joints, self.cfg)
        st.contact_pairs = self.contact_pairs
        C = self.n_con
        st.contact_active = np.zeros((n, C), dtype=bool)
        st.contact_point = np.zeros((n, C, 2))
        st.contact_normal = np.zeros((n, C, 2))
        st.contact_force_n = np.zeros((n, C))
        st.contact_force_t = np.zeros((n, C))
        return st

    # ------------------------------------------------------------------
    def _kin(self, state: SimState, params: DomainParams):
        """FK for the dynamics point set; returns (pts, J, origins, angles)."""
        from .figure import fk
        origins, angles = fk(self.model, state.root_pose, state.joint_pos)
        n = state.n
        a = angles[:, self.pt_link]                     # (n, P)
        c, s = _rot(a)
        local = np.broadcast_to(self.pt_local, (n, self.n_pts, 2)).copy()
        # torso CoM shifts with the randomized base CoM offset
        local[:, self.torso_com_pt, 0] = self.pt_local[self.torso_com_pt, 0] \
            + np.asarray(params.base_com_offset)
        pts = np.empty((n, self.n_pts, 2))
        pts[..., 0] = origins[:, self.pt_link, 0] + c * local[..., 0] - s * local[..., 1]
        pts[..., 1] = origins[:, self.pt_link, 1] + s * local[..., 0] + c * local[..., 1]

        # Jacobian columns: translation dofs constant, rotation dofs perp(p - axis)
        ao = pts[:, self.i_axis, :]                     # (n, nf, 2); cols 0/1 dummies
        diff = pts[:, :, None, :] - ao[:, None, :, :]   # (n, P, nf, 2)
        Jx = -diff[..., 1] * self.pt_mask[None]
        Jz = diff[..., 0] * self.pt_mask[None]
        Jac = np.stack([Jx, Jz], axis=2)                # (n, P, 2, nf)
        Jac[:, :, 0, 0] = 1.0
        Jac[:, :, 1, 0] = 0.0
        Jac[:, :, 0, 1] = 0.0
        Jac[:, :, 1, 1] = 1.0
        return pts, Jac, origins, angles

    def _mass_matrix(self, Jc: np.ndarray, n: int, mass: np.ndarray):
        M = np.einsum("nlxd,nlxe,nl->nde", Jc, Jc, mass)
        M += self.M_ang
        idx = np.arange(3, self.nf)
        M[:, idx, idx] += self.model.armature
        return M

    def _com_jacobian(self, root_pose: np.ndarray, joint_pos: np.ndarray,
                      params: DomainParams, n: int) -> np.ndarray:
        """CoM point Jacobians (n, L, 2, nf) at an arbitrary configuration."""
        from .figure import fk
        m = self.model
        origins, angles = fk(m, root_pose, joint_pos)
        c, s = _rot(angles)
        local = np.broadcast_to(m.com, (n, m.n_links, 2)).copy()
        local[:, TORSO, 0] = m.com[TORSO, 0] + np.asarray(params.base_com_offset)
        pc = np.empty((n, m.n_links, 2))
        pc[..., 0] = origins[..., 0] + c * local[..., 0] - s * local[..., 1]
        pc[..., 1] = origins[..., 1] + s * local[..., 0] + c * local[..., 1]
        # axis origin per dof: two translation dummies, root pivot, then joints
        ao = np.concatenate([origins[:, :1], origins[:, :1], origins], axis=1)
        diff = pc[:, :, None, :] - ao[:, None, :, :]        # (n, L, nf, 2)
        msk = m.ancestor_mask[None]
        Jc = np.stack([-diff[..., 1] * msk, diff[..., 0] * msk], axis=2)
        Jc[:, :, 0, 0] = 1.0
        Jc[:, :, 1, 0] = 0.0
        Jc[:, :, 0, 1] = 0.0
        Jc[:, :, 1, 1] = 1.0
        return Jc

    # ------------------------------------------------------------------
    def substep(self, state: SimState, targets: np.ndarray, params: DomainParams) -> None:
        cfg, m = self.cfg, self.model
        n = state.n
        dt = cfg.dt_sim
        g_eff = cfg.gravity + np.asarray(params.gravity_offset) * np.ones(n)

        pts, Jac, origins, angles = self._kin(state, params)
        u = np.concatenate([state.root_vel, state.joint_vel], axis=1)   # (n, nf)

        mass = np.broadcast_to(m.mass, (n, m.n_links)).copy()
        mass[:, TORSO] = m.mass[TORSO] + np.asarray(params.added_base_mass)

        # Link momenta after the gravity kick (angular parts are metric-free
        # in 2D, so only CoM velocities matter here).
        vcom = np.einsum("nlxd,nd->nlx", Jac[:, self.i_com], u)
        vcom[..., 1] -= dt * g_eff[:, None]

        # PD actuation with delayed targets, strength scaling, torque limits
        strength = np.asarray(params.motor_strength) * np.ones(n)
        tau = m.kp * (targets - state.joint_pos) - m.kd * state.joint_vel
        tau *= strength[:, None]
        lim = m.torque_limit * cfg.torque_limit_scale
        tau = np.clip(tau, -lim, lim)
        state.applied_torques = tau

        # box free velocity about its CoM
        box_m = np.asarray(params.object_mass) * np.ones(n)
        box_I = box_m * cfg.box_size ** 2 / 6.0 * np.asarray(params.object_inertia_scale)
        cth, sth = _rot(state.box_pose[:, 2])
        c_off = np.stack([np.asarray(params.object_com_x) * np.ones(n),
                          np.asarray(params.object_com_z) * np.ones(n)], axis=1)
        rc = np.stack([cth * c_off[:, 0] - sth * c_off[:, 1],
                       sth * c_off[:, 0] + cth * c_off[:, 1]], axis=1)  # R c
        com_w = state.box_pose[:, :2] + rc
        w_box = state.box_vel[:, 2]
        v_com = state.box_vel[:, :2] + w_box[:, None] * _perp(rc)
        v_com[:, 1] -= dt * g_eff
        u_box = np.concatenate([v_com, w_box[:, None]], axis=1)

        # ---- contact candidates (geometry at the current configuration) --
        # Joint limits ride along as extra unilateral rows so they resolve as
        # impulses instead of position teleports.
        C = self.n_con + 2 * m.n_joints
        gap = np.full((n, C), 1e9)
        Jn = np.zeros((n, C, self.nd))
        Jt = np.zeros((n, C, self.nd))
        cpts = np.zeros((n, C, 2))
        nrm = np.zeros((n, C, 2))
        mu = np.zeros((n, C))
        rest = np.zeros((n, C))

        gf = np.asarray(params.ground_friction) * np.ones(n)
        of = np.asarray(params.object_friction) * np.ones(n)
        oe = np.asarray(params.object_restitution) * np.ones(n)

        half = cfg.box_size / 2.0
        kg = self.c_kind == 0
        kb = self.c_kind == 1
        kc = self.c_kind == 2

        # figure point vs ground (normal +z)
        ig = np.where(kg)[0]
        fpi = self.c_figpt[ig]
        gap[:, ig] = pts[:, fpi, 1]
        Jn[:, ig, :self.nf] = Jac[:, fpi, 1, :]
        Jt[:, ig, :self.nf] = Jac[:, fpi, 0, :]
        cpts[:, ig] = pts[:, fpi]
        nrm[:, ig] = (0.0, 1.0)
        mu[:, ig] = (gf * cfg.figure_friction)[:, None]
        rest[:, ig] = cfg.ground_restitution

        # figure point vs box (point vs oriented square SDF)
        ib = np.where(kb)[0]
        fpb = self.c_figpt[ib]
        p = pts[:, fpb]                                                # (n, B, 2)
        geo = state.box_pose[:, None, :2]
        dx = p[..., 0] - geo[..., 0]
        dz = p[..., 1] - geo[..., 1]
        lx = cth[:, None] * dx + sth[:, None] * dz                     # R^T (p - geo)
        lz = -sth[:, None] * dx + cth[:, None] * dz
        qx = np.abs(lx) - half
        qz = np.abs(lz) - half
        outside = (qx > 0) | (qz > 0)
        qxp = np.maximum(qx, 0.0)
        qzp = np.maximum(qz, 0.0)
        dist_out = np.sqrt(qxp ** 2 + qzp ** 2)
        dist_in = np.maximum(qx, qz)
        sd = np.where(outside, dist_out, dist_in)
        # local outward normal
        eps = 1e-12
        nlx_out = np.sign(lx) * qxp / np.maximum(dist_out, eps)
        nlz_out = np.sign(lz) * qzp / np.maximum(dist_out, eps)
        pick_x = qx >= qz
        nlx_in = np.where(pick_x, np.sign(lx), 0.0)
        nlz_in = np.where(pick_x, 0.0, np.sign(lz))
        nlx = np.where(outside, nlx_out, nlx_in)
        nlz = np.where(outside, nlz_out, nlz_in)
        nwx = cth[:, None] * nlx - sth[:, None] * nlz
        nwz = sth[:, None] * nlx + cth[:, None] * nlz
        spt = np.stack([p[..., 0] - sd * nwx, p[..., 1] - sd * nwz], axis=-1)
        gap[:, ib] = sd
        nrm[:, ib, 0] = nwx
        nrm[:, ib, 1] = nwz
        cpts[:, ib] = spt
        # figure side: n . J_p ; tangent t = perp(n)
        Jn[:, ib, :self.nf] = (nwx[..., None] * Jac[:, fpb, 0, :]
                               + nwz[..., None] * Jac[:, fpb, 1, :])
        twx, twz = -nwz, nwx
        Jt[:, ib, :self.nf] = (twx[..., None] * Jac[:, fpb, 0, :]
                               + twz[..., None] * Jac[:, fpb, 1, :])
        # box side (about CoM): -(n, cross(r, n)) with r = spt - com
        rbx = spt[..., 0] - com_w[:, None, 0]
        rbz = spt[..., 1] - com_w[:, None, 1]
        Jn[:, ib, self.nf + 0] = -nwx
        Jn[:, ib, self.nf + 1] = -nwz
        Jn[:, ib, self.nf + 2] = -(rbx * nwz - rbz * nwx)
        Jt[:, ib, self.nf + 0] = -twx
        Jt[:, ib, self.nf + 1] = -twz
        Jt[:, ib, self.nf + 2] = -(rbx * twz - rbz * twx)
        mu[:, ib] = of[:, None]
        rest[:, ib] = oe[:, None]

        # box corners vs ground
        ic = np.where(kc)[0]
        corners_geo = self.corner_sign * half                          # (4, 2)
        cloc = corners_geo[None] - c_off[:, None, :]                   # CoM frame
        cwx = com_w[:, None, 0] + cth[:, None] * cloc[..., 0] - sth[:, None] * cloc[..., 1]
        cwz = com_w[:, None, 1] + sth[:, None] * cloc[..., 0] + cth[:, None] * cloc[..., 1]
        gap[:, ic] = cwz
        cpts[:, ic, 0] = cwx
        cpts[:, ic, 1] = cwz
        nrm[:, ic] = (0.0, 1.0)
        rx = cwx - com_w[:, None, 0]
        rz = cwz - com_w[:, None, 1]
        Jn[:, ic, self.nf + 1] = 1.0
        Jn[:, ic, self.nf + 2] = rx
        Jt[:, ic, self.nf + 0] = 1.0
        Jt[:, ic, self.nf + 2] = -rz
        mu[:, ic] = (gf * of)[:, None]
        rest[:, ic] = oe[:, None]

        # joint limit rows: unit rows on joint dofs, angular activation window
        il_lo = self.n_con + np.arange(m.n_joints)
        il_hi = il_lo + m.n_joints
        jd = np.arange(3, self.nf)
        gap[:, il_lo] = state.joint_pos - m.joint_limit_lo
        gap[:, il_hi] = m.joint_limit_hi - state.joint_pos
        Jn[:, il_lo, jd[None, :]] = 1.0
        Jn[:, il_hi, jd[None, :]] = -1.0
        offs = np.full(C, cfg.contact_offset)
        offs[self.n_con:] = 0.05

        # ---- momentum projection + impulse solve --------------------------
        # Velocity update by projecting the gravity-kicked link momenta onto
        # the joint-consistent subspace at the configuration positions are
        # about to reach; Coriolis effects come from the metric shift rather
        # than an explicit bias term, which keeps every free-dynamics energy
        # pathway a projection or an exact square. The second pass re-solves
        # with the metric at the post-impulse velocities (impacts change the
        # landing configuration a lot); impulses restart from zero each pass.
        idxj = np.arange(3, self.nf)
        p_base = np.einsum("de,ne->nd", self.M_ang, u)
        p_base[:, 3:] += m.armature * u[:, 3:] + dt * tau
        inv_box = np.stack([1.0 / box_m, 1.0 / box_m, 1.0 / box_I], axis=1)
        relax = cfg.relaxation
        u_guess = u
        u_full = active = b = lam_n = lam_t = wn = MiJn = None
        for pass_i in range(2):
            Jc_p = self._com_jacobian(state.root_pose + dt * u_guess[:, :3],
                                      state.joint_pos + dt * u_guess[:, 3:],
                                      params, n)
            M = self._mass_matrix(Jc_p, n, mass)
            p_gen = np.einsum("nlxd,nlx,nl->nd", Jc_p, vcom, mass) + p_base
            A = M.copy()
            A[:, idxj, idxj] += dt * m.damping
            u_fig = np.linalg.solve(A, p_gen[..., None])[..., 0]
            u_full = np.concatenate([u_fig, u_box], axis=1)             # (n, nd)

            if pass_i == 0:
                v0n = np.einsum("ncd,nd->nc", Jn, u_full)
                active = (gap < offs) | (gap + v0n * dt < offs)
                b = -np.maximum(gap, 0.0) / dt
                bounce = (v0n < -cfg.bounce_threshold) & (gap < offs)
                b = np.where(bounce, np.maximum(b, -rest * v0n), b)

            lam_n = np.zeros((n, C))
            lam_t = np.zeros((n, C))
            rows_n = np.where(active.any(axis=0))[0]
            if len(rows_n) == 0:
                u_guess = u_fig
                wn = np.ones((n, C))
                MiJn = np.zeros_like(Jn)
                continue
            rows_t = rows_n[(mu[:, rows_n] > 0.0).any(axis=0)]

            # M^-1 J^T for active rows: figure block against A, box diagonal
            cols = np.concatenate([Jn[:, rows_n, :self.nf],
                                   Jt[:, rows_t, :self.nf]], axis=1)
            sol = np.linalg.solve(A, cols.transpose(0, 2, 1)).transpose(0, 2, 1)
            MiJn = np.zeros_like(Jn)
            MiJt = np.zeros_like(Jt)
            MiJn[:, rows_n, :self.nf] = sol[:, :len(rows_n)]
            MiJt[:, rows_t, :self.nf] = sol[:, len(rows_n):]
            MiJn[:, :, self.nf:] = Jn[:, :, self.nf:] * inv_box[:, None, :]
            MiJt[:, :, self.nf:] = Jt[:, :, self.nf:] * inv_box[:, None, :]
            wn = np.einsum("ncd,ncd->nc", Jn, MiJn)
            wt = np.einsum("ncd,ncd->nc", Jt, MiJt)
            wn = np.where(wn > 1e-12, wn, 1.0)
            wt = np.where(wt > 1e-12, wt, 1.0)

            # Gauss-Seidel sweeps, sequential over rows: every clamped 1D
            # update dissipates kinetic energy on its own, which simultaneous
            # (Jacobi) updates do not guarantee when rows overlap. The first
            # pass only estimates the metric, so it gets fewer sweeps.
            sweeps = cfg.solver_iterations if pass_i else min(4, cfg.solver_iterations)
            for sweep in range(sweeps + 1):
                for c in rows_n:
                    vn = np.einsum("nd,nd->n", Jn[:, c], u_full)
                    new = np.maximum(lam_n[:, c] + relax * (b[:, c] - vn) / wn[:, c], 0.0)
                    new = np.where(active[:, c], new, 0.0)
                    dl = new - lam_n[:, c]
                    lam_n[:, c] = new
                    u_full += MiJn[:, c] * dl[:, None]
                if sweep == sweeps:
                    # end on normals so their residuals are not left holding
                    # whatever the friction moment arms injected; otherwise
                    # resting stacks pick up a tiny steady vertical drift
                    break
                for c in rows_t:
                    vt = np.einsum("nd,nd->n", Jt[:, c], u_full)
                    bound = mu[:, c] * lam_n[:, c]
                    newt = np.clip(lam_t[:, c] - relax * vt / wt[:, c], -bound, bound)
                    newt = np.where(active[:, c], newt, 0.0)
                    dlt = newt - lam_t[:, c]
                    lam_t[:, c] = newt
                    u_full += MiJt[:, c] * dlt[:, None]
            u_guess = u_full[:, :self.nf]

            if pass_i == 0:
                # rows the first-pass impulses drove toward a surface are
                # resolved this substep instead of popping through the slop
                v1n = np.einsum("ncd,nd->nc", Jn, u_full)
                active = active | (gap + v1n * dt < offs)

        # ---- integrate ---------------------------------------------------
        u_fig = u_full[:, :self.nf]
        state.root_pose += dt * u_fig[:, :3]
        state.joint_pos += dt * u_fig[:, 3:]
        state.root_vel = u_fig[:, :3].copy()
        state.joint_vel = u_fig[:, 3:].copy()

        v_com = u_full[:, self.nf:self.nf + 2]
        w_new = u_full[:, self.nf + 2]
        com_w = com_w + dt * v_com
        th_new = state.box_pose[:, 2] + dt * w_new
        c2, s2 = _rot(th_new)
        rc2 = np.stack([c2 * c_off[:, 0] - s2 * c_off[:, 1],
                        s2 * c_off[:, 0] + c2 * c_off[:, 1]], axis=1)
        state.box_pose[:, :2] = com_w - rc2
        state.box_pose[:, 2] = th_new
        state.box_vel[:, :2] = v_com - w_new[:, None] * _perp(rc2)
        state.box_vel[:, 2] = w_new

        # position projection for penetration beyond slop (rarely active);
        # joint limit rows are handled by the clamp below instead
        pred_gap = gap + dt * np.einsum("ncd,nd->nc", Jn, u_full)
        pen = np.maximum(-pred_gap - cfg.penetration_slop, 0.0) * active
        pen[:, self.n_con:] = 0.0
        if pen.any():
            corr = np.minimum(cfg.position_correction * pen, 0.01)
            lp = corr / wn
            dq = np.einsum("ncd,nc->nd", MiJn, lp)
            state.root_pose += dq[:, :3]
            state.joint_pos += dq[:, 3:self.nf]
            state.box_pose[:, :2] += dq[:, self.nf:self.nf + 2]
            state.box_pose[:, 2] += dq[:, self.nf + 2]

        # joint limit projection: clamp position, kill outward velocity
        lo, hi = m.joint_limit_lo, m.joint_limit_hi
        ql = np.clip(state.joint_pos, lo, hi)
        at_hi = (state.joint_pos > hi) & (state.joint_vel > 0)
        at_lo = (state.joint_pos < lo) & (state.joint_vel < 0)
        state.joint_vel[at_hi | at_lo] = 0.0
        state.joint_pos = ql

        # health caps
        bad = (np.abs(state.root_vel[:, :2]).max(axis=1) > cfg.max_lin_vel) \
            | (np.abs(state.root_vel[:, 2]) > cfg.max_ang_vel) \
            | (np.abs(state.joint_vel).max(axis=1) > cfg.max_joint_vel) \
            | (np.abs(state.box_vel[:, :2]).max(axis=1) > cfg.max_lin_vel)
        if bad.any():
            state.unhealthy |= bad
            state.root_vel = np.clip(state.root_vel, -cfg.max_ang_vel, cfg.max_ang_vel)
            state.joint_vel = np.clip(state.joint_vel, -cfg.max_joint_vel, cfg.max_joint_vel)
            state.box_vel = np.clip(state.box_vel, -cfg.max_ang_vel, cfg.max_ang_vel)

        nc = self.n_con
        state.contact_active = lam_n[:, :nc] > 1e-12
        state.contact_point = cpts[:, :nc]
        state.contact_normal = nrm[:, :nc]
        state.contact_force_n = lam_n[:, :nc] / dt
        state.contact_force_t = lam_t[:, :nc] / dt
        state.step_count += 1

    # ------------------------------------------------------------------
    def step(self, state: SimState, joint_targets: np.ndarray,
             params: DomainParams) -> SimState:
        """One control step: buffer the command, run decimated substeps."""
        cfg = self.cfg
        if not np.all(np.isfinite(joint_targets)):
            raise ValueError("non-finite joint targets passed to step()")
        if joint_targets.shape != state.joint_pos.shape:
            raise ValueError(
                f"joint target shape {joint_targets.shape} does not match "
                f"state joints {state.joint_pos.shape}")
        n = state.n
        size = state.target_buffer.shape[1]
        state.buffer_head = (state.buffer_head + 1) % size
        state.target_buffer[np.arange(n), state.buffer_head] = joint_targets
        delay = np.minimum(np.asarray(params.action_delay_steps) * np.ones(n, dtype=int),
                           size - 1)
        slot = (state.buffer_head - delay) % size
        effective = state.target_buffer[np.arange(n), slot]
        state.last_action = joint_targets.copy()
        state.prev_joint_pos = state.joint_pos.copy()
        for _ in range(cfg.control_decimation):
            self.substep(state, effective, params)
        return state

    # ------------------------------------------------------------------
    def reset_pose(self, state: SimState, root_pose, joint_pos,
                   box_pose=None, env_idx=None) -> None:
        """Pose a subset of env slots; velocities and buffers are zeroed."""
        idx = np.arange(state.n) if env_idx is None else np.atleast_1d(env_idx)
        state.root_pose[idx] = root_pose
        state.joint_pos[idx] = joint_pos
        state.root_vel[idx] = 0.0
        state.joint_vel[idx] = 0.0
        if box_pose is not None:
            state.box_pose[idx] = box_pose
            state.box_vel[idx] = 0.0
        state.last_action[idx] = joint_pos
        state.prev_joint_pos[idx] = joint_pos
        state.applied_torques[idx] = 0.0
        jp = np.asarray(joint_pos)
        if jp.ndim == 1:
            state.target_buffer[idx] = jp[None, None, :]
        else:
            state.target_buffer[idx] = jp[:, None, :]
        state.unhealthy[idx] = False

    # ------------------------------------------------------------------
    def mechanical_energy(self, state: SimState, params: DomainParams) -> np.ndarray:
        """Kinetic + potential energy in the integrator's own metric."""
        cfg = self.cfg
        n = state.n
        g_eff = cfg.gravity + np.asarray(params.gravity_offset) * np.ones(n)
        pts, Jac, _, _ = self._kin(state, params)
        Jc = Jac[:, self.i_com]
        mass = np.broadcast_to(self.model.mass, (n, self.model.n_links)).copy()
        mass[:, TORSO] = self.model.mass[TORSO] + np.asarray(params.added_base_mass)
        M = self._mass_matrix(Jc, n, mass)
        u = np.concatenate([state.root_vel, state.joint_vel], axis=1)
        ke = 0.5 * np.einsum("nd,nde,ne->n", u, M, u)
        pe = g_eff * np.einsum("nl,nl->n", mass, pts[:, self.i_com, 1])

        box_m = np.asarray(params.object_mass) * np.ones(n)
        box_I = box_m * cfg.box_size ** 2 / 6.0 * np.asarray(params.object_inertia_scale)
        cth, sth = _rot(state.box_pose[:, 2])
        cx = np.asarray(params.object_com_x) * np.ones(n)
        cz = np.asarray(params.object_com_z) * np.ones(n)
        rc = np.stack([cth * cx - sth * cz, sth * cx + cth * cz], axis=1)
        com_w = state.box_pose[:, :2] + rc
        w = state.box_vel[:, 2]
        v_com = state.box_vel[:, :2] + w[:, None] * _perp(rc)
        ke_box = 0.5 * box_m * (v_com ** 2).sum(axis=1) + 0.5 * box_I * w ** 2
        pe_box = box_m * g_eff * com_w[:, 1]
        return ke + pe + ke_box + pe_box

    # ------------------------------------------------------------------
    def snapshot(self, state: SimState, params: DomainParams = None):
        """Kinematic summary used by rewards/observations (KinSnapshot)."""
        from .figure import fk
        if params is None:
            from .domain_rand import nominal_params
            params = nominal_params(state.n)
        pts, Jac, origins, angles = self._kin(state, params)
        u = np.concatenate([state.root_vel, state.joint_vel], axis=1)
        vel = np.einsum("npxd,nd->npx", Jac[:, self.i_tracked], u)
        tracked_links = self.pt_link[self.i_tracked]
        return KinSnapshot(
            origins=origins, angles=angles,
            tracked_pos=pts[:, self.i_tracked],
            tracked_vel=vel,
            tracked_ang=angles[:, tracked_links],
            tracked_angvel=np.einsum("ld,nd->nl",
                                     self.model.ancestor_mask[tracked_links], u),
            head_pos=pts[:, self.i_head],
            head_ang=angles[:, self.pt_link[self.i_head]],
            facing=facing_sign(origins, angles, self.model),
            contact_flags=self.tracked_contacts(state),
        )

    def tracked_contacts(self, state: SimState) -> np.ndarray:
        """(n, 7) contact flags for tracked bodies (feet/palms vs anything)."""
        n = state.n
        flags = np.zeros((n, len(TRACKED_BODIES)))
        if state.contact_active is None:
            return flags
        act = state.contact_active
        name_of_tracked = {"l_foot": "foot_l", "r_foot": "foot_r",
                           "l_palm": "farm_l", "r_palm": "farm_r",
                           "l_knee": "shin_l", "r_knee": "shin_r",
                           "root": "torso"}
        for t, tb in enumerate(TRACKED_BODIES):
            link = name_of_tracked[tb]
            cols = [c for c, (ln, _) in enumerate(self.contact_pairs) if ln == link]
            if cols:
                flags[:, t] = act[:, cols].any(axis=1).astype(float)
        return flags


class KinSnapshot:
    """Plain holder for per-step kinematics of the tracked bodies."""

    def __init__(self, **kw):
        self.__dict__.update(kw)


_ENGINE_CACHE: dict = {}


def get_engine(model: FigureModel, cfg: SimConfig) -> Engine:
    key = (id(model), tuple(sorted((k, v) for k, v in cfg.__dict__.items())))
    eng = _ENGINE_CACHE.get(key)
    if eng is None:
        eng = Engine(model, cfg)
        _ENGINE_CACHE[key] = eng
    return eng


def step(state: SimState, joint_targets: np.ndarray, params: DomainParams,
         cfg: SimConfig, model: FigureModel = None) -> SimState:
    """Functional control step: returns a new state, input untouched."""
    if model is None:
        model = _default_model()
    eng = get_engine(model, cfg)
    out = state.copy()
    if out.contact_active is None:
        tmp = eng.make_state(state.n)
        out.contact_pairs = tmp.contact_pairs
        out.contact_active = tmp.contact_active
        out.contact_point = tmp.contact_point
        out.contact_normal = tmp.contact_normal
        out.contact_force_n = tmp.contact_force_n
        out.contact_force_t = tmp.contact_force_t
    return eng.step(out, joint_targets, params)


_DEFAULT_MODEL = None


def _default_model() -> FigureModel:
    global _DEFAULT_MODEL
    if _DEFAULT_MODEL is None:
        from .figure import default_figure
        _DEFAULT_MODEL = default_figure()
    return _DEFAULT_MODEL
