"""Two-port (TITOP) dynamic building blocks for flexible multibody assemblies.

Every block couples to the structure through *ports*: the parent port takes
an acceleration twist (6 channels, linear then angular) and returns the
wrench (force then torque) the block applies back on its support, while each
child port does the reverse.  Blocks are plain :class:`~flexsat.linsys.StateSpace`
systems with a labelling convention (``<name>.<node>.acc0..5`` and
``<name>.<node>.wr0..5``) so that assemblies reduce to one
:func:`~flexsat.linsys.interconnect` call with unit gains.

Sign conventions used throughout:

* the acceleration twist transported from point X to point Y is
  ``transport_matrix(X - Y) @ xdd_X``;
* the wrench applied at Y, expressed as an equivalent wrench at X, is
  ``transport_matrix(X - Y).T @ W_Y`` (the transport pair is
  power-conjugate);
* a parent-port wrench output is the wrench the block applies *on* its
  support, so the DC gain of ``acc -> -wrench`` is the transported rigid
  mass matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, ModelError
from .linsys import StateSpace, interconnect

# Leak applied to pure rate integrators (reaction-wheel radial rates) so the
# assembled plant has no exactly-zero eigenvalue duplicating the rigid-body
# states of the supporting structure.  Far below every physical mode.
RATE_LEAK = 1e-6


# ---------------------------------------------------------------------------
# kinematic operators

def skew(r) -> np.ndarray:
    """Cross-product matrix: ``skew(r) @ v == np.cross(r, v)``."""
    x, y, z = np.asarray(r, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def transport_matrix(r) -> np.ndarray:
    """Rigid acceleration-twist transport ``[[I, (*r)], [0, I]]``.

    With ``r = X - Y`` this maps the twist at X to the twist at Y; its
    transpose maps a wrench at Y to the equivalent wrench at X.
    """
    r = np.asarray(r, dtype=float).reshape(3)
    if not np.all(np.isfinite(r)):
        raise ModelError("transport lever arm must be finite")
    t = np.eye(6)
    t[:3, 3:] = skew(r)
    return t


def dcm_from_spin_axis(z_w) -> np.ndarray:
    """Orthonormal frame whose third column is the given axis.

    The first two columns span the orthogonal complement of the axis and the
    determinant is corrected to +1, so the result maps wheel-frame vectors
    into the parent frame.
    """
    z = np.asarray(z_w, dtype=float).reshape(3)
    nz = np.linalg.norm(z)
    if nz == 0.0 or not np.isfinite(nz):
        raise ModelError("spin axis must be a non-zero finite vector")
    z = z / nz
    basis = sla.null_space(z.reshape(1, 3))
    r = np.column_stack([basis[:, 0], basis[:, 1], z])
    if np.linalg.det(r) < 0:
        r[:, 1] = -r[:, 1]
    return r


def rotation_about_axis(axis, cos_t: float, sin_t: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis given cos/sin of the angle."""
    a = np.asarray(axis, dtype=float).reshape(3)
    a = a / np.linalg.norm(a)
    ax = skew(a)
    return np.eye(3) + sin_t * ax + (1.0 - cos_t) * (ax @ ax)


def dcm_from_quarter_tangent(axis, tau: float) -> np.ndarray:
    """Rotation by angle theta about an axis, as a rational map of tan(theta/4).

    With ``t = tan(theta/4)``::

        cos(theta) = ((1 - t^2)^2 - 4 t^2) / (1 + t^2)^2
        sin(theta) = 4 t (1 - t^2) / (1 + t^2)^2

    which covers the full turn without trigonometric evaluation, so the
    resulting direction cosine matrix depends rationally on the parameter.
    """
    t = float(tau)
    den = (1.0 + t * t) ** 2
    cos_t = ((1.0 - t * t) ** 2 - 4.0 * t * t) / den
    sin_t = 4.0 * t * (1.0 - t * t) / den
    return rotation_about_axis(axis, cos_t, sin_t)


def _blkrot(r: np.ndarray) -> np.ndarray:
    return sla.block_diag(r, r)


# ---------------------------------------------------------------------------
# block containers

def acc_labels(name: str, node: str) -> tuple[str, ...]:
    return tuple(f"{name}.{node}.acc{i}" for i in range(6))


def wrench_labels(name: str, node: str) -> tuple[str, ...]:
    return tuple(f"{name}.{node}.wr{i}" for i in range(6))


@dataclass(frozen=True)
class TitopBlock:
    """A labelled state-space block with one parent port and child ports.

    Parameters
    ----------
    name : str
        Prefix of every channel label; unique within an assembly.
    system : StateSpace
        Realization carrying the port channels plus any auxiliary signals.
    parent_node, child_nodes
        Node labels.  The parent port consumes ``acc0..5`` and produces
        ``wr0..5``; each child port does the opposite.
    aux_inputs, aux_outputs
        Non-port channels (actuator commands, disturbances, deflections).
    """

    name: str
    system: StateSpace
    parent_node: str
    child_nodes: tuple[str, ...] = ()
    aux_inputs: tuple[str, ...] = ()
    aux_outputs: tuple[str, ...] = ()

    def __post_init__(self):
        nodes = (self.parent_node,) + tuple(self.child_nodes)
        if len(set(nodes)) != len(nodes):
            raise ModelError(f"block {self.name!r} has duplicate node labels")
        want_in = list(acc_labels(self.name, self.parent_node))
        want_out = list(wrench_labels(self.name, self.parent_node))
        for c in self.child_nodes:
            want_in += wrench_labels(self.name, c)
            want_out += acc_labels(self.name, c)
        want_in += self.aux_inputs
        want_out += self.aux_outputs
        if list(self.system.input_labels) != want_in:
            raise ModelError(f"block {self.name!r}: input labels do not "
                             "follow the port convention")
        if list(self.system.output_labels) != want_out:
            raise ModelError(f"block {self.name!r}: output labels do not "
                             "follow the port convention")

    # -- label helpers ------------------------------------------------
    def parent_acc(self) -> tuple[str, ...]:
        return acc_labels(self.name, self.parent_node)

    def parent_wrench(self) -> tuple[str, ...]:
        return wrench_labels(self.name, self.parent_node)

    def child_acc(self, node: str) -> tuple[str, ...]:
        self._check_child(node)
        return acc_labels(self.name, node)

    def child_wrench(self, node: str) -> tuple[str, ...]:
        self._check_child(node)
        return wrench_labels(self.name, node)

    def _check_child(self, node: str):
        if node not in self.child_nodes:
            raise ModelError(f"block {self.name!r} has no child node {node!r}")

    def dc_mass(self) -> np.ndarray:
        """DC gain of ``acc -> -wrench`` at the parent port (aux inputs zero)."""
        g = self.system.subsystem(self.parent_acc(), self.parent_wrench())
        if g.n_states:
            return -(g.D - g.C @ sla.solve(g.A, g.B))
        return -g.D


def attach(parent: TitopBlock, node: str, child: TitopBlock) -> list:
    """Unit-gain connection tuples wiring a child block onto a parent node."""
    conns = []
    for src, dst in zip(parent.child_acc(node), child.parent_acc()):
        conns.append((src, dst, 1.0))
    for src, dst in zip(child.parent_wrench(), parent.child_wrench(node)):
        conns.append((src, dst, 1.0))
    return conns


@dataclass(frozen=True)
class ParametricBlock:
    """Family of :class:`TitopBlock` indexed by named scalar parameters."""

    name: str
    parameters: tuple[str, ...]
    builder: Callable[..., TitopBlock]
    meta: dict = field(default_factory=dict, compare=False)

    def at(self, **values) -> TitopBlock:
        unknown = set(values) - set(self.parameters)
        if unknown:
            raise ModelError(f"unknown parameters {sorted(unknown)} for "
                             f"block {self.name!r}")
        filled = {p: float(values.get(p, 0.0)) for p in self.parameters}
        return self.builder(**filled)


# ---------------------------------------------------------------------------
# construction helpers

def _check_inertia(inertia) -> np.ndarray:
    j = np.asarray(inertia, dtype=float).reshape(3, 3)
    if not np.allclose(j, j.T, atol=1e-9 * max(1.0, abs(j).max())):
        raise ModelError("inertia matrix must be symmetric")
    if np.any(sla.eigvalsh(j) <= 0):
        raise ModelError("inertia matrix must be positive definite")
    return 0.5 * (j + j.T)


def _rigid_mass(mass: float, inertia: np.ndarray) -> np.ndarray:
    return sla.block_diag(mass * np.eye(3), inertia)


def _node_map(children) -> dict:
    out = {}
    for label, pos in dict(children).items():
        out[label] = np.asarray(pos, dtype=float).reshape(3)
    return out


# ---------------------------------------------------------------------------
# rigid body

def rigid_body_titop(name: str, mass: float, inertia, com,
                     parent=("P", (0.0, 0.0, 0.0)),
                     children: Mapping | None = None) -> TitopBlock:
    """Static two-port block of a rigid body.

    ``parent`` is ``(node_label, position)`` and ``children`` maps node
    labels to positions, all in the body frame that also locates ``com``.
    The parent wrench output is ``-tau' M_G tau xdd_P`` plus the transported
    child wrenches.
    """
    if mass <= 0:
        raise ModelError("mass must be positive")
    j = _check_inertia(inertia)
    g = np.asarray(com, dtype=float).reshape(3)
    pnode, ppos = parent
    ppos = np.asarray(ppos, dtype=float).reshape(3)
    kids = _node_map(children or {})

    tau_g = transport_matrix(ppos - g)
    m_p = tau_g.T @ _rigid_mass(mass, j) @ tau_g
    taus = {c: transport_matrix(ppos - pos) for c, pos in kids.items()}

    nin = 6 + 6 * len(kids)
    d = np.zeros((nin, nin))
    d[:6, :6] = -m_p
    for i, c in enumerate(kids):
        d[:6, 6 + 6 * i:12 + 6 * i] = taus[c].T
        d[6 + 6 * i:12 + 6 * i, :6] = taus[c]

    in_labels = list(acc_labels(name, pnode))
    out_labels = list(wrench_labels(name, pnode))
    for c in kids:
        in_labels += wrench_labels(name, c)
        out_labels += acc_labels(name, c)
    sys = StateSpace(np.zeros((0, 0)), np.zeros((0, nin)),
                     np.zeros((nin, 0)), d, in_labels, out_labels)
    return TitopBlock(name, sys, pnode, tuple(kids))


# ---------------------------------------------------------------------------
# flexible body from modal data

@dataclass(frozen=True)
class ModalData:
    """Clamped-node modal description of a flexible appendage."""

    mass: float
    inertia: np.ndarray
    com: np.ndarray
    mode_freqs: np.ndarray
    mode_damping: np.ndarray
    participation: np.ndarray  # N_modes x 6 at the clamped node

    def __post_init__(self):
        object.__setattr__(self, "inertia", _check_inertia(self.inertia))
        object.__setattr__(self, "com",
                           np.asarray(self.com, dtype=float).reshape(3))
        w = np.asarray(self.mode_freqs, dtype=float).ravel()
        z = np.asarray(self.mode_damping, dtype=float).ravel()
        lp = np.atleast_2d(np.asarray(self.participation, dtype=float))
        if self.mass <= 0:
            raise ModelError("mass must be positive")
        if np.any(w <= 0) or np.any(np.diff(w) <= 0):
            raise ModelError("mode frequencies must be positive and "
                             "strictly increasing")
        if z.shape != w.shape or np.any(z <= 0) or np.any(z >= 1):
            raise ModelError("modal damping ratios must lie in (0, 1)")
        if lp.shape != (w.size, 6):
            raise ModelError("participation matrix must be N_modes x 6")
        object.__setattr__(self, "mode_freqs", w)
        object.__setattr__(self, "mode_damping", z)
        object.__setattr__(self, "participation", lp)

    @property
    def n_modes(self) -> int:
        return self.mode_freqs.size


def flexible_titop_from_modal(name: str, data: ModalData,
                              parent=("P", (0.0, 0.0, 0.0)),
                              children: Mapping | None = None) -> TitopBlock:
    """Modal two-port block with clamped-parent / free-child boundary.

    ``children`` maps node labels to ``(position, Phi)`` where ``Phi`` is the
    N_modes x 6 participation matrix at that node, or ``None`` for a rigid
    (purely transported) connection.

    States are the modal coordinates and rates::

        eta'' + diag(2 zeta w) eta' + diag(w^2) eta = -L_P xdd_P + sum L_i W_i

    and the parent wrench is ``-(M_rigid xdd_P + L_P' eta'')`` plus the
    transported child wrenches, so the DC gain of ``acc -> -wrench`` is the
    transported rigid mass matrix regardless of the participation data.
    """
    pnode, ppos = parent
    ppos = np.asarray(ppos, dtype=float).reshape(3)
    kids = {}
    for label, spec_ in dict(children or {}).items():
        pos, phi = spec_
        pos = np.asarray(pos, dtype=float).reshape(3)
        if phi is None:
            phi = np.zeros((data.n_modes, 6))
        phi = np.atleast_2d(np.asarray(phi, dtype=float))
        if phi.shape != (data.n_modes, 6):
            raise ModelError(f"child {label!r}: participation must be "
                             f"{data.n_modes} x 6, got {phi.shape}")
        kids[label] = (pos, phi)

    n = data.n_modes
    w2 = np.diag(data.mode_freqs ** 2)
    zw = np.diag(2.0 * data.mode_damping * data.mode_freqs)
    lp = data.participation
    tau_g = transport_matrix(ppos - data.com)
    m_p = tau_g.T @ _rigid_mass(data.mass, data.inertia) @ tau_g
    taus = [transport_matrix(ppos - pos) for pos, _ in kids.values()]
    phis = [phi for _, phi in kids.values()]

    nk = len(kids)
    nin = 6 + 6 * nk
    a = np.block([[np.zeros((n, n)), np.eye(n)], [-w2, -zw]])
    # eta'' = acc_row @ x + b_row @ u
    acc_row = np.hstack([-w2, -zw])
    b_row = np.hstack([-lp] + [phi for phi in phis]) if nk else -lp
    b = np.vstack([np.zeros((n, nin)), b_row])

    c = np.zeros((nin, 2 * n))
    d = np.zeros((nin, nin))
    # parent wrench
    c[:6] = -lp.T @ acc_row
    d[:6, :6] = -m_p - lp.T @ b_row[:, :6]
    for i in range(nk):
        d[:6, 6 + 6 * i:12 + 6 * i] = (taus[i].T
                                       - lp.T @ b_row[:, 6 + 6 * i:12 + 6 * i])
    # child accelerations
    for i in range(nk):
        r = slice(6 + 6 * i, 12 + 6 * i)
        c[r] = phis[i].T @ acc_row
        d[r, :6] = taus[i] + phis[i].T @ b_row[:, :6]
        for jj in range(nk):
            d[r, 6 + 6 * jj:12 + 6 * jj] += (
                phis[i].T @ b_row[:, 6 + 6 * jj:12 + 6 * jj])

    in_labels = list(acc_labels(name, pnode))
    out_labels = list(wrench_labels(name, pnode))
    for cl in kids:
        in_labels += wrench_labels(name, cl)
        out_labels += acc_labels(name, cl)
    sys = StateSpace(a, b, c, d, in_labels, out_labels)
    return TitopBlock(name, sys, pnode, tuple(kids))


# ---------------------------------------------------------------------------
# reaction wheel

def reaction_wheel_titop(name: str, mass: float, j_axial: float,
                         j_radial: float, z_w, anchor, com=None,
                         ) -> ParametricBlock:
    """Spinning-wheel two-port block, parametric in the wheel speed Omega.

    Inputs are the anchor acceleration twist (parent frame), the motor
    torque ``u`` and a 5-channel static/dynamic imbalance wrench ``w``
    (3 forces + 2 radial torques, wheel frame).  Outputs are the wrench on
    the support at the anchor and the rotor acceleration ``Omega_dot``.
    The gyroscopic coupling enters affinely in Omega (two occurrences).
    """
    if mass <= 0 or j_axial <= 0 or j_radial <= 0:
        raise ModelError("wheel mass and inertias must be positive")
    p = np.asarray(anchor, dtype=float).reshape(3)
    g = p if com is None else np.asarray(com, dtype=float).reshape(3)
    rot = dcm_from_spin_axis(z_w)
    t_in = _blkrot(rot).T @ transport_matrix(p - g)   # acc_P -> acc_G, wheel frame
    g_out = -transport_matrix(p - g).T @ _blkrot(rot)  # [F;T] -> wrench on parent

    in_labels = (list(acc_labels(name, "P")) + [f"{name}.u"]
                 + [f"{name}.w{i}" for i in range(5)])
    out_labels = list(wrench_labels(name, "P")) + [f"{name}.Omega_dot"]

    def build(Omega: float) -> TitopBlock:
        a = -RATE_LEAK * np.eye(2)
        b = np.zeros((2, 12))
        b[:, :6] = t_in[3:5]                 # wdot_x, wdot_y
        # structure-side wrench [F; T] in the wheel frame
        s_x = np.zeros((6, 2))
        s_x[3, 1] = j_axial * Omega          # T_x += Ja*Omega*w_y
        s_x[4, 0] = -j_axial * Omega         # T_y -= Ja*Omega*w_x
        s_u = np.zeros((6, 12))
        s_u[:3, :6] = mass * t_in[:3]
        s_u[3:5, :6] = j_radial * t_in[3:5]
        s_u[5, 6] = -1.0                     # axial torque = -u
        s_u[:3, 7:10] = -np.eye(3)
        s_u[3:5, 10:12] = -np.eye(2)
        c = np.vstack([g_out @ s_x, np.zeros((1, 2))])
        d = np.vstack([g_out @ s_u, np.zeros((1, 12))])
        d[6, :6] = -t_in[5]                  # Omega_dot = -u/Ja - wdot_z
        d[6, 6] = -1.0 / j_axial
        sys = StateSpace(a, b, c, d, in_labels, out_labels)
        return TitopBlock(name, sys, "P",
                          aux_inputs=tuple(in_labels[6:]),
                          aux_outputs=(f"{name}.Omega_dot",))

    return ParametricBlock(name, ("Omega",), build,
                           meta={"anchor": p, "axis": rot[:, 2],
                                 "mass": mass, "j_axial": j_axial,
                                 "j_radial": j_radial})


def rws_pyramid(name: str, wheels: Sequence[ParametricBlock], gamma,
                anchor) -> ParametricBlock:
    """Cluster of reaction wheels summed into a single anchor port.

    ``gamma`` (3 x n_wheels) holds the unit spin axes; it must have rank 3 so
    the cluster can torque every body axis.  The returned family takes one
    speed parameter per wheel and exposes ``u0..`` motor torques,
    ``w0..`` imbalance channels (5 per wheel) and ``Omega_dot0..`` outputs.
    """
    gamma = np.asarray(gamma, dtype=float).reshape(3, len(wheels))
    norms = np.linalg.norm(gamma, axis=0)
    if not np.allclose(norms, 1.0, atol=1e-9):
        raise ModelError("spin-axis matrix columns must be unit norm")
    if np.linalg.matrix_rank(gamma, tol=1e-9) != 3:
        raise ModelError("spin-axis matrix must have rank 3")
    for k, w in enumerate(wheels):
        if not np.allclose(gamma[:, k], w.meta["axis"], atol=1e-9):
            raise ModelError(f"axis column {k} does not match wheel "
                             f"{w.name!r}")
    hub = np.asarray(anchor, dtype=float).reshape(3)
    taus = [transport_matrix(hub - w.meta["anchor"]) for w in wheels]
    nw = len(wheels)

    # static junction: distribute hub acceleration, sum transported wrenches
    j_in = list(acc_labels(name, "hub"))
    j_out = list(wrench_labels(name, "P"))
    d = np.zeros((6 + 6 * nw, 6 + 6 * nw))
    for k in range(nw):
        j_in += [f"{name}.j{k}.wr{i}" for i in range(6)]
        j_out += [f"{name}.j{k}.acc{i}" for i in range(6)]
        d[:6, 6 + 6 * k:12 + 6 * k] = taus[k].T
        d[6 + 6 * k:12 + 6 * k, :6] = taus[k]
    junction = StateSpace(np.zeros((0, 0)), np.zeros((0, d.shape[1])),
                          np.zeros((d.shape[0], 0)), d, j_in, j_out)

    params = tuple(f"Omega{k}" for k in range(nw))
    ext_in = (list(acc_labels(name, "P")) + [f"{name}.u{k}" for k in range(nw)]
              + [f"{name}.w{k}" for k in range(5 * nw)])
    ext_out = (list(wrench_labels(name, "P"))
               + [f"{name}.Omega_dot{k}" for k in range(nw)])

    def build(**speeds) -> TitopBlock:
        blocks = [junction]
        conns = []
        raw_in = list(acc_labels(name, "hub"))
        raw_out = list(wrench_labels(name, "P"))
        for k, w in enumerate(wheels):
            blk = w.at(Omega=speeds[f"Omega{k}"])
            blocks.append(blk.system)
            for i in range(6):
                conns.append((f"{name}.j{k}.acc{i}",
                              blk.parent_acc()[i], 1.0))
                conns.append((blk.parent_wrench()[i],
                              f"{name}.j{k}.wr{i}", 1.0))
            raw_in.append(f"{blk.name}.u")
        for w in wheels:
            raw_in += [f"{w.name}.w{i}" for i in range(5)]
        raw_out += [f"{w.name}.Omega_dot" for w in wheels]
        sys = interconnect(blocks, conns, raw_in, raw_out)
        sys = sys.relabeled(tuple(ext_in), tuple(ext_out))
        return TitopBlock(name, sys, "P",
                          aux_inputs=tuple(ext_in[6:]),
                          aux_outputs=tuple(ext_out[6:]))

    return ParametricBlock(name, params, build,
                           meta={"anchor": hub, "gamma": gamma,
                                 "wheels": tuple(wheels)})


# ---------------------------------------------------------------------------
# fast steering mirror

def fsm_titop(name: str, mass: float, inertia, k, d, anchor=None
              ) -> TitopBlock:
    """Steering mirror on two sprung revolute joints (x and y tilt).

    The command enters as a spring torque ``k (cmd - theta)``; damping acts
    on the relative rate.  Outputs are the reaction wrench on the support
    and the two strain-gauge tilt angles.
    """
    j = _check_inertia(inertia)
    k = np.broadcast_to(np.asarray(k, dtype=float), (2,)).copy()
    dd = np.broadcast_to(np.asarray(d, dtype=float), (2,)).copy()
    if np.any(k <= 0) or np.any(dd <= 0):
        raise ModelError("joint stiffness and damping must be positive")
    if mass <= 0:
        raise ModelError("mass must be positive")
    jaa = np.array([j[0, 0], j[1, 1]])

    # states: [theta_x, theta_y, rate_x, rate_y]
    a = np.zeros((4, 4))
    a[:2, 2:] = np.eye(2)
    a[2:, :2] = -np.diag(k / jaa)
    a[2:, 2:] = -np.diag(dd / jaa)
    b = np.zeros((4, 8))
    b[2, 3 + 0] = -1.0       # theta_x'' -= wdot_x
    b[3, 3 + 1] = -1.0
    b[2:, 6:8] = np.diag(k / jaa)

    # torque = -J (wdot + [th_x'', th_y'', 0]); force = -m a_P
    jxy = j[:, :2]
    c = np.zeros((8, 4))
    d_m = np.zeros((8, 8))
    d_m[:3, :3] = -mass * np.eye(3)
    d_m[3:6, 3:6] = -j
    c[3:6] = -jxy @ a[2:]
    d_m[3:6] += -jxy @ b[2:]
    c[6:8, :2] = np.eye(2)

    in_labels = (list(acc_labels(name, "P"))
                 + [f"{name}.cmd_x", f"{name}.cmd_y"])
    out_labels = (list(wrench_labels(name, "P"))
                  + [f"{name}.theta_x", f"{name}.theta_y"])
    sys = StateSpace(a, b, c, d_m, in_labels, out_labels)
    return TitopBlock(name, sys, "P",
                      aux_inputs=(f"{name}.cmd_x", f"{name}.cmd_y"),
                      aux_outputs=(f"{name}.theta_x", f"{name}.theta_y"))


# ---------------------------------------------------------------------------
# proof-mass actuator

def pma_titop(name: str, m: float, total_mass: float, inertia, k: float,
              d: float, axis, anchor, com=None) -> TitopBlock:
    """Proof-mass actuator: sprung mass ``m`` sliding along ``axis``.

    ``total_mass`` includes the casing; the reaction wrench combines the
    transported rigid inertia of the whole device and the proof-mass force
    along the stroke axis.  Outputs are the wrench on the mount and the
    stroke ``dx``.
    """
    if m <= 0 or total_mass <= 0 or total_mass < m:
        raise ModelError("need 0 < moving mass <= total mass")
    if k <= 0 or d <= 0:
        raise ModelError("suspension stiffness and damping must be positive")
    v = np.asarray(axis, dtype=float).reshape(3)
    nv = np.linalg.norm(v)
    if abs(nv - 1.0) > 1e-9:
        raise ModelError("stroke axis must be unit norm")
    j = _check_inertia(inertia)
    p = np.asarray(anchor, dtype=float).reshape(3)
    g = p if com is None else np.asarray(com, dtype=float).reshape(3)

    tau = transport_matrix(p - g)
    r_acc = np.concatenate([v, np.zeros(3)]) @ tau   # axis accel at G from acc_P
    v6 = np.concatenate([v, np.zeros(3)]).reshape(6, 1)
    mblk = _rigid_mass(total_mass, j)

    a = np.array([[0.0, 1.0], [-k / m, -d / m]])
    b = np.zeros((2, 7))
    b[1, :6] = -r_acc
    b[1, 6] = 1.0 / m

    c = np.zeros((7, 2))
    dmat = np.zeros((7, 7))
    tv = tau.T @ v6
    c[:6] = tv @ np.array([[k, d]])
    dmat[:6, :6] = -tau.T @ (mblk - m * (v6 @ v6.T)) @ tau
    dmat[:6, 6:] = -tv
    c[6, 0] = 1.0

    in_labels = list(acc_labels(name, "P")) + [f"{name}.u"]
    out_labels = list(wrench_labels(name, "P")) + [f"{name}.dx"]
    sys = StateSpace(a, b, c, dmat, in_labels, out_labels)
    return TitopBlock(name, sys, "P",
                      aux_inputs=(f"{name}.u",),
                      aux_outputs=(f"{name}.dx",))


# ---------------------------------------------------------------------------
# active isolator assembly

@dataclass(frozen=True)
class PmaPlacement:
    """Mount point and stroke axis of one proof-mass actuator."""

    axis: tuple
    anchor: tuple
    moving_mass: float = 2.5
    total_mass: float = 3.5
    inertia: tuple = ((7.40e-4, 0.0, 0.0),
                      (0.0, 7.40e-4, 0.0),
                      (0.0, 0.0, 3.15e-4))
    stiffness: float = 70.0
    damping: float = 10.0


def default_pma_ring(radius: float = 0.2) -> tuple[PmaPlacement, ...]:
    """Three axial plus three tangential actuators on a ring (rank-6)."""
    out = []
    for i in range(3):
        ang = 2.0 * np.pi * i / 3.0
        pos = (radius * np.cos(ang), radius * np.sin(ang), 0.0)
        out.append(PmaPlacement(axis=(0.0, 0.0, 1.0), anchor=pos))
        out.append(PmaPlacement(axis=(-np.sin(ang), np.cos(ang), 0.0),
                                anchor=pos))
    return tuple(out)


def isolator_assembly(name: str, stiffness, damping, mass: float, inertia,
                      com, pmas: Sequence[PmaPlacement],
                      payload_node=("Ip", (0.0, 0.0, 0.05)),
                      ) -> TitopBlock:
    """Active isolation stage: suspended platform plus proof-mass actuators.

    The platform hangs on a 6-DOF spring/damper from the bus-side parent
    node; the payload attaches at the child node.  Aux inputs are the six
    actuator forces, aux outputs the six strokes and the six suspension
    deflections (translations then rotations).
    """
    kmat = np.asarray(stiffness, dtype=float).reshape(6, 6)
    dmat = np.asarray(damping, dtype=float).reshape(6, 6)
    for mat, what in ((kmat, "stiffness"), (dmat, "damping")):
        if np.any(np.diag(mat) <= 0):
            raise ModelError(f"suspension {what} diagonal must be positive")
    j = _check_inertia(inertia)
    g = np.asarray(com, dtype=float).reshape(3)
    pl_label, pl_pos = payload_node
    pl_pos = np.asarray(pl_pos, dtype=float).reshape(3)
    pmas = tuple(pmas)
    if len(pmas) != 6:
        raise ModelError("isolator assembly expects exactly 6 actuators")

    # static influence of the actuator forces on the platform DOFs
    infl = np.zeros((6, 6))
    for i, pm in enumerate(pmas):
        tau_i = transport_matrix(-np.asarray(pm.anchor, dtype=float))
        infl[:, i] = tau_i.T @ np.concatenate(
            [np.asarray(pm.axis, dtype=float), np.zeros(3)])
    if np.linalg.matrix_rank(infl, tol=1e-9) != 6:
        raise ModelError("actuator placement does not control all 6 DOFs")

    tau_g = transport_matrix(-g)
    m_o = tau_g.T @ _rigid_mass(mass, j) @ tau_g
    m_inv = sla.inv(m_o)

    kid_pos = {pl_label: pl_pos}
    for i, pm in enumerate(pmas):
        kid_pos[f"m{i}"] = np.asarray(pm.anchor, dtype=float).reshape(3)
    taus = {c: transport_matrix(-pos) for c, pos in kid_pos.items()}

    # core suspended platform: states [defl(6), defl_rate(6)]
    nk = len(kid_pos)
    nin = 6 + 6 * nk
    a = np.zeros((12, 12))
    a[:6, 6:] = np.eye(6)
    a[6:, :6] = -m_inv @ kmat
    a[6:, 6:] = -m_inv @ dmat
    b = np.zeros((12, nin))
    b[6:, :6] = -np.eye(6)
    for i, c_ in enumerate(kid_pos):
        b[6:, 6 + 6 * i:12 + 6 * i] = m_inv @ taus[c_].T
    c = np.zeros((nin + 6, 12))
    d = np.zeros((nin + 6, nin))
    c[:6, :6] = kmat
    c[:6, 6:] = dmat
    # child accelerations: tau_c (xdd_B + defl'') with the base term cancelled
    plat_c = np.hstack([-m_inv @ kmat, -m_inv @ dmat])
    for i, c_ in enumerate(kid_pos):
        r = slice(6 + 6 * i, 12 + 6 * i)
        c[r] = taus[c_] @ plat_c
        for jj, c2 in enumerate(kid_pos):
            d[r, 6 + 6 * jj:12 + 6 * jj] = taus[c_] @ m_inv @ taus[c2].T
    c[nin:, :6] = np.eye(6)   # suspension deflection tap

    in_labels = list(acc_labels(name, "B"))
    out_labels = list(wrench_labels(name, "B"))
    for c_ in kid_pos:
        in_labels += wrench_labels(name, c_)
        out_labels += acc_labels(name, c_)
    out_labels += [f"{name}.defl{i}" for i in range(6)]
    core = StateSpace(a, b, c, d, in_labels, out_labels)

    blocks = [core]
    conns = []
    act_in, act_out = [], []
    for i, pm in enumerate(pmas):
        blk = pma_titop(f"{name}.pma{i}", pm.moving_mass, pm.total_mass,
                        pm.inertia, pm.stiffness, pm.damping, pm.axis,
                        pm.anchor)
        blocks.append(blk.system)
        for ii in range(6):
            conns.append((f"{name}.m{i}.acc{ii}",
                          blk.parent_acc()[ii], 1.0))
            conns.append((blk.parent_wrench()[ii],
                          f"{name}.m{i}.wr{ii}", 1.0))
        act_in.append(f"{name}.pma{i}.u")
        act_out.append(f"{name}.pma{i}.dx")

    ext_in = (list(acc_labels(name, "B")) + list(wrench_labels(name, pl_label))
              + act_in)
    ext_out = (list(wrench_labels(name, "B"))
               + list(acc_labels(name, pl_label)) + act_out
               + [f"{name}.defl{i}" for i in range(6)])
    sys = interconnect(blocks, conns, ext_in, ext_out)
    new_in = (list(acc_labels(name, "B"))
              + list(wrench_labels(name, pl_label))
              + [f"{name}.u{i}" for i in range(6)])
    new_out = (list(wrench_labels(name, "B"))
               + list(acc_labels(name, pl_label))
               + [f"{name}.dx{i}" for i in range(6)]
               + [f"{name}.defl{i}" for i in range(6)])
    sys = sys.relabeled(tuple(new_in), tuple(new_out))
    return TitopBlock(name, sys, "B", (pl_label,),
                      aux_inputs=tuple(new_in[12:]),
                      aux_outputs=tuple(new_out[12:]))


# ---------------------------------------------------------------------------
# solar-array drive joint

def sadm_joint(name: str, gearbox_stiffness: float, damping: float,
               tau: float = 0.0, axis=(0.0, 1.0, 0.0),
               shaft_inertia: float = 1e-4) -> TitopBlock:
    """Compliant one-axis revolute transmission (drive-mechanism joint).

    The array-side child frame is rotated about the drive axis by the angle
    whose quarter tangent is ``tau``; the axis torque passes through the
    gearbox spring/damper while the off-axis wrench is transmitted rigidly.
    ``w_sa`` is a drive-torque disturbance applied between the housing and
    the shaft (action on the shaft, reaction on the bus), so it exerts no
    net external torque on the assembly.  A small shaft inertia keeps the
    transmission dynamics well-posed.
    """
    if gearbox_stiffness <= 0 or damping <= 0 or shaft_inertia <= 0:
        raise ModelError("gearbox parameters must be positive")
    a_axis = np.asarray(axis, dtype=float).reshape(3)
    a_axis = a_axis / np.linalg.norm(a_axis)
    rot = dcm_from_quarter_tangent(a_axis, tau)
    rr = _blkrot(rot)
    kg, dg, jm = gearbox_stiffness, damping, shaft_inertia

    # inputs: acc_P(6, bus frame), W_S(6, array frame), w_sa(1)
    # states: [phi, phi_rate]
    t_row = np.concatenate([np.zeros(3), a_axis]) @ rr   # axis torque from W_S
    a = np.array([[0.0, 1.0], [-kg / jm, -dg / jm]])
    b = np.zeros((2, 13))
    b[1, 3:6] = -a_axis                 # relative coordinate: -wdot_axis
    b[1, 6:12] = t_row / jm
    b[1, 12] = 1.0 / jm

    av6 = np.concatenate([np.zeros(3), a_axis]).reshape(6, 1)
    c = np.zeros((13, 2))
    d = np.zeros((13, 13))
    # wrench on the bus; the drive torque is an internal action-reaction
    # pair, so the housing sees -w_sa about the axis
    d[:6, 6:12] = rr - av6 @ t_row.reshape(1, 6)
    d[:6, 12] = -av6.ravel()
    c[:6] = av6 @ np.array([[kg, dg]])
    # array-side acceleration: R' acc_P + [0; a] phi''
    phidd_c = a[1].reshape(1, 2)
    phidd_d = b[1].reshape(1, 13)
    d[6:12, :6] = rr.T
    d[6:12] += av6 @ phidd_d
    c[6:12] = av6 @ phidd_c
    # relative angle tap
    c[12, 0] = 1.0

    in_labels = (list(acc_labels(name, "P")) + list(wrench_labels(name, "S"))
                 + [f"{name}.w_sa"])
    out_labels = (list(wrench_labels(name, "P"))
                  + list(acc_labels(name, "S")) + [f"{name}.phi"])
    sys = StateSpace(a, b, c, d, in_labels, out_labels)
    return TitopBlock(name, sys, "P", ("S",),
                      aux_inputs=(f"{name}.w_sa",),
                      aux_outputs=(f"{name}.phi",))


# ---------------------------------------------------------------------------
# frame rotation of whole blocks

def rotate_block(block: TitopBlock, r) -> TitopBlock:
    """Re-express every port of a block in a rotated frame.

    ``r`` maps old-frame vectors to new-frame vectors; auxiliary channels
    are left untouched.  Singular values of every transfer are preserved.
    """
    r = np.asarray(r, dtype=float).reshape(3, 3)
    if (np.abs(r.T @ r - np.eye(3)).max() > 1e-9
            or np.linalg.det(r) < 0):
        raise ModelError("frame rotation must be a proper orthonormal matrix")
    rr = _blkrot(r)
    sys = block.system
    t_in = np.eye(sys.n_inputs)
    t_out = np.eye(sys.n_outputs)
    port_ins = [block.parent_acc()] + [block.child_wrench(c)
                                       for c in block.child_nodes]
    port_outs = [block.parent_wrench()] + [block.child_acc(c)
                                           for c in block.child_nodes]
    for labels in port_ins:
        i0 = sys.input_index(labels[0])
        t_in[i0:i0 + 6, i0:i0 + 6] = rr.T   # new-frame input -> old frame
    for labels in port_outs:
        i0 = sys.output_index(labels[0])
        t_out[i0:i0 + 6, i0:i0 + 6] = rr
    new = StateSpace(sys.A, sys.B @ t_in, t_out @ sys.C, t_out @ sys.D @ t_in,
                     sys.input_labels, sys.output_labels)
    return TitopBlock(block.name, new, block.parent_node, block.child_nodes,
                      block.aux_inputs, block.aux_outputs)
