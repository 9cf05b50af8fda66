"""Residual and Newton-matrix assembly of the stabilized space-time weak form.

Unknowns are node-major: node k carries (u_1..u_{n_sd}, p) at dofs
k*(n_sd+1) .. k*(n_sd+1)+n_sd.  The weak form combines the Galerkin
transient/convection term, the stress and continuity terms, the jump term
on the bottom cap, a GLS momentum term (with the full operator including
pressure gradient and, on tensor-product elements, second spatial
derivatives), a grad-div continuity stabilization and a traction term on
Neumann mantle facets.  Dirichlet conditions are imposed by identity rows;
tau is frozen at the current iterate (Picard treatment), everything else is
linearized exactly.

Two element families share the kernels: space-time simplices (constant
gradients, the strong viscous operator vanishes for P1) and tensor-product
prisms between two time levels (pointwise geometry; the viscous operator is
retained where nonzero).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .errors import (ConfigurationError, MissingPreviousState,
                     NonFiniteResidual)
from .mesh import SimplexMesh, SpaceTimeMesh, basis_eval, reference_gradients
from .quadrature import interval_gauss, prism_quadrature, simplex_quadrature
from .stabilization import (StabilizationContext, prism_geometry,
                            regular_simplex_map, stabilization_for_mesh)


@dataclass
class MaterialParams:
    """Constant density and dynamic viscosity."""
    rho: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        if self.rho <= 0.0 or self.mu < 0.0:
            raise ConfigurationError("need rho > 0 and mu >= 0")

    @property
    def nu(self) -> float:
        return self.mu / self.rho


@dataclass
class BCSpec:
    """Boundary and initial data.

    ``dirichlet`` and ``neumann`` map boundary tags to functions
    fn(x, t) -> (n, n_sd) with x of shape (n, n_sd); ``initial`` maps
    fn(x) -> (n, n_sd).  Dirichlet and Neumann tag sets must be disjoint.
    """
    dirichlet: dict = dc_field(default_factory=dict)
    neumann: dict = dc_field(default_factory=dict)
    initial: object = None

    def __post_init__(self):
        overlap = set(self.dirichlet) & set(self.neumann)
        if overlap:
            raise ConfigurationError(
                f"tags with both Dirichlet and Neumann data: {sorted(overlap)}")


class SolutionField:
    """Nodal velocity + pressure unknowns on a mesh."""

    def __init__(self, values: np.ndarray, n_sd: int):
        self.values = np.asarray(values, dtype=float)
        self.n_sd = n_sd
        if self.values.ndim != 2 or self.values.shape[1] != n_sd + 1:
            raise ValueError("values must be (n_nodes, n_sd+1)")

    @classmethod
    def zeros(cls, n_nodes: int, n_sd: int) -> "SolutionField":
        return cls(np.zeros((n_nodes, n_sd + 1)), n_sd)

    @property
    def velocity(self) -> np.ndarray:
        return self.values[:, : self.n_sd]

    @property
    def pressure(self) -> np.ndarray:
        return self.values[:, self.n_sd]

    def copy(self) -> "SolutionField":
        return SolutionField(self.values.copy(), self.n_sd)


@dataclass
class LinearSystem:
    """Newton system: matrix @ delta = rhs, rhs = -(residual) with Dirichlet
    rows replaced by identity rows carrying (prescribed - current)."""
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_sd: int


def zero_velocity(x, t=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.zeros_like(x)


def rigid_surface_velocity(omega: float, center, axis=(0.0, 0.0, 1.0)):
    """Instantaneous rigid-body surface velocity omega x (x - center)."""
    center = np.asarray(center, dtype=float)
    axis = np.asarray(axis, dtype=float)

    def fn(x, t=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n_sd = x.shape[1]
        d = x - center[:n_sd]
        if n_sd == 2:
            return omega * np.column_stack([-d[:, 1], d[:, 0]])
        w = omega * axis
        return np.cross(np.broadcast_to(w, d.shape), d)

    return fn


# -- element kernels ---------------------------------------------------------

def _element_terms(Nq, wdet, D, B, VV, x_q, Ue, rho, mu, tau_m, tau_c,
                   body_force, convective, want_matrix):
    """Shared volume kernel for one chunk of elements.

    Nq: (nq, nen) shape values; wdet: (E, nq) weight*|detJ|;
    D: (E, nq, nen, n_sd) spatial gradients; B: (E, nq, nen) time
    derivatives; VV: None or (E, nq, nen, n_sd, n_sd) strong viscous
    operator mu*(lap N delta_ij + d2N/dxidxj); x_q: (E, nq, dim);
    Ue: (E, nen, ncomp).  Returns (Re, Ke) with Ke None when not requested.
    """
    def ein(*args):
        return np.einsum(*args, optimize=True)

    E, nq, nen, n_sd = D.shape
    nc = n_sd + 1
    Uv = Ue[:, :, :n_sd]
    Up = Ue[:, :, n_sd]

    u_q = ein("qa,eai->eqi", Nq, Uv)
    p_q = ein("qa,ea->eq", Nq, Up)
    gradu = ein("eqaj,eai->eqij", D, Uv)
    dudt = ein("eqa,eai->eqi", B, Uv)
    gradp = ein("eqaj,ea->eqj", D, Up)
    divu = ein("eqii->eq", gradu)

    if body_force is None:
        f_q = 0.0
        acc = dudt.copy()
    else:
        xt = x_q.reshape(-1, x_q.shape[-1])
        f_q = np.asarray(body_force(xt[:, :n_sd], xt[:, n_sd])).reshape(E, nq, n_sd)
        acc = dudt - f_q
    if convective:
        acc = acc + ein("eqj,eqij->eqi", u_q, gradu)
        adv = B + ein("eqj,eqaj->eqa", u_q, D)
    else:
        adv = np.broadcast_to(B, (E, nq, nen))

    r_q = rho * acc + gradp
    if VV is not None:
        r_q = r_q - ein("eqaij,eaj->eqi", VV, Uv)

    Re = np.zeros((E, nen, nc))
    # Galerkin transient + convection + body force
    Re[:, :, :n_sd] += rho * ein("eq,qa,eqi->eai", wdet, Nq, acc)
    # stress: 2 mu eps(w):eps(u) - p div w
    Re[:, :, :n_sd] += mu * ein("eq,eqaj,eqij->eai", wdet, D,
                                      gradu + np.swapaxes(gradu, 2, 3))
    Re[:, :, :n_sd] -= ein("eq,eq,eqai->eai", wdet, p_q, D)
    # continuity
    Re[:, :, n_sd] += ein("eq,qa,eq->ea", wdet, Nq, divu)
    # GLS momentum: weight rho(dw/dt + u.grad w) part
    Re[:, :, :n_sd] += ein("e,eq,eqa,eqi->eai", tau_m, wdet, adv, r_q)
    if VV is not None:
        Re[:, :, :n_sd] -= ein("e,eq,eqami,eqm->eai",
                                     tau_m / rho, wdet, VV, r_q)
    # GLS momentum: pressure-test part (PSPG-like)
    Re[:, :, n_sd] += ein("e,eq,eqai,eqi->ea", tau_m / rho, wdet, D, r_q)
    # grad-div
    Re[:, :, :n_sd] += rho * ein("e,eq,eqai,eq->eai", tau_c, wdet, D, divu)

    if not want_matrix:
        return Re, None

    eye = np.eye(n_sd)
    Ke = np.zeros((E, nen, nc, nen, nc))
    # d(strong residual)/dU (velocity block), without viscous part
    drdu_rho = rho * (ein("eqb,ij->eqibj", adv, eye)
                      + (ein("qb,eqij->eqibj", Nq, gradu)
                         if convective else 0.0))
    drdu = drdu_rho if VV is None else drdu_rho - ein("eqbmj->eqmbj", VV)

    # Galerkin
    Ke[:, :, :n_sd, :, :n_sd] += ein("eq,qa,eqibj->eaibj",
                                           wdet, Nq, drdu_rho)
    # stress
    Ke[:, :, :n_sd, :, :n_sd] += mu * (
        ein("eq,eqak,eqbk,ij->eaibj", wdet, D, D, eye)
        + ein("eq,eqaj,eqbi->eaibj", wdet, D, D))
    Ke[:, :, :n_sd, :, n_sd] -= ein("eq,qb,eqai->eaib", wdet, Nq, D)
    # continuity
    Ke[:, :, n_sd, :, :n_sd] += ein("eq,qa,eqbj->eabj", wdet, Nq, D)
    # GLS, velocity test rows
    Ke[:, :, :n_sd, :, :n_sd] += ein("e,eq,eqa,eqibj->eaibj",
                                           tau_m, wdet, adv, drdu)
    Ke[:, :, :n_sd, :, n_sd] += ein("e,eq,eqa,eqbi->eaib",
                                          tau_m, wdet, adv, D)
    if VV is not None:
        Ke[:, :, :n_sd, :, :n_sd] -= ein("e,eq,eqami,eqmbj->eaibj",
                                               tau_m / rho, wdet, VV, drdu)
        Ke[:, :, :n_sd, :, n_sd] -= ein("e,eq,eqami,eqbm->eaib",
                                              tau_m / rho, wdet, VV, D)
    if convective:  # linearization of u inside the GLS weight
        Ke[:, :, :n_sd, :, :n_sd] += ein("e,eq,qb,eqaj,eqi->eaibj",
                                               tau_m, wdet, Nq, D, r_q)
    # GLS, pressure test rows
    Ke[:, :, n_sd, :, :n_sd] += ein("e,eq,eqam,eqmbj->eabj",
                                          tau_m / rho, wdet, D, drdu)
    Ke[:, :, n_sd, :, n_sd] += ein("e,eq,eqam,eqbm->eab",
                                         tau_m / rho, wdet, D, D)
    # grad-div
    Ke[:, :, :n_sd, :, :n_sd] += rho * ein("e,eq,eqai,eqbj->eaibj",
                                                 tau_c, wdet, D, D)
    return Re, Ke


def _facet_simplex_rule(n_facet_dim: int):
    if n_facet_dim == 1:
        return interval_gauss(2)
    return simplex_quadrature(n_facet_dim, 2)


def _embedded_measure_factor(coords):
    """sqrt(det(E^T E)) for edge matrices of facets embedded in higher dim.

    coords: (n_f, m, d) facet node coordinates with m-1 <= d.
    """
    edges = coords[:, 1:, :] - coords[:, :1, :]
    gram = np.einsum("nid,njd->nij", edges, edges)
    return np.sqrt(np.abs(np.linalg.det(gram)))


class _ProblemBase:
    """Shared Dirichlet/gauge handling and global scatter."""

    n_sd: int
    n_nodes: int

    @property
    def ncomp(self) -> int:
        return self.n_sd + 1

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.ncomp

    def _init_constraints(self, dirichlet_nodes_by_tag, gauge):
        nc = self.ncomp
        self.dir_mask = np.zeros(self.n_dofs, dtype=bool)
        self.dir_values = np.zeros(self.n_dofs)
        for tag in sorted(dirichlet_nodes_by_tag):
            nodes, values = dirichlet_nodes_by_tag[tag]
            for c in range(self.n_sd):
                dofs = nodes * nc + c
                self.dir_mask[dofs] = True
                self.dir_values[dofs] = values[:, c]
        if gauge is not None:
            if isinstance(gauge, tuple):
                gauge = [gauge]
            for node, value in gauge:
                dof = node * nc + self.n_sd
                self.dir_mask[dof] = True
                self.dir_values[dof] = value
        self.dir_dofs = np.flatnonzero(self.dir_mask)

    def impose_dirichlet(self, values: np.ndarray) -> np.ndarray:
        out = values.reshape(-1).copy()
        out[self.dir_dofs] = self.dir_values[self.dir_dofs]
        return out.reshape(self.n_nodes, self.ncomp)

    def initial_guess(self) -> np.ndarray:
        """Initial-condition field extended constantly in time, BCs imposed."""
        vals = np.zeros((self.n_nodes, self.ncomp))
        u0 = self._initial_velocity_at_nodes()
        if u0 is not None:
            vals[:, : self.n_sd] = u0
        return self.impose_dirichlet(vals)

    def _finish_system(self, R, coo_rows, coo_cols, coo_data, values,
                       want_matrix):
        if not np.isfinite(R).all():
            raise NonFiniteResidual("residual contains non-finite entries")
        rhs = -R
        rhs[self.dir_dofs] = (self.dir_values[self.dir_dofs]
                              - values.reshape(-1)[self.dir_dofs])
        norm = float(np.linalg.norm(rhs))
        if not want_matrix:
            return None, rhs, norm
        rows = np.concatenate(coo_rows)
        cols = np.concatenate(coo_cols)
        data = np.concatenate(coo_data)
        data[self.dir_mask[rows]] = 0.0
        rows = np.concatenate([rows, self.dir_dofs.astype(rows.dtype)])
        cols = np.concatenate([cols, self.dir_dofs.astype(cols.dtype)])
        data = np.concatenate([data, np.ones(len(self.dir_dofs))])
        A = sp.coo_matrix((data, (rows, cols)),
                          shape=(self.n_dofs, self.n_dofs)).tocsr()
        return A, rhs, norm

    # interface used by the Newton solver
    def system(self, values, tau_override=None, want_matrix=True):
        raise NotImplementedError

    def residual_norm(self, values, tau_override=None) -> float:
        return self.system(values, tau_override=tau_override,
                           want_matrix=False)[2]


class SpaceTimeProblem(_ProblemBase):
    """Stabilized weak form on a simplex space-time mesh (UST mode)."""

    def __init__(self, mesh: SpaceTimeMesh, material: MaterialParams,
                 bcs: BCSpec, body_force=None, convective=True,
                 gauge=None, jump_data=None, C_I: float = 1.0):
        self.mesh = mesh
        self.material = material
        self.bcs = bcs
        self.body_force = body_force
        self.convective = convective
        self.C_I = C_I
        self.n_sd = mesh.n_sd
        self.n_nodes = mesh.n_nodes
        self.jump_data = jump_data  # None -> bcs.initial; or nodal array

        known = set(mesh.tag_names)
        for tag in list(bcs.dirichlet) + list(bcs.neumann):
            if tag not in known:
                raise ConfigurationError(f"unknown boundary tag {tag!r}")

        nc = self.ncomp
        nen = mesh.dim + 1
        self.edof = (mesh.elements[:, :, None] * nc
                     + np.arange(nc)[None, None, :]).reshape(-1, nen * nc)

        rule = simplex_quadrature(mesh.dim, 2)
        self.qpts, self.qwts = rule.points, rule.weights
        self.Nq = basis_eval(self.qpts, mesh.dim)

        dir_nodes = {}
        for tag, fn in bcs.dirichlet.items():
            fidx = mesh.facets_with_tag(tag)
            fidx = fidx[np.isin(fidx, mesh.mantle_facets)]
            nodes = np.unique(mesh.boundary_facets[fidx])
            x = mesh.nodes[nodes]
            dir_nodes[tag] = (nodes, np.asarray(fn(x[:, : self.n_sd],
                                                   x[:, self.n_sd])))
        self._init_constraints(dir_nodes, gauge)

        self._stab_cache = None

    def _initial_velocity_at_nodes(self):
        if self.bcs.initial is None:
            return None
        return np.asarray(self.bcs.initial(self.mesh.spatial_coords))

    def stabilization(self, values: np.ndarray) -> StabilizationContext:
        if self.convective:
            u_bary = values[self.mesh.elements, : self.n_sd].mean(axis=1)
        else:
            # Stokes limit: tau must not depend on the iterate so the
            # system stays exactly linear
            u_bary = np.zeros((self.mesh.n_elements, self.n_sd))
        if not hasattr(self, "_metric"):
            from .stabilization import mesh_metric
            self._metric = mesh_metric(self.mesh)
        return stabilization_for_mesh(self.mesh, u_bary, self.material.nu,
                                      self.C_I, metric=self._metric)

    def system(self, values, tau_override=None, want_matrix=True):
        mesh = self.mesh
        n_sd, nc = self.n_sd, self.ncomp
        nen = mesh.dim + 1
        nloc = nen * nc
        rho, mu = self.material.rho, self.material.mu
        values = np.asarray(values, dtype=float).reshape(self.n_nodes, nc)

        stab = tau_override or self.stabilization(values)
        tau_m, tau_c = stab.tau_mom, stab.tau_cont

        R = np.zeros(self.n_dofs)
        rows_list, cols_list, data_list = [], [], []

        grads = mesh.gradients
        D_all = grads[:, :, :n_sd]
        B_all = grads[:, :, n_sd]
        detJ = np.abs(mesh.jacobian_dets)
        Xe = mesh.element_coords
        x_q_all = np.einsum("qa,ead->eqd", self.Nq, Xe)
        nq = len(self.qwts)

        chunk = max(1, int(6.0e6 / (nloc * nloc)))
        for lo in range(0, mesh.n_elements, chunk):
            hi = min(lo + chunk, mesh.n_elements)
            sl = slice(lo, hi)
            E = hi - lo
            wdet = self.qwts[None, :] * detJ[sl, None]
            D = np.broadcast_to(D_all[sl, None], (E, nq, nen, n_sd))
            B = np.broadcast_to(B_all[sl, None], (E, nq, nen))
            Ue = values[mesh.elements[sl]]
            Re, Ke = _element_terms(self.Nq, wdet, D, B, None, x_q_all[sl],
                                    Ue, rho, mu, tau_m[sl], tau_c[sl],
                                    self.body_force, self.convective,
                                    want_matrix)
            edof = self.edof[sl]
            np.add.at(R, edof.ravel(), Re.reshape(-1))
            if want_matrix:
                rows_list.append(np.broadcast_to(
                    edof[:, :, None], (E, nloc, nloc)).ravel().astype(np.int32))
                cols_list.append(np.broadcast_to(
                    edof[:, None, :], (E, nloc, nloc)).ravel().astype(np.int32))
                data_list.append(Ke.reshape(E, nloc, nloc).ravel())

        self._add_jump(values, R, rows_list, cols_list, data_list, want_matrix)
        self._add_traction(R)

        A, rhs, norm = self._finish_system(R, rows_list, cols_list, data_list,
                                           values, want_matrix)
        if not want_matrix:
            return None, rhs, norm
        return LinearSystem(A, rhs, n_sd), rhs, norm

    def _bottom_facet_data(self):
        mesh = self.mesh
        ids = mesh.boundary_facets[mesh.bottom_facets]
        coords = mesh.nodes[ids][:, :, : self.n_sd]
        J = np.swapaxes(coords[:, 1:, :] - coords[:, :1, :], 1, 2)
        det = np.abs(np.linalg.det(J))
        return ids, coords, det

    def _add_jump(self, values, R, rows_list, cols_list, data_list,
                  want_matrix):
        mesh = self.mesh
        n_sd, nc = self.n_sd, self.ncomp
        if self.jump_data is None and self.bcs.initial is None:
            raise MissingPreviousState(
                "jump term needs an initial condition or previous trace")
        ids, coords, det = self._bottom_facet_data()
        nf, m = ids.shape  # m = n_sd + 1 nodes per bottom facet
        rule = simplex_quadrature(n_sd, 2)
        Nf = basis_eval(rule.points, n_sd)               # (nq, m)
        wdet = rule.weights[None, :] * det[:, None]      # (nf, nq)
        rho = self.material.rho

        u_plus = values[ids, :n_sd]                      # (nf, m, n_sd)
        # facet mass matrix via the degree-2 rule
        Mq = np.einsum("fq,qa,qb->fab", wdet, Nf, Nf)
        Rloc = rho * np.einsum("fab,fbi->fai", Mq, u_plus)
        if self.jump_data is not None:
            u_minus = np.asarray(self.jump_data)[ids]
            Rloc -= rho * np.einsum("fab,fbi->fai", Mq, u_minus)
        else:
            x_q = np.einsum("qa,fad->fqd", Nf, coords)
            u0 = np.asarray(self.bcs.initial(x_q.reshape(-1, n_sd)))
            u0 = u0.reshape(nf, len(rule.weights), n_sd)
            Rloc -= rho * np.einsum("fq,qa,fqi->fai", wdet, Nf, u0)

        vdofs = ids[:, :, None] * nc + np.arange(n_sd)[None, None, :]
        np.add.at(R, vdofs.ravel(), Rloc.reshape(-1))
        if want_matrix:
            Kf = rho * np.einsum("fab,ij->faibj", Mq, np.eye(n_sd))
            rows = np.broadcast_to(vdofs[:, :, :, None, None],
                                   Kf.shape).ravel().astype(np.int32)
            cols = np.broadcast_to(vdofs[:, None, None, :, :],
                                   Kf.shape).ravel().astype(np.int32)
            rows_list.append(rows)
            cols_list.append(cols)
            data_list.append(Kf.ravel())

    def _add_traction(self, R):
        mesh = self.mesh
        n_sd, nc = self.n_sd, self.ncomp
        for tag, fn in self.bcs.neumann.items():
            fidx = mesh.facets_with_tag(tag)
            fidx = fidx[np.isin(fidx, mesh.mantle_facets)]
            if len(fidx) == 0:
                continue
            ids = mesh.boundary_facets[fidx]
            coords = mesh.nodes[ids]                     # (nf, m, dim)
            rule = _facet_simplex_rule(mesh.dim - 1)
            Nf = basis_eval(rule.points, mesh.dim - 1)
            area = _embedded_measure_factor(coords)
            # reference weights sum to 1/(dim-1)!; area factor rescales them
            wdet = rule.weights[None, :] * area[:, None]
            x_q = np.einsum("qa,fad->fqd", Nf, coords)
            h = np.asarray(fn(x_q[..., :n_sd].reshape(-1, n_sd),
                              x_q[..., n_sd].reshape(-1)))
            h = h.reshape(len(ids), -1, n_sd)
            Rloc = -np.einsum("fq,qa,fqi->fai", wdet, Nf, h)
            vdofs = ids[:, :, None] * nc + np.arange(n_sd)[None, None, :]
            np.add.at(R, vdofs.ravel(), Rloc.reshape(-1))


@dataclass
class PrismSlab:
    """Tensor-product slab between two time levels of a moving spatial mesh."""
    spatial: SimplexMesh
    coords_bottom: np.ndarray  # (n_sp, n_sd) node positions at t_bottom
    coords_top: np.ndarray     # (n_sp, n_sd) node positions at t_bottom + dt
    t_bottom: float
    dt: float

    @property
    def n_sd(self) -> int:
        return self.spatial.dim

    @property
    def n_nodes(self) -> int:
        return 2 * self.spatial.n_nodes

    def node_coords(self) -> np.ndarray:
        """(2*n_sp, n_sd+1) space-time coordinates, bottom block first."""
        n_sp, n_sd = self.coords_bottom.shape
        out = np.empty((2 * n_sp, n_sd + 1))
        out[:n_sp, :n_sd] = self.coords_bottom
        out[:n_sp, n_sd] = self.t_bottom
        out[n_sp:, :n_sd] = self.coords_top
        out[n_sp:, n_sd] = self.t_bottom + self.dt
        return out


class PrismSlabProblem(_ProblemBase):
    """Stabilized weak form on one tensor-product slab (slab/ALE mode)."""

    def __init__(self, slab: PrismSlab, material: MaterialParams, bcs: BCSpec,
                 body_force=None, convective=True, gauge=None,
                 jump_data=None, C_I: float = 1.0):
        self.slab = slab
        self.material = material
        self.bcs = bcs
        self.body_force = body_force
        self.convective = convective
        self.C_I = C_I
        self.n_sd = slab.n_sd
        self.n_nodes = slab.n_nodes
        self.jump_data = jump_data  # (n_sp, n_sd) nodal trace, or None -> IC

        spatial = slab.spatial
        known = set(spatial.tag_names)
        for tag in list(bcs.dirichlet) + list(bcs.neumann):
            if tag not in known:
                raise ConfigurationError(f"unknown boundary tag {tag!r}")

        n_sp = spatial.n_nodes
        nc = self.ncomp
        self.elements = np.hstack([spatial.elements, spatial.elements + n_sp])
        nen = self.elements.shape[1]
        self.edof = (self.elements[:, :, None] * nc
                     + np.arange(nc)[None, None, :]).reshape(-1, nen * nc)

        self.rule = prism_quadrature(self.n_sd, 2)

        node_xt = slab.node_coords()
        dir_nodes = {}
        for tag, fn in bcs.dirichlet.items():
            snodes = np.unique(spatial.boundary_facets[spatial.facets_with_tag(tag)])
            nodes = np.concatenate([snodes, snodes + n_sp])
            x = node_xt[nodes]
            dir_nodes[tag] = (nodes, np.asarray(fn(x[:, : self.n_sd],
                                                   x[:, self.n_sd])))
        self._init_constraints(dir_nodes, gauge)

    def _initial_velocity_at_nodes(self):
        if self.jump_data is not None:
            prev = np.asarray(self.jump_data)
            return np.vstack([prev, prev])
        if self.bcs.initial is None:
            return None
        xt = self.slab.node_coords()
        return np.asarray(self.bcs.initial(xt[:, : self.n_sd]))

    def _geometry(self):
        """Per-qpoint geometry arrays for all prisms (cached)."""
        if hasattr(self, "_geom"):
            return self._geom
        slab = self.slab
        n_sd = self.n_sd
        els = slab.spatial.elements
        cb = slab.coords_bottom[els]
        ct = slab.coords_top[els]
        nq = len(self.rule.weights)
        E = len(els)
        nen = 2 * (n_sd + 1)

        x_q = np.empty((E, nq, n_sd + 1))
        detJ = np.empty((E, nq))
        grads = np.empty((E, nq, nen, n_sd + 1))
        VV = np.empty((E, nq, nen, n_sd, n_sd))
        Gs = reference_gradients(n_sd)
        # map curvature: d2x_m / dxi_d dtheta, constant per element
        T = np.einsum("ad,nam->nmd", Gs, ct - cb)
        mu = self.material.mu

        for q, (pt, w) in enumerate(zip(self.rule.points, self.rule.weights)):
            xi, th = pt[:n_sd], pt[n_sd]
            x, J, dJ, g = prism_geometry(cb, ct, slab.t_bottom, slab.dt, xi, th)
            x_q[:, q] = x
            detJ[:, q] = np.abs(dJ)
            grads[:, q] = g
            Jinv = np.linalg.inv(J)
            # reference Hessian entries (d, theta) of the shape functions
            Ha = np.concatenate([-Gs, Gs], axis=0)            # (nen, n_sd)
            inner = Ha[None] - np.einsum("nam,nmd->nad", g[:, :, :n_sd], T)
            Ji_sp = Jinv[:, :n_sd, :n_sd]   # dxi_d / dx_i (spatial cols)
            Ji_th = Jinv[:, n_sd, :n_sd]    # dtheta / dx_i
            S = (np.einsum("nad,ndi,nj->naij", inner, Ji_sp, Ji_th)
                 + np.einsum("nad,ndj,ni->naij", inner, Ji_sp, Ji_th))
            lap = np.einsum("naii->na", S)
            VV[:, q] = mu * (np.einsum("na,ij->naij", lap, np.eye(n_sd)) + S)
        self._geom = (x_q, detJ, grads, VV)
        return self._geom

    def stabilization(self, values: np.ndarray) -> StabilizationContext:
        """Metric at the element center; spatial block composed with the
        regular-simplex map, temporal coordinate kept as theta."""
        slab = self.slab
        n_sd = self.n_sd
        els = slab.spatial.elements
        cb = slab.coords_bottom[els]
        ct = slab.coords_top[els]
        center = np.full(n_sd, 1.0 / (n_sd + 1))
        _, J, _, _ = prism_geometry(cb, ct, slab.t_bottom, slab.dt, center, 0.5)
        Bmat = np.zeros((n_sd + 1, n_sd + 1))
        Bmat[:n_sd, :n_sd] = regular_simplex_map(n_sd)
        Bmat[n_sd, n_sd] = 1.0
        A = np.einsum("ij,njk->nik", Bmat, np.linalg.inv(J))
        Ginv = np.einsum("nki,nkj->nij", A, A)
        g = A.sum(axis=1)[:, :n_sd]
        GG = np.einsum("nij,nij->n", Ginv, Ginv)
        gg = (g * g).sum(axis=1)

        values = values.reshape(self.n_nodes, self.ncomp)
        uhat = np.ones((len(els), n_sd + 1))
        if self.convective:
            uhat[:, :n_sd] = values[self.elements, :n_sd].mean(axis=1)
        else:
            uhat[:, :n_sd] = 0.0
        nu = self.material.nu
        val = np.einsum("ni,nij,nj->n", uhat, Ginv, uhat) + self.C_I * nu * nu * GG
        tau_m = val ** -0.5
        tau_c = 1.0 / (tau_m * gg)
        return StabilizationContext(Ginv, g, tau_m, tau_c, self.C_I)

    def system(self, values, tau_override=None, want_matrix=True):
        slab = self.slab
        n_sd, nc = self.n_sd, self.ncomp
        nen = 2 * (n_sd + 1)
        nloc = nen * nc
        rho, mu = self.material.rho, self.material.mu
        values = np.asarray(values, dtype=float).reshape(self.n_nodes, nc)

        stab = tau_override or self.stabilization(values)
        tau_m, tau_c = stab.tau_mom, stab.tau_cont

        x_q, detJ, grads, VV = self._geometry()
        nq = len(self.rule.weights)
        Nq = np.column_stack([basis_eval(self.rule.points[:, :n_sd], n_sd)
                              * (1.0 - self.rule.points[:, n_sd:]),
                              basis_eval(self.rule.points[:, :n_sd], n_sd)
                              * self.rule.points[:, n_sd:]])

        R = np.zeros(self.n_dofs)
        rows_list, cols_list, data_list = [], [], []
        n_el = len(self.elements)
        chunk = max(1, int(4.0e6 / (nloc * nloc)))
        for lo in range(0, n_el, chunk):
            hi = min(lo + chunk, n_el)
            sl = slice(lo, hi)
            wdet = self.rule.weights[None, :] * detJ[sl]
            Ue = values[self.elements[sl]]
            Re, Ke = _element_terms(Nq, wdet, grads[sl, :, :, :n_sd],
                                    grads[sl, :, :, n_sd], VV[sl], x_q[sl],
                                    Ue, rho, mu, tau_m[sl], tau_c[sl],
                                    self.body_force, self.convective,
                                    want_matrix)
            edof = self.edof[sl]
            np.add.at(R, edof.ravel(), Re.reshape(-1))
            if want_matrix:
                E = hi - lo
                rows_list.append(np.broadcast_to(
                    edof[:, :, None], (E, nloc, nloc)).ravel().astype(np.int32))
                cols_list.append(np.broadcast_to(
                    edof[:, None, :], (E, nloc, nloc)).ravel().astype(np.int32))
                data_list.append(Ke.reshape(E, nloc, nloc).ravel())

        self._add_jump(values, R, rows_list, cols_list, data_list, want_matrix)
        self._add_traction(R)

        A, rhs, norm = self._finish_system(R, rows_list, cols_list, data_list,
                                           values, want_matrix)
        if not want_matrix:
            return None, rhs, norm
        return LinearSystem(A, rhs, n_sd), rhs, norm

    def _add_jump(self, values, R, rows_list, cols_list, data_list,
                  want_matrix):
        slab = self.slab
        n_sd, nc = self.n_sd, self.ncomp
        ids = slab.spatial.elements  # bottom-level node ids == spatial ids
        coords = slab.coords_bottom[ids]
        J = np.swapaxes(coords[:, 1:, :] - coords[:, :1, :], 1, 2)
        det = np.abs(np.linalg.det(J))
        rule = simplex_quadrature(n_sd, 2)
        Nf = basis_eval(rule.points, n_sd)
        wdet = rule.weights[None, :] * det[:, None]
        rho = self.material.rho

        u_plus = values[ids, :n_sd]
        Mq = np.einsum("fq,qa,qb->fab", wdet, Nf, Nf)
        Rloc = rho * np.einsum("fab,fbi->fai", Mq, u_plus)
        if self.jump_data is not None:
            u_minus = np.asarray(self.jump_data)[ids]
            Rloc -= rho * np.einsum("fab,fbi->fai", Mq, u_minus)
        elif self.bcs.initial is not None:
            x_q = np.einsum("qa,fad->fqd", Nf, coords)
            u0 = np.asarray(self.bcs.initial(x_q.reshape(-1, n_sd)))
            u0 = u0.reshape(len(ids), len(rule.weights), n_sd)
            Rloc -= rho * np.einsum("fq,qa,fqi->fai", wdet, Nf, u0)
        else:
            raise MissingPreviousState(
                "slab jump term needs an initial condition or previous trace")

        vdofs = ids[:, :, None] * nc + np.arange(n_sd)[None, None, :]
        np.add.at(R, vdofs.ravel(), Rloc.reshape(-1))
        if want_matrix:
            Kf = rho * np.einsum("fab,ij->faibj", Mq, np.eye(n_sd))
            rows = np.broadcast_to(vdofs[:, :, :, None, None],
                                   Kf.shape).ravel().astype(np.int32)
            cols = np.broadcast_to(vdofs[:, None, None, :, :],
                                   Kf.shape).ravel().astype(np.int32)
            rows_list.append(rows)
            cols_list.append(cols)
            data_list.append(Kf.ravel())

    def _add_traction(self, R):
        slab = self.slab
        n_sd, nc = self.n_sd, self.ncomp
        n_sp = slab.spatial.n_nodes
        for tag, fn in self.bcs.neumann.items():
            fidx = slab.spatial.facets_with_tag(tag)
            if len(fidx) == 0:
                continue
            sids = slab.spatial.boundary_facets[fidx]     # (nf, n_sd)
            ids = np.hstack([sids, sids + n_sp])          # face nodes b then t
            cb = slab.coords_bottom[sids]
            ct = slab.coords_top[sids]
            m = sids.shape[1]                             # spatial facet nodes
            srule = _facet_simplex_rule(n_sd - 1)
            trule = interval_gauss(2)
            Gs = reference_gradients(n_sd - 1)            # (m, n_sd-1)
            Rloc = np.zeros((len(ids), 2 * m, n_sd))
            for ps, ws in zip(srule.points, srule.weights):
                Ns = basis_eval(ps, n_sd - 1)
                for pt, wt in zip(trule.points[:, 0], trule.weights):
                    blend = (1.0 - pt) * cb + pt * ct     # (nf, m, n_sd)
                    x = np.einsum("a,fad->fd", Ns, blend)
                    t = slab.t_bottom + pt * slab.dt
                    # tangents: spatial reference directions and theta
                    tang = np.empty((len(ids), n_sd, n_sd + 1))
                    tang[:, : n_sd - 1, :n_sd] = np.einsum("ad,fae->fde",
                                                           Gs, blend)
                    tang[:, : n_sd - 1, n_sd] = 0.0
                    tang[:, n_sd - 1, :n_sd] = np.einsum("a,fad->fd",
                                                         Ns, ct - cb)
                    tang[:, n_sd - 1, n_sd] = slab.dt
                    gram = np.einsum("fid,fjd->fij", tang, tang)
                    area = np.sqrt(np.abs(np.linalg.det(gram)))
                    h = np.asarray(fn(x, np.full(len(ids), t)))
                    Nface = np.concatenate([Ns * (1.0 - pt), Ns * pt])
                    Rloc -= (ws * wt) * np.einsum("f,a,fi->fai", area, Nface, h)
            vdofs = ids[:, :, None] * nc + np.arange(n_sd)[None, None, :]
            np.add.at(R, vdofs.ravel(), Rloc.reshape(-1))


# -- standalone operation wrappers -------------------------------------------

def element_residual(mesh: SpaceTimeMesh, e: int, field: SolutionField,
                     material: MaterialParams, body_force,
                     stab: StabilizationContext, convective=True) -> np.ndarray:
    """Interior residual vector of one simplex element, local dof order
    (node-major, components within node)."""
    n_sd = mesh.n_sd
    nen = mesh.dim + 1
    rule = simplex_quadrature(mesh.dim, 2)
    Nq = basis_eval(rule.points, mesh.dim)
    nq = len(rule.weights)
    grads = mesh.gradients[e: e + 1]
    D = np.broadcast_to(grads[:, None, :, :n_sd], (1, nq, nen, n_sd))
    B = np.broadcast_to(grads[:, None, :, n_sd], (1, nq, nen))
    wdet = rule.weights[None, :] * abs(mesh.jacobian_dets[e])
    x_q = np.einsum("qa,ad->qd", Nq, mesh.element_coords[e])[None]
    Ue = field.values[mesh.elements[e]][None]
    Re, _ = _element_terms(Nq, wdet, D, B, None, x_q, Ue, material.rho,
                           material.mu, stab.tau_mom[e: e + 1],
                           stab.tau_cont[e: e + 1], body_force, convective,
                           want_matrix=False)
    return Re.reshape(-1)


def element_jacobian_matrix(mesh: SpaceTimeMesh, e: int, field: SolutionField,
                            material: MaterialParams, body_force,
                            stab: StabilizationContext,
                            convective=True) -> np.ndarray:
    """Exact linearization of the interior residual of one element, with tau
    frozen at the supplied values."""
    n_sd = mesh.n_sd
    nen = mesh.dim + 1
    nc = n_sd + 1
    rule = simplex_quadrature(mesh.dim, 2)
    Nq = basis_eval(rule.points, mesh.dim)
    nq = len(rule.weights)
    grads = mesh.gradients[e: e + 1]
    D = np.broadcast_to(grads[:, None, :, :n_sd], (1, nq, nen, n_sd))
    B = np.broadcast_to(grads[:, None, :, n_sd], (1, nq, nen))
    wdet = rule.weights[None, :] * abs(mesh.jacobian_dets[e])
    x_q = np.einsum("qa,ad->qd", Nq, mesh.element_coords[e])[None]
    Ue = field.values[mesh.elements[e]][None]
    _, Ke = _element_terms(Nq, wdet, D, B, None, x_q, Ue, material.rho,
                           material.mu, stab.tau_mom[e: e + 1],
                           stab.tau_cont[e: e + 1], body_force, convective,
                           want_matrix=True)
    return Ke.reshape(nen * nc, nen * nc)


def jump_term(problem: SpaceTimeProblem, field: SolutionField):
    """Global jump residual vector and Jacobian of the bottom-cap term."""
    R = np.zeros(problem.n_dofs)
    rows, cols, data = [], [], []
    problem._add_jump(field.values, R, rows, cols, data, want_matrix=True)
    A = sp.coo_matrix((np.concatenate(data),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(problem.n_dofs, problem.n_dofs)).tocsr()
    return R, A

def traction_term(problem) -> np.ndarray:
    """Global residual contribution of the Neumann traction term."""
    R = np.zeros(problem.n_dofs)
    problem._add_traction(R)
    return R


def dirichlet_values(bcs: BCSpec, mesh: SpaceTimeMesh):
    """(dofs, values) of the strong velocity constraints on the mantle."""
    problem = SpaceTimeProblem.__new__(SpaceTimeProblem)
    problem.n_sd = mesh.n_sd
    problem.n_nodes = mesh.n_nodes
    dir_nodes = {}
    for tag, fn in bcs.dirichlet.items():
        fidx = mesh.facets_with_tag(tag)
        fidx = fidx[np.isin(fidx, mesh.mantle_facets)]
        nodes = np.unique(mesh.boundary_facets[fidx])
        x = mesh.nodes[nodes]
        dir_nodes[tag] = (nodes, np.asarray(fn(x[:, : mesh.n_sd],
                                               x[:, mesh.n_sd])))
    problem._init_constraints(dir_nodes, None)
    return problem.dir_dofs, problem.dir_values[problem.dir_dofs]


def assemble(mesh, field: SolutionField, scenario, mode: str,
             tau_override=None, jump_data=None):
    """Assemble the Newton system for a scenario in the requested mode.

    ``mode`` is "ust_simplex" (mesh: SpaceTimeMesh) or "slab_prism"
    (mesh: PrismSlab).  Returns (LinearSystem, residual_norm).
    """
    kwargs = dict(material=scenario.material, bcs=scenario.bcs,
                  body_force=scenario.body_force,
                  convective=scenario.convective, jump_data=jump_data)
    if mode == "ust_simplex":
        problem = SpaceTimeProblem(mesh, gauge=scenario.gauge_for(mesh.nodes),
                                   **kwargs)
    elif mode == "slab_prism":
        problem = PrismSlabProblem(
            mesh, gauge=scenario.gauge_for(mesh.node_coords()), **kwargs)
    else:
        raise ConfigurationError(f"unknown assembly mode {mode!r}")
    system, _, norm = problem.system(field.values, tau_override=tau_override)
    return system, norm
