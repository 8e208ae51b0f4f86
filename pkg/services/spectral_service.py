"""
Spectral Solver Service
Finite-difference discretization of the layer Hamiltonian on a truncated box,
shift-invert Lanczos for the lowest eigenvalues, Neumann/Dirichlet bracketing
and grid-refinement studies
"""
import logging
import math
import time
from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np
from numpy.random import default_rng
from scipy import io as sio
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from exceptions import BadParams, GridTooCoarse, NoConvergence
from models import (
    BracketingReport, BracketingRow, DiscreteOperator, LateralBoundary, LayerConfig, SolverGrid,
    SpectralResult, ThicknessReport,
)
from services.geometry_service import geometry_service
from services.hamiltonian_service import hamiltonian_service
from services.layer_service import layer_service
from services.surfaces import SurfaceModel
from settings import DEFAULT_SEED

logger = logging.getLogger(__name__)

SHIFT_FRACTION = 0.9
NODES_PER_CURVATURE_RADIUS = 8
GROUND_STATE_STABILITY = 1e-3
# a = d/dq1, b = d/dq2 on the four cells around a corner: (i,j), (i+1,j), (i,j+1), (i+1,j+1)
CORNER_D1 = np.array([-1.0, 1.0, -1.0, 1.0])
CORNER_D2 = np.array([-1.0, -1.0, 1.0, 1.0])


def discrete_threshold(n_transverse: int, a: float) -> float:
    """Lowest eigenvalue of the 3-point Dirichlet operator with n_transverse interior nodes on (-a, a)"""
    h_u = 2.0 * a / (n_transverse + 1)
    return 4.0 / h_u**2 * math.sin(math.pi / (2.0 * (n_transverse + 1))) ** 2


def gershgorin_lower_bound(matrix: sparse.spmatrix) -> float:
    """min_i (a_ii - sum_{j != i} |a_ij|), pushed strictly below so A - bound I stays regular"""
    diagonal = matrix.diagonal()
    radii = np.asarray(abs(matrix).sum(axis=1)).ravel() - np.abs(diagonal)
    bound = float(np.min(diagonal - radii))
    return bound - 1e-3 * max(1.0, abs(bound))


class _Triplets:
    """COO accumulator; couple() adds c (e_p - e_q)(e_p - e_q)^T for arrays of pairs"""

    def __init__(self):
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []

    def add(self, p, q, c) -> None:
        p, q, c = (np.ravel(x) for x in np.broadcast_arrays(p, q, c))
        self.rows.append(p)
        self.cols.append(q)
        self.vals.append(c.astype(float))

    def couple(self, p, q, c) -> None:
        self.add(p, p, c)
        self.add(q, q, c)
        self.add(p, q, -np.asarray(c))
        self.add(q, p, -np.asarray(c))

    def matrix(self, size: int) -> sparse.csr_matrix:
        return sparse.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(size, size),
        ).tocsr()


class SpectralService:
    """Discrete H = -d_mu G^{mu nu} d_nu - d_u^2 + V1 + V2 with Dirichlet walls at u = +-a"""

    def _inverse_metric(self, surface: SurfaceModel, q1: np.ndarray, q2: np.ndarray, u: np.ndarray) -> np.ndarray:
        """G^{mu nu} at lateral points (any shape S) and all u nodes -> S + (n_u, 2, 2)"""
        shape = q1.shape
        c = geometry_service.compute_curvature(surface, q1.ravel(), q2.ravel())
        uu = np.broadcast_to(u, (q1.size, u.size))
        metric = layer_service.layer_metric_at(c, uu)
        return metric.G_inv.reshape(shape + (u.size, 2, 2))

    def _potential(self, surface: SurfaceModel, q1: np.ndarray, q2: np.ndarray, u: np.ndarray) -> np.ndarray:
        """V1 + V2 at the nodes; zero where the surface is flat"""
        V = np.zeros(q1.shape + (u.size,))
        if surface.compactly_supported:
            inside = np.hypot(q1, q2) < surface.support_radius
        else:
            inside = np.ones(q1.shape, dtype=bool)
        if np.any(inside):
            p1 = q1[inside][:, None]
            p2 = q2[inside][:, None]
            V[inside] = hamiltonian_service.effective_potential(surface, p1, p2, u[None, :])
        return V

    def assemble(self, surface: SurfaceModel, layer: LayerConfig, grid: SolverGrid,
                 thickness: Optional[ThicknessReport] = None) -> DiscreteOperator:
        """
        Symmetric matrix of the discrete quadratic form on the box |q1|, |q2| <= r_max.

        Lateral nodes are cell centres: G^{11}, G^{22} live on cell faces, the
        G^{12} coupling on cell corners through a 4-point cross stencil.
        Dirichlet truncation puts a zero face value on the outer faces,
        Neumann puts zero flux. Transverse nodes are vertices with Dirichlet walls.
        An axisymmetric grid discretizes the disk r <= r_max instead.

        Raises:
            InvalidThickness: a >= rho_m
            GridTooCoarse: lateral spacing above rho_m / 8, or box not beyond the deformation
        """
        thickness = thickness or layer_service.validate_thickness(surface, layer)
        layer_service.require_valid(thickness)
        if surface.compactly_supported and grid.r_max <= surface.support_radius:
            raise GridTooCoarse(
                f"r_max={grid.r_max} must exceed the deformation support radius {surface.support_radius}",
                field="solve.r_max",
            )
        if math.isfinite(thickness.rho_m) and grid.h > thickness.rho_m / NODES_PER_CURVATURE_RADIUS:
            raise GridTooCoarse(
                f"lateral spacing {grid.h:.4g} exceeds rho_m/{NODES_PER_CURVATURE_RADIUS} = "
                f"{thickness.rho_m / NODES_PER_CURVATURE_RADIUS:.4g}",
                field="solve.n_lateral",
                details={"h": grid.h, "rho_m": thickness.rho_m},
            )

        if grid.axisymmetric:
            return self._assemble_axisymmetric(surface, layer, grid)

        started = time.perf_counter()
        n, nu, R, a = grid.n_lateral, grid.n_transverse, grid.r_max, layer.a
        h, h_u = grid.h, grid.h_u(a)
        centres = -R + (np.arange(n) + 0.5) * h
        faces = -R + np.arange(n + 1) * h
        u = -a + (np.arange(nu) + 1) * h_u
        index = np.arange(n * n * nu).reshape(n, n, nu)
        triplets = _Triplets()
        dirichlet = grid.lateral_bc is LateralBoundary.DIRICHLET

        # d/dq1 fluxes through faces normal to q1
        X, Y = np.meshgrid(faces, centres, indexing="ij")
        G11 = self._inverse_metric(surface, X, Y, u)[..., 0, 0] / h**2
        triplets.couple(index[:-1], index[1:], G11[1:-1])
        if dirichlet:
            triplets.add(index[0], index[0], 2.0 * G11[0])
            triplets.add(index[-1], index[-1], 2.0 * G11[-1])

        # d/dq2 fluxes through faces normal to q2
        X, Y = np.meshgrid(centres, faces, indexing="ij")
        G22 = self._inverse_metric(surface, X, Y, u)[..., 1, 1] / h**2
        triplets.couple(index[:, :-1], index[:, 1:], G22[:, 1:-1])
        if dirichlet:
            triplets.add(index[:, 0], index[:, 0], 2.0 * G22[:, 0])
            triplets.add(index[:, -1], index[:, -1], 2.0 * G22[:, -1])

        # mixed term 2 G^{12} d1 psi d2 psi at interior corners
        X, Y = np.meshgrid(faces[1:-1], faces[1:-1], indexing="ij")
        G12 = self._inverse_metric(surface, X, Y, u)[..., 0, 1]
        corner = [index[:-1, :-1], index[1:, :-1], index[:-1, 1:], index[1:, 1:]]
        for p in range(4):
            for q in range(4):
                weight = (CORNER_D1[p] * CORNER_D2[q] + CORNER_D2[p] * CORNER_D1[q]) / (4.0 * h * h)
                if weight != 0.0:
                    triplets.add(corner[p], corner[q], weight * G12)

        # -d_u^2 with Dirichlet walls
        inv_hu2 = 1.0 / h_u**2
        triplets.couple(index[..., :-1], index[..., 1:], inv_hu2)
        triplets.add(index[..., 0], index[..., 0], inv_hu2)
        triplets.add(index[..., -1], index[..., -1], inv_hu2)

        X, Y = np.meshgrid(centres, centres, indexing="ij")
        triplets.add(index, index, self._potential(surface, X, Y, u))

        matrix = triplets.matrix(index.size)
        asymmetry = abs(matrix - matrix.T).max() if matrix.nnz else 0.0
        elapsed = time.perf_counter() - started
        logger.info(
            f"Assembled {surface.name} operator: {n}x{n}x{nu} nodes, nnz={matrix.nnz}, "
            f"bc={grid.lateral_bc.value}, asymmetry={asymmetry:.2e} ({elapsed:.2f}s)"
        )
        return DiscreteOperator(
            matrix=matrix,
            grid=grid,
            a=a,
            kappa1_sq=layer.kappa1_sq,
            discrete_threshold=discrete_threshold(nu, a),
            max_asymmetry=float(asymmetry),
            boundary={"transverse": "dirichlet", "lateral": grid.lateral_bc.value},
        )

    def _assemble_axisymmetric(self, surface: SurfaceModel, layer: LayerConfig, grid: SolverGrid) -> DiscreteOperator:
        """
        Rotation-invariant sector on (0, r_max) x (-a, a).

        The form int r (G^{rr} psi_r^2 + psi_u^2 + V psi^2) dr du carries the
        radial weight r. The returned matrix is W^{-1/2} K W^{-1/2} with
        W = diag(r), so its eigenvalues are those of the pencil (K, W). The
        ground state of a rotation-invariant operator is rotation invariant,
        so the lowest eigenvalue matches the full disk truncation.

        Raises:
            BadParams: surface is not a radial graph
        """
        if not surface.is_radial:
            raise BadParams(f"Surface '{surface.name}' is not rotationally symmetric", field="solve.axisymmetric")
        started = time.perf_counter()
        n, nu, a = grid.n_lateral, grid.n_transverse, layer.a
        h, h_u = grid.h, grid.h_u(a)
        centres = (np.arange(n) + 0.5) * h
        faces = (np.arange(n) + 1.0) * h
        u = -a + (np.arange(nu) + 1) * h_u
        index = np.arange(n * nu).reshape(n, nu)
        zeros = np.zeros(n)
        triplets = _Triplets()

        # r G^{rr} fluxes through r = (i+1) h; the axis r = 0 carries none
        Grr = self._inverse_metric(surface, faces, zeros, u)[..., 0, 0] * (faces[:, None] / h**2)
        triplets.couple(index[:-1], index[1:], Grr[:-1])
        if grid.lateral_bc is LateralBoundary.DIRICHLET:
            triplets.add(index[-1], index[-1], 2.0 * Grr[-1])

        r = centres[:, None]
        transverse = r / h_u**2
        triplets.couple(index[:, :-1], index[:, 1:], transverse)
        triplets.add(index[:, 0], index[:, 0], transverse[:, 0])
        triplets.add(index[:, -1], index[:, -1], transverse[:, 0])
        triplets.add(index, index, r * self._potential(surface, centres, zeros, u))

        scale = sparse.diags(1.0 / np.sqrt(np.repeat(centres, nu)))
        matrix = (scale @ triplets.matrix(index.size) @ scale).tocsr()
        asymmetry = abs(matrix - matrix.T).max() if matrix.nnz else 0.0
        elapsed = time.perf_counter() - started
        logger.info(
            f"Assembled axisymmetric {surface.name} operator: {n}x{nu} nodes, nnz={matrix.nnz}, "
            f"bc={grid.lateral_bc.value}, asymmetry={asymmetry:.2e} ({elapsed:.2f}s)"
        )
        return DiscreteOperator(
            matrix=matrix,
            grid=grid,
            a=a,
            kappa1_sq=layer.kappa1_sq,
            discrete_threshold=discrete_threshold(nu, a),
            max_asymmetry=float(asymmetry),
            boundary={"transverse": "dirichlet", "lateral": grid.lateral_bc.value, "symmetry": "axisymmetric"},
        )

    def dirichlet_laplacian_1d(self, n: int, half_width: float) -> DiscreteOperator:
        """-d^2/du^2 on (-half_width, half_width) with n interior vertex nodes"""
        h = 2.0 * half_width / (n + 1)
        main = np.full(n, 2.0 / h**2)
        off = np.full(n - 1, -1.0 / h**2)
        matrix = sparse.diags([off, main, off], [-1, 0, 1], format="csr")
        return DiscreteOperator(
            matrix=matrix,
            grid=None,
            a=half_width,
            kappa1_sq=(math.pi / (2.0 * half_width)) ** 2,
            discrete_threshold=discrete_threshold(n, half_width),
            max_asymmetry=0.0,
            boundary={"transverse": "dirichlet"},
        )

    def _factorize(self, matrix: sparse.csc_matrix, shift: float):
        """Symmetric-mode LU of A - shift I; its U diagonal carries the inertia"""
        shifted = (matrix - shift * sparse.identity(matrix.shape[0], format="csc")).tocsc()
        return splu(shifted, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True})

    def _inertia(self, lu) -> Optional[int]:
        """Eigenvalues below the shift (Sylvester), or None when the LU pivoted off the diagonal"""
        if not np.array_equal(lu.perm_r, lu.perm_c):
            logger.warning("LU row and column permutations differ; inertia count unavailable")
            return None
        return int(np.count_nonzero(lu.U.diagonal() < 0.0))

    def count_below(self, op: DiscreteOperator, value: float) -> Optional[int]:
        """Number of eigenvalues of the operator strictly below value"""
        return self._inertia(self._factorize(op.matrix.tocsc(), value))

    def _shift_invert(self, matrix: sparse.csc_matrix, lu, shift: float, k: int, seed: int, tol: float,
                      max_iter: Optional[int]):
        """Sorted eigenpairs nearest the shift from the factor of A - shift I"""
        size = matrix.shape[0]
        operator = LinearOperator((size, size), matvec=lu.solve, dtype=float)
        v0 = default_rng(seed).standard_normal(size)
        try:
            values, vectors = eigsh(matrix, k=k, sigma=shift, which="LM", OPinv=operator,
                                    v0=v0, tol=tol, maxiter=max_iter)
        except ArpackNoConvergence as err:
            partial = np.sort(np.asarray(err.eigenvalues, dtype=float))
            raise NoConvergence(
                f"Shift-invert Lanczos did not converge for k={k} (got {partial.size} eigenvalues)",
                details={"eigenvalues": partial.tolist(), "shift": shift, "seed": seed},
            )
        order = np.argsort(values)
        return values[order], vectors[:, order]

    def lowest_eigenvalues(self, op: DiscreteOperator, k: int = 6, tol: float = 1e-10,
                           shift: Optional[float] = None, seed: Optional[int] = None,
                           max_iter: Optional[int] = None) -> SpectralResult:
        """
        k eigenvalues nearest the shift (default 0.9 kappa_1^2) by shift-invert Lanczos.

        The LU factor of A - shift I serves both as the shift-invert operator
        and as an inertia count. Lanczos returns the k eigenvalues nearest the
        shift, so when it misses some of the eigenvalues the inertia puts below
        the shift, the solve is repeated from a Gershgorin lower bound of the
        spectrum, where the nearest eigenvalues are the smallest ones.

        Raises:
            NoConvergence: ARPACK iteration budget exhausted, or eigenvalues below
                the shift still missing after the re-solve (partial eigenvalues in details)
        """
        matrix = op.matrix.tocsc()
        size = matrix.shape[0]
        shift = SHIFT_FRACTION * op.kappa1_sq if shift is None else shift
        seed = DEFAULT_SEED if seed is None else seed
        started = time.perf_counter()

        lu = self._factorize(matrix, shift)
        below_shift = self._inertia(lu)
        k = min(max(k, (below_shift or 0) + 1), size - 1)
        values, vectors = self._shift_invert(matrix, lu, shift, k, seed, tol, max_iter)
        found_below = int(np.count_nonzero(values < shift))
        if below_shift is not None and found_below < below_shift:
            lower = gershgorin_lower_bound(matrix)
            logger.warning(
                f"Inertia counts {below_shift} eigenvalues below the shift {shift:.6g}, Lanczos returned "
                f"{found_below}; re-solving from the Gershgorin bound {lower:.6g}"
            )
            values, vectors = self._shift_invert(matrix, self._factorize(matrix, lower), lower, k, seed, tol, max_iter)
            found_below = int(np.count_nonzero(values < shift))
            if found_below < below_shift:
                raise NoConvergence(
                    f"Lanczos returned {found_below} of the {below_shift} eigenvalues below the shift {shift:.6g}",
                    details={"eigenvalues": values.tolist(), "shift": shift, "count_below_shift": below_shift,
                             "seed": seed},
                )
        residuals = np.linalg.norm(matrix @ vectors - vectors * values, axis=0) / np.linalg.norm(vectors, axis=0)

        threshold = op.discrete_threshold
        below_threshold = None
        if values[-1] >= threshold:
            below_threshold = int(np.count_nonzero(values < threshold))
        else:
            logger.warning("All returned eigenvalues lie below the discrete threshold; bound-state count is partial")

        scale = max(1.0, float(np.max(np.abs(values))))
        converged = bool(np.all(residuals <= max(tol, 1e-8) * scale))
        elapsed = time.perf_counter() - started
        logger.info(
            f"Lowest eigenvalues (n={size}, k={k}, shift={shift:.6g}): {np.array2string(values[:4], precision=8)} "
            f"below threshold={below_threshold} ({elapsed:.2f}s)"
        )
        return SpectralResult(
            eigenvalues=values,
            residuals=residuals,
            converged=converged,
            shift=shift,
            tolerance=tol,
            seed=seed,
            kappa1_sq=op.kappa1_sq,
            discrete_threshold=threshold,
            count_below_shift=below_shift,
            count_below_threshold=below_threshold,
        )

    def solve(self, surface: SurfaceModel, layer: LayerConfig, grid: SolverGrid, k: int = 6,
              tol: float = 1e-10, seed: Optional[int] = None,
              thickness: Optional[ThicknessReport] = None) -> SpectralResult:
        op = self.assemble(surface, layer, grid, thickness)
        return self.lowest_eigenvalues(op, k=k, tol=tol, seed=seed)

    def refine_ground_state(self, surface: SurfaceModel, layer: LayerConfig, grid: SolverGrid,
                            levels: int = 3, tol: float = 1e-10, seed: Optional[int] = None,
                            thickness: Optional[ThicknessReport] = None) -> SpectralResult:
        """
        Ground state under dyadic refinement of both spacings.

        Each level doubles n_lateral and n_transverse + 1. The history records
        the ground energy, successive deltas and their ratios (about 4 for a
        second-order scheme).
        """
        thickness = thickness or layer_service.validate_thickness(surface, layer)
        history = []
        result = None
        for level in range(levels):
            factor = 2**level
            current = replace(
                grid,
                n_lateral=grid.n_lateral * factor,
                n_transverse=(grid.n_transverse + 1) * factor - 1,
            )
            result = self.solve(surface, layer, current, k=1, tol=tol, seed=seed, thickness=thickness)
            entry = {
                "n_lateral": current.n_lateral,
                "n_transverse": current.n_transverse,
                "h": current.h,
                "h_u": current.h_u(layer.a),
                "ground_state": result.ground_state,
                "delta": None,
                "ratio": None,
            }
            if history:
                entry["delta"] = result.ground_state - history[-1]["ground_state"]
                previous = history[-1]["delta"]
                if previous is not None and entry["delta"] != 0.0:
                    entry["ratio"] = previous / entry["delta"]
            history.append(entry)
            logger.info(f"Refinement level {level}: lambda_1={result.ground_state:.10f} delta={entry['delta']}")
        result.refinement_history = history
        return result

    def bracket_threshold(self, surface: SurfaceModel, layer: LayerConfig, r_max_list: Sequence[float],
                          spacing: float, n_transverse: int, k: int = 5, tol: float = 1e-10,
                          seed: Optional[int] = None, ordering_tolerance: float = 1e-9,
                          axisymmetric: bool = False) -> BracketingReport:
        """
        Neumann and Dirichlet truncations at every R_max on grids of fixed spacing.

        Checks lambda_n^N <= lambda_n^D index by index. As the box grows the
        lowest Dirichlet level above the discrete threshold must not rise and
        the Neumann ground state must not fall; the Dirichlet ground state is
        stable when its relative spread stays within GROUND_STATE_STABILITY.
        """
        thickness = layer_service.validate_thickness(surface, layer)
        rows: List[BracketingRow] = []
        edges = []
        ground = []
        neumann_ground = []
        notes: List[str] = []
        threshold = discrete_threshold(n_transverse, layer.a)
        slack = ordering_tolerance * max(1.0, threshold)
        for r_max in sorted(r_max_list):
            width = r_max if axisymmetric else 2.0 * r_max
            n = max(2, int(round(width / spacing)))
            spectra = {}
            for bc in (LateralBoundary.NEUMANN, LateralBoundary.DIRICHLET):
                grid = SolverGrid(r_max=r_max, n_lateral=n, n_transverse=n_transverse, lateral_bc=bc,
                                  axisymmetric=axisymmetric)
                spectra[bc] = self.solve(surface, layer, grid, k=k, tol=tol, seed=seed, thickness=thickness)
            neumann = spectra[LateralBoundary.NEUMANN].eigenvalues[:k]
            dirichlet = spectra[LateralBoundary.DIRICHLET].eigenvalues[:k]
            m = min(neumann.size, dirichlet.size)
            ordered = bool(np.all(neumann[:m] <= dirichlet[:m] + slack))
            if not ordered:
                notes.append(f"R_max={r_max}: Neumann eigenvalue above its Dirichlet partner")
            rows.append(BracketingRow(
                r_max=r_max, n_lateral=n, neumann=tuple(float(x) for x in neumann),
                dirichlet=tuple(float(x) for x in dirichlet), discrete_threshold=threshold, ordering_ok=ordered,
            ))
            above = dirichlet[dirichlet >= threshold]
            edges.append(float(above[0]) if above.size else math.nan)
            ground.append(float(dirichlet[0]))
            neumann_ground.append(float(neumann[0]))

        finite = [e for e in edges if math.isfinite(e)]
        edge_trend_ok = all(later <= earlier * (1.0 + 1e-12) for earlier, later in zip(finite, finite[1:]))
        if not edge_trend_ok:
            notes.append("Dirichlet continuum edge does not decrease towards the threshold with R_max")
        neumann_trend_ok = all(later >= earlier - slack for earlier, later in zip(neumann_ground, neumann_ground[1:]))
        if not neumann_trend_ok:
            notes.append("Neumann ground state does not increase towards the threshold with R_max")
        spread = (max(ground) - min(ground)) / abs(ground[0]) if ground else 0.0
        stable = spread <= GROUND_STATE_STABILITY
        if not stable:
            notes.append(f"Dirichlet ground state varies by {spread:.2e} across R_max")
        report = BracketingReport(
            rows=rows,
            kappa1_sq=layer.kappa1_sq,
            ordering_ok=all(row.ordering_ok for row in rows),
            ground_state_spread=spread,
            ground_state_stable=stable,
            edge_trend_ok=edge_trend_ok,
            neumann_trend_ok=neumann_trend_ok,
            notes=notes,
        )
        logger.info(f"Bracketing over R_max={list(r_max_list)}: ordering_ok={report.ordering_ok}, "
                    f"ground spread={spread:.2e}, edge trend ok={edge_trend_ok}, "
                    f"Neumann trend ok={neumann_trend_ok}")
        return report

    def dump_matrix(self, op: DiscreteOperator, path: str) -> None:
        """Matrix Market coordinate file: header with dimensions, 1-indexed (row, col, value) triplets"""
        grid = op.grid
        comment = f"curved layer operator a={op.a}"
        if grid is not None:
            comment += f" r_max={grid.r_max} nodes={grid.shape} lateral_bc={grid.lateral_bc.value}"
        sio.mmwrite(path, op.matrix.tocoo(), comment=comment, field="real", symmetry="general")
        logger.info(f"Wrote {op.dimension}x{op.dimension} matrix ({op.matrix.nnz} entries) to {path}")


# Create a singleton instance
spectral_service = SpectralService()
