"""
Report Service
Loads and validates run configurations, runs the toolkit commands and
assembles the versioned JSON/CSV report
"""
import csv
import dataclasses
import enum
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml
from pydantic import ValidationError

from exceptions import (
    ConfigParseError, ConfigValidationError, ConsistencyViolation, IdentityCheckFailed, LayerToolkitError,
    NotCertified,
)
from models import (
    CertificateStatus, CertifierConfig, CurvaturePart, LateralBoundary, LayerConfig, LocalizationSpec,
    GridSpec, QuadratureSpec, SolverGrid, SpectralResult, ThicknessReport,
)
from schemas import (
    ConsistencyReport, FailureReport, GeometrySummary, IdentityCheck, Report, RunConfig,
)
from services.certifier_service import certifier_service
from services.geometry_service import geometry_service
from services.hamiltonian_service import hamiltonian_service
from services.layer_service import layer_service
from services.spectral_service import NODES_PER_CURVATURE_RADIUS, spectral_service
from services.specfun_service import specfun_service
from services.surfaces import SurfaceModel, builtin_surface
from settings import DEFAULT_SEED, REPORT_SCHEMA_VERSION, get_settings_info, get_worker_count

logger = logging.getLogger(__name__)

COMMANDS = ("curvature", "check-identities", "certify", "solve", "full")
DEFORMATION_COMMANDS = ("certify", "solve", "full")
# a bound state must sit this far below the discrete threshold
BOUND_STATE_MARGIN = 1e-6
MOLLIFIER_CHECK_ARGUMENTS = (0.3, 0.1, 0.01)


@dataclass
class RunContext:
    config: RunConfig
    surface: SurfaceModel
    layer: LayerConfig
    thickness: ThicknessReport


def to_jsonable(value: Any) -> Any:
    """Dataclasses, enums and numpy values to plain JSON types; non-finite floats become None"""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _finite(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


class ReportService:
    """Configuration ingestion and command orchestration"""

    # Configuration
    def load_config(self, path: str) -> RunConfig:
        """
        Parse a YAML run configuration, expand dotted keys and validate it fully.

        Raises:
            ConfigParseError: unreadable file, YAML syntax error or unknown key
            ConfigValidationError: a value violates a constraint
        """
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigParseError(f"Cannot read config file {path}: {e}")
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise ConfigParseError(f"YAML syntax error in {path}: {e}", line=line)
        cfg = self.parse_config(data or {})
        self.build_context(cfg)
        logger.info(f"Loaded config {path}: surface={cfg.surface.family}, a={cfg.layer.a}")
        return cfg

    def parse_config(self, data: Any) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigParseError("Top level of the config must be a mapping")
        dotted = [key for key in data if isinstance(key, str) and "." in key]
        expanded = self._expand_dotted(data)
        try:
            return RunConfig.model_validate(expanded)
        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(part) for part in first["loc"])
            if first["type"] == "extra_forbidden":
                original = next((key for key in dotted if key == field or key.startswith(field + ".")), field)
                raise ConfigParseError(f"Unknown config key '{original}'", field=original)
            raise ConfigValidationError(f"{field}: {first['msg']}", field=field)

    def _expand_dotted(self, data: Dict[str, Any]) -> Dict[str, Any]:
        """{'layer.a': 1} -> {'layer': {'a': 1}}, recursively"""
        result: Dict[str, Any] = {}
        for key, value in data.items():
            if isinstance(value, dict):
                value = self._expand_dotted(value)
            parts = str(key).split(".")
            node = result
            for part in parts[:-1]:
                child = node.setdefault(part, {})
                if not isinstance(child, dict):
                    raise ConfigParseError(f"Key '{key}' conflicts with a scalar value", field=str(key))
                node = child
            leaf = parts[-1]
            if isinstance(node.get(leaf), dict) and isinstance(value, dict):
                node[leaf].update(value)
            elif leaf in node:
                raise ConfigParseError(f"Key '{key}' given twice", field=str(key))
            else:
                node[leaf] = value
        return result

    def build_context(self, cfg: RunConfig, command: Optional[str] = None) -> RunContext:
        """
        Semantic validation that needs the surface: a < rho_m, r0, sigma grid, solver box.

        Raises:
            UnknownSurface, BadParams: surface family or parameters
            ConfigValidationError: any violated constraint, naming the field; also a
                surface without compact support given to one of DEFORMATION_COMMANDS
        """
        surface = builtin_surface(cfg.surface.family, cfg.surface.params)
        if command in DEFORMATION_COMMANDS and not surface.compactly_supported:
            raise ConfigValidationError(
                f"Surface family '{cfg.surface.family}' is for geometry tests only; "
                f"'{command}' needs a compact deformation of the plane",
                field="surface.family",
            )
        if cfg.solve.axisymmetric and not surface.is_radial:
            raise ConfigValidationError(
                f"solve.axisymmetric needs a radial surface, got '{cfg.surface.family}'", field="solve.axisymmetric",
            )
        layer = LayerConfig(a=cfg.layer.a, r0=cfg.certify.r0)
        thickness = layer_service.validate_thickness(surface, layer)
        if not thickness.valid:
            raise ConfigValidationError(
                f"layer.a={layer.a} must be below rho_m={thickness.rho_m:.6g}", field="layer.a",
            )
        if surface.compactly_supported:
            certifier_service.validate_config(surface, layer, self.certifier_config(cfg, surface, layer))
            solve = cfg.solve
            if solve.r_max <= surface.support_radius:
                raise ConfigValidationError(
                    f"solve.r_max={solve.r_max} must exceed the support radius {surface.support_radius}",
                    field="solve.r_max",
                )
            h = self.solver_grid(cfg).h
            if math.isfinite(thickness.rho_m) and h > thickness.rho_m / NODES_PER_CURVATURE_RADIUS:
                raise ConfigValidationError(
                    f"lateral spacing {h:.4g} exceeds rho_m/{NODES_PER_CURVATURE_RADIUS}", field="solve.n_lateral",
                )
        return RunContext(config=cfg, surface=surface, layer=layer, thickness=thickness)

    def certifier_config(self, cfg: RunConfig, surface: SurfaceModel, layer: LayerConfig) -> CertifierConfig:
        section = cfg.certify
        r0 = section.r0 or surface.support_radius
        if section.sigma is not None:
            grid = tuple(section.sigma)
        else:
            grid = certifier_service.default_sigma_grid(r0, *section.sigma_k_range)
        loc = section.localization
        localization = LocalizationSpec(
            radius=loc.radius or r0,
            transverse_half_width=loc.transverse_half_width or 0.8 * layer.a,
            center=tuple(loc.center),
            plateau=loc.plateau,
            transverse_plateau=loc.transverse_plateau,
        )
        return CertifierConfig(
            r0=r0,
            sigma_grid=grid,
            localization=localization,
            quadrature=QuadratureSpec(**section.quadrature.model_dump()),
            delta_min=section.delta_min,
            n_jobs=section.n_jobs or get_worker_count(),
            strict=section.strict,
        )

    def solver_grid(self, cfg: RunConfig, lateral_bc: Optional[LateralBoundary] = None) -> SolverGrid:
        solve = cfg.solve
        return SolverGrid(
            r_max=solve.r_max,
            n_lateral=solve.n_lateral,
            n_transverse=solve.n_transverse,
            lateral_bc=lateral_bc or LateralBoundary(solve.lateral_bc),
            axisymmetric=solve.axisymmetric,
        )

    # Command bodies
    def geometry_summary(self, ctx: RunContext) -> GeometrySummary:
        surface, thickness = ctx.surface, ctx.thickness
        total = geometry_service.total_curvature(surface)
        positive = negative = None
        if surface.is_radial and surface.compactly_supported:
            positive = geometry_service.total_curvature(surface, part=CurvaturePart.POSITIVE).value
            negative = geometry_service.total_curvature(surface, part=CurvaturePart.NEGATIVE).value
        extrema = geometry_service.geometry_extrema(surface)
        return GeometrySummary(
            surface=surface.describe(),
            rho_m=_finite(thickness.rho_m),
            a=ctx.layer.a,
            thickness_valid=thickness.valid,
            c_plus=thickness.c_plus,
            c_minus=thickness.c_minus,
            total_curvature=total.value,
            total_curvature_error=total.error_estimate,
            total_curvature_positive=positive,
            total_curvature_negative=negative,
            K_min=extrema["K_min"],
            K_max=extrema["K_max"],
            M_min=extrema["M_min"],
            M_max=extrema["M_max"],
            kappa1_sq=ctx.layer.kappa1_sq,
        )

    def _sample_points(self, radius: float, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        r = 0.999 * radius * np.sqrt(rng.uniform(size=count))
        theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
        return r * np.cos(theta), r * np.sin(theta)

    def identity_suite(self, ctx: RunContext) -> List[IdentityCheck]:
        """Pointwise geometric identities, transverse identities, mollifier closed forms and potentials"""
        surface, layer, thickness = ctx.surface, ctx.layer, ctx.thickness
        checks = ctx.config.checks
        rng = np.random.default_rng(checks.seed)
        q1, q2 = self._sample_points(surface.support_radius, checks.samples, rng)
        u = layer.a * rng.uniform(-0.999, 0.999, size=checks.samples)
        c = geometry_service.compute_curvature(surface, q1, q2)
        results: List[IdentityCheck] = []

        def record(name: str, residual: float, tolerance: float) -> None:
            residual = float(residual)
            results.append(IdentityCheck(name=name, residual=residual, tolerance=tolerance,
                                         passed=bool(residual <= tolerance)))

        characteristic = geometry_service.verify_characteristic_equation(c)
        record("characteristic_eigenvalues", characteristic.eigenvalue_residual, 1e-10)
        record("characteristic_matrix", characteristic.matrix_residual, 1e-10)
        third = geometry_service.third_form_residual(c)
        record("third_form_curvature", third["curvature_form"], 1e-9)
        record("third_form_shape", third["shape_form"], 1e-9)
        scale = np.maximum(1.0, np.abs(c.K))
        record("gauss_product", np.max(np.abs(c.K - c.k_plus * c.k_minus) / scale), 1e-10)
        record("gauss_determinant_ratio", np.max(np.abs(c.K - np.linalg.det(c.h) / c.g_det) / scale), 1e-10)
        record("mean_half_sum", np.max(np.abs(c.M - 0.5 * (c.k_plus + c.k_minus)) / np.maximum(1.0, np.abs(c.M))),
               1e-10)

        metric = layer_service.layer_metric_at(c, u)
        record("layer_determinant", np.max(np.abs(metric.G_det - metric.G_det_direct) / metric.G_det), 1e-10)
        bounds = layer_service.sandwich_bounds(c, u)
        excess = max(float(thickness.c_minus - np.min(bounds)), float(np.max(bounds) - thickness.c_plus), 0.0)
        record("metric_sandwich", excess, 1e-10 + thickness.c_plus * GridSpec().tolerance)

        record("transverse_orthonormality", hamiltonian_service.orthonormality_residual(layer.a), 1e-12)
        record("transverse_u_squared", abs(hamiltonian_service.u_squared_identity(layer.a) - 1.0), 1e-10)
        reduction = hamiltonian_service.transverse_reduction(c, layer)
        exact = c.K * np.sqrt(c.g_det)
        record("transverse_reduction", np.max(np.abs(reduction - exact) / np.maximum(1.0, np.abs(exact))), 1e-10)

        r0 = layer.r0 or surface.support_radius
        for x in MOLLIFIER_CHECK_ARGUMENTS:
            sigma = x / r0
            closed = specfun_service.mollifier_norm_sq(sigma, r0)
            oracle = specfun_service.mollifier_norm_by_quadrature(sigma, r0)
            record(f"mollifier_norm[{x:g}]", abs(closed - oracle) / abs(oracle), 1e-7)
            mass = specfun_service.mollifier_exterior_mass(sigma, r0)
            oracle_mass = specfun_service.exterior_mass_by_quadrature(sigma, r0)
            record(f"mollifier_mass[{x:g}]", abs(mass - oracle_mass) / abs(oracle_mass), 1e-7)

        count = min(checks.potential_samples, checks.samples)
        p1, p2, pu = q1[:count], q2[:count], 0.5 * u[:count]
        direct = hamiltonian_service.effective_potential(surface, p1, p2, pu)
        generic = hamiltonian_service.generic_potential(surface, p1, p2, pu)
        record("effective_potential", np.max(np.abs(direct - generic) / np.maximum(1.0, np.abs(generic))), 1e-6)

        failed = [check.name for check in results if not check.passed]
        logger.info(f"Identity suite on {surface.name}: {len(results) - len(failed)}/{len(results)} passed")
        if failed:
            logger.warning(f"Identity checks above tolerance: {failed}")
        return results

    def _spectrum(self, ctx: RunContext) -> Tuple[Dict[str, Any], Optional[Dict[str, Any]], SpectralResult]:
        cfg = ctx.config
        solve = cfg.solve
        seed = DEFAULT_SEED if solve.seed is None else solve.seed
        grid = self.solver_grid(cfg)
        op = spectral_service.assemble(ctx.surface, ctx.layer, grid, ctx.thickness)
        if solve.dump_matrix:
            spectral_service.dump_matrix(op, solve.dump_matrix)
        result = spectral_service.lowest_eigenvalues(op, k=solve.k, tol=solve.tol, seed=seed)
        if solve.refine_levels:
            refined = spectral_service.refine_ground_state(
                ctx.surface, ctx.layer, grid, levels=solve.refine_levels, tol=solve.tol, seed=seed,
                thickness=ctx.thickness,
            )
            result.refinement_history = refined.refinement_history
        spectrum = to_jsonable(result)
        spectrum.update({
            "grid": to_jsonable(grid),
            "dimension": op.dimension,
            "max_asymmetry": op.max_asymmetry,
            "boundary": op.boundary,
            "below_discrete_threshold": bool(result.ground_state < op.discrete_threshold - BOUND_STATE_MARGIN),
        })
        bracketing = None
        if solve.bracket_r_max:
            report = spectral_service.bracket_threshold(
                ctx.surface, ctx.layer, solve.bracket_r_max, spacing=grid.h, n_transverse=grid.n_transverse,
                k=min(solve.k, 5), tol=solve.tol, seed=seed, axisymmetric=grid.axisymmetric,
            )
            bracketing = to_jsonable(report)
        return spectrum, bracketing, result

    def _consistency(self, ctx: RunContext, certificate: Dict[str, Any], result: SpectralResult) -> ConsistencyReport:
        """
        Cross-check of the certificate against the eigensolver.

        The Dirichlet truncation decides whether a level lies below the discrete
        threshold. The Neumann truncation bounds the ground energy from below,
        so its ground state must not exceed E_ub.
        """
        solve = ctx.config.solve
        seed = DEFAULT_SEED if solve.seed is None else solve.seed
        spectra = {self.solver_grid(ctx.config).lateral_bc: result}
        for bc in (LateralBoundary.DIRICHLET, LateralBoundary.NEUMANN):
            if bc not in spectra:
                spectra[bc] = spectral_service.solve(ctx.surface, ctx.layer, self.solver_grid(ctx.config, bc), k=1,
                                                     tol=solve.tol, seed=seed, thickness=ctx.thickness)
        dirichlet = spectra[LateralBoundary.DIRICHLET]
        neumann = spectra[LateralBoundary.NEUMANN]
        E_ub = certificate.get("E_ub")
        tolerance = max(1e-6 * ctx.layer.kappa1_sq, certificate.get("error_estimate") or 0.0)
        consistent = E_ub is not None and neumann.ground_state <= E_ub + tolerance
        return ConsistencyReport(
            lambda1=dirichlet.ground_state,
            lambda1_neumann=neumann.ground_state,
            E_ub=E_ub,
            tolerance=tolerance,
            upper_bound_consistent=bool(consistent),
            below_threshold=bool(dirichlet.ground_state < dirichlet.discrete_threshold - BOUND_STATE_MARGIN),
        )

    def run_command(self, command: str, cfg: RunConfig) -> Report:
        """
        Run one toolkit command and return its report.

        Module errors end up in the report's failure block with their exit
        code; NOT_CERTIFIED and failed identity or consistency checks are
        reported the same way.
        """
        if command not in COMMANDS:
            raise ValueError(f"Unknown command '{command}'")
        report = Report(
            schema_version=REPORT_SCHEMA_VERSION,
            command=command,
            config=cfg.model_dump(mode="json"),
            settings=get_settings_info(),
        )
        failure: Optional[LayerToolkitError] = None
        try:
            ctx = self.build_context(cfg, command)
            if command in ("curvature", "full"):
                report.geometry = self.geometry_summary(ctx)
            if command in ("check-identities", "full"):
                report.identities = self.identity_suite(ctx)
                failed = [check.name for check in report.identities if not check.passed]
                if failed:
                    failure = IdentityCheckFailed(f"Identity checks failed: {', '.join(failed)}",
                                                  details={"failed": failed})
            if command in ("certify", "full"):
                certificate = certifier_service.certify(
                    ctx.surface, ctx.layer, self.certifier_config(cfg, ctx.surface, ctx.layer), ctx.thickness,
                )
                report.certificate = to_jsonable(certificate)
                if certificate.status is CertificateStatus.NOT_CERTIFIED and failure is None:
                    failure = NotCertified(
                        f"No sigma reached t_min < -{certificate.delta_min:g} kappa_1^2 "
                        f"(best t_min {certificate.t_min:.3e})",
                        details={"best_t_min": certificate.t_min},
                    )
            if command in ("solve", "full"):
                report.spectrum, report.bracketing, result = self._spectrum(ctx)
            if command == "full" and report.certificate is not None:
                report.consistency = self._consistency(ctx, report.certificate, result)
                if not report.consistency.upper_bound_consistent and failure is None:
                    failure = ConsistencyViolation(
                        f"Eigensolver ground energy {report.consistency.lambda1_neumann:.8f} exceeds "
                        f"E_ub={report.consistency.E_ub}",
                    )
        except LayerToolkitError as e:
            logger.error(f"{command} failed: {e.code}: {e.message}")
            failure = e
        if failure is not None:
            report.failure = FailureReport(**to_jsonable(failure.to_dict()))
            report.exit_code = failure.exit_code
        return report

    # Output
    def tables(self, report: Report) -> Dict[str, List[Dict[str, Any]]]:
        """Flat tables for CSV output"""
        tables: Dict[str, List[Dict[str, Any]]] = {}
        if report.identities:
            tables["identities"] = [check.model_dump() for check in report.identities]
        if report.certificate and report.certificate.get("sweep"):
            tables["sigma_sweep"] = report.certificate["sweep"]
        if report.spectrum:
            tables["spectrum"] = [
                {"index": i + 1, "eigenvalue": value, "residual": residual}
                for i, (value, residual) in enumerate(zip(report.spectrum["eigenvalues"],
                                                          report.spectrum["residuals"]))
            ]
            if report.spectrum.get("refinement_history"):
                tables["refinement"] = report.spectrum["refinement_history"]
        if report.bracketing:
            tables["bracketing"] = [
                {"r_max": row["r_max"], "n_lateral": row["n_lateral"], "index": i + 1,
                 "neumann": neumann, "dirichlet": dirichlet, "ordering_ok": row["ordering_ok"]}
                for row in report.bracketing["rows"]
                for i, (neumann, dirichlet) in enumerate(zip(row["neumann"], row["dirichlet"]))
            ]
        if report.geometry:
            tables["geometry"] = [report.geometry.model_dump()]
        return tables

    def render(self, report: Report, fmt: str = "json") -> str:
        if fmt == "json":
            return json.dumps(report.model_dump(mode="json"), indent=2)
        buffer = io.StringIO()
        for name, rows in self.tables(report).items():
            buffer.write(f"# {name}\n")
            self._write_csv(buffer, rows)
            buffer.write("\n")
        return buffer.getvalue()

    def _write_csv(self, stream, rows: List[Dict[str, Any]]) -> None:
        if not rows:
            return
        flat = [{k: json.dumps(v) if isinstance(v, (dict, list)) else v for k, v in row.items()} for row in rows]
        writer = csv.DictWriter(stream, fieldnames=list(flat[0].keys()))
        writer.writeheader()
        writer.writerows(flat)

    def write_report(self, report: Report, path: str, fmt: str = "json") -> List[str]:
        """
        Write the report; CSV output goes to one file per table next to path.

        Returns:
            the written file paths
        """
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            target.write_text(self.render(report, "json"))
            written = [str(target)]
        else:
            written = []
            for name, rows in self.tables(report).items():
                table_path = target.with_name(f"{target.stem}_{name}.csv")
                with open(table_path, "w", newline="") as stream:
                    self._write_csv(stream, rows)
                written.append(str(table_path))
        logger.info(f"Report written to {', '.join(written)}")
        return written


# Create a singleton instance
report_service = ReportService()
