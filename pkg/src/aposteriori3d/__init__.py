"""Tetrahedral finite-element workbench for a posteriori error estimation of
interior-penalty DG and mixed Raviart-Thomas discretisations."""

from .est_alt import estimate_alternative
from .est_equilibrated import curl_free_potential, equilibrated_flux, estimate_equilibrated
from .est_residual import estimate_residual_ipdg, estimate_residual_mixed, estimate_standard_ipdg
from .mesh import Mesh, build_structured_cube, patch_of
from .report import EstimatorReport
from .schemes import Problem, SchemeOutput, solve
from .workbench import (StudyConfig, convergence_study, exact_error, export_vtk, manufactured_problem,
                        prager_synge_check)

__version__ = "0.1.0"

__all__ = ["Mesh", "build_structured_cube", "patch_of", "Problem", "SchemeOutput", "solve", "EstimatorReport",
           "estimate_residual_ipdg", "estimate_residual_mixed", "estimate_standard_ipdg", "estimate_equilibrated",
           "curl_free_potential", "equilibrated_flux", "estimate_alternative", "manufactured_problem",
           "exact_error", "prager_synge_check", "StudyConfig", "convergence_study", "export_vtk"]
