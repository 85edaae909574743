"""
A convergence and effectivity study
===================================

The workbench runs a configuration over several resolutions and writes a CSV
table (one row per level) plus VTK files for inspection.  The same study is
available from the command line as ``aposteriori3d study``.
"""

import sys
import tempfile
from pathlib import Path

from aposteriori3d import StudyConfig, convergence_study, export_vtk
from aposteriori3d.workbench import case_mesh, rates

config = StudyConfig(case="sine3", n_list=[1, 2, 4], scheme="ipdg", p=1,
                     estimators=["residual", "equilibrated"])
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
levels, text = convergence_study(config, out)
print(text)
print("error reductions:", [round(r, 3) for r in rates([lv.error.total for lv in levels])])

# per-element estimator and error on the finest level
finest = levels[-1]
mesh = case_mesh(config.case, finest.n)
path = export_vtk(mesh, out / "finest.vtk", {"error2": finest.error.per_element,
                                             "equilibrated_eta2": finest.reports["equilibrated"].eta2})
print("wrote", out / config.csv_name, "and", path)
