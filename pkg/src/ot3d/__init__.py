"""Semi-discrete L2 optimal transport in 3D.

Transport maps between a tetrahedral mesh carrying a piecewise-linear
density and a finite set of weighted points, computed by maximizing a
concave objective over power-diagram weights; includes a Lloyd sampler
and a morphing front end built on the transport solver.
"""

__version__ = "0.1.0"

from .cvt import lifted_energy, lloyd, quantization_energy, sample_mesh
from .errors import InputError, NumericError, Ot3dError
from .morphing import (
    MorphMesh,
    build_morph,
    emit_frames,
    extract_dual,
    load_morph,
    save_morph,
)
from .restricted import KERNEL_BACKEND, brute_force_evaluate, evaluate
from .sites import SiteSet, load_sites, save_sites
from .tetmesh import TetMesh, load_mesh, save_mesh
from .transport import (
    Objective,
    SolveReport,
    build_level_plan,
    load_weights,
    objective,
    regress_weights,
    save_weights,
    solve_multilevel,
    solve_single_level,
)

__all__ = [
    "__version__",
    "KERNEL_BACKEND",
    "InputError",
    "MorphMesh",
    "NumericError",
    "Objective",
    "Ot3dError",
    "SiteSet",
    "SolveReport",
    "TetMesh",
    "brute_force_evaluate",
    "build_level_plan",
    "build_morph",
    "emit_frames",
    "evaluate",
    "extract_dual",
    "lifted_energy",
    "lloyd",
    "load_mesh",
    "load_morph",
    "load_sites",
    "load_weights",
    "objective",
    "quantization_energy",
    "regress_weights",
    "sample_mesh",
    "save_mesh",
    "save_morph",
    "save_sites",
    "save_weights",
    "solve_multilevel",
    "solve_single_level",
]
