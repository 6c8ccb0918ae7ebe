"""Mixed finite element solver for the Darcy-Forchheimer equations."""

from .fespace import FeFunction, FeSpace, dg_space, rt_space
from .forms import ModelParams
from .mesh import (GAMMA_P, GAMMA_U, INTERIOR, Mesh, load_mesh, refine_uniform, save_mesh,
                   structured_rectangle)
from .nlsolve import NewtonConfig, ProblemData, newton_solve

__all__ = ["FeFunction", "FeSpace", "dg_space", "rt_space", "ModelParams", "GAMMA_P",
           "GAMMA_U", "INTERIOR", "Mesh", "load_mesh", "refine_uniform", "save_mesh",
           "structured_rectangle", "NewtonConfig", "ProblemData", "newton_solve"]

__version__ = "0.1.0"
