"""Adaptive finite element level-set solver for two-phase incompressible flow in 2D.

Submodules: ``config`` (constants, scenario files), ``mesh`` (quadtree with
hanging nodes), ``fem`` (Lagrange spaces and assembly), ``levelset``
(transport, entropy viscosity, reinitialization), ``nsolver`` (BDF2
pressure correction), ``coupling`` (blending, surface tension, time step),
``problems``, ``runner``, ``output`` and ``cli``.

Importing the package itself stays free of numpy so that the command line
entry point can set thread limits first.
"""

__version__ = "0.1.0"
