"""Simulator-in-the-loop identification of robot-object interaction physics.

Modules:
    geometry   poses, meshes, mass properties and ADD / ADD-S metrics
    dynamics   Control-Hit-Slide episode simulator
    optimize   particle swarm and the identification objectives
    viewpoint  silhouette rendering and camera pose refinement
    fileio     trajectory, mask, episode and manifest formats
    cli        the ``twin-ident`` command
"""

__version__ = "0.1.0"
