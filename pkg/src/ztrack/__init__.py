"""ztrack: 2D Lagrangian front-tracking grain growth with Smith-Zener pinning.

A boundary network of nodes and segments evolves by curvature flow under
an Arrhenius mobility, while second-phase particles pin migrating grain
boundaries either as explicitly discretized circles or as point-like
immobile Z-nodes. Laguerre-Voronoi tessellation seeds the polycrystal;
a statistics pipeline tracks grain size metrics, particle fractions and
pinned boundary length over the anneal.
"""

__version__ = "0.1.0"
