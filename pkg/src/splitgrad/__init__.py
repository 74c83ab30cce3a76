"""Constructive machinery for split-matrix differential inclusions.

Modules:
    matops      -- 2x2 / block matrix algebra, split cones, minor bounds
    tnconfig    -- T_N configuration certification and large T_5 sets
    laminate    -- laminates of finite order and splitting trees
    synth       -- piecewise-affine convex-integration synthesis
    analyzer    -- grid diagnostics for (approximately) split fields
    families    -- closed-form map fixtures
    heisenberg  -- Heisenberg lifts of area-preserving planar maps
    cli         -- command-line front end
"""

__version__ = "0.1.0"
