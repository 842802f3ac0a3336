"""Positive scalar curvature metrics through surgery, handles and s-invariants.

Modules:
    profiles, warp_profiles  warping functions and the surgery-metric construction
    curvature, fd_oracle     curvature formulas, certificates, finite-difference oracle
    deformation              deformation of the surgery metric through psc metrics
    handles                  handle attachment, collars and boundary products
    invariants               plumbing graphs, exact signatures and s-invariants
    pipeline, cli            end-to-end workflow and command line
"""

__version__ = "0.1.0"
