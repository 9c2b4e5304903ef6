"""Shared session fixtures: the reference run and its derived traces.

The reference configuration (N=12, 4th-order stencils, band-limited
random metric with amplitude 0.05 and seed 0, adaptive time step to
t=2e-5) is expensive, so every suite that needs it shares one instance.
"""

import numpy as np
import pytest

from l2flow import TorusGrid, random_band_limited_metric
from l2flow import flow

REF_N = 12
REF_EPS = 0.05
REF_SEED = 0
REF_T_FINAL = 2e-5


@pytest.fixture(scope="session")
def ref_metric():
    grid = TorusGrid(REF_N, fd_order=4)
    return random_band_limited_metric(grid, REF_EPS, 1, seed=REF_SEED)


@pytest.fixture(scope="session")
def ref_trace(ref_metric):
    """Adaptive-dt reference run with snapshots every 5 steps."""
    return flow.run(
        ref_metric, REF_T_FINAL, snapshot_every=5,
        deriv_norms=True, order3_stride=3,
    )


@pytest.fixture(scope="session")
def dense_tail(ref_trace):
    """Short continuation of the reference run with per-step snapshots.

    Quasi-geodesic families need the snapshot spacing to resolve the
    admissible freeze interval S, which the adaptive schedule of the
    main trace cannot; this tail re-runs the settled end state densely.
    """
    return flow.run(
        ref_trace.states[-1].metric, t_final=1.2e-6, dt=1e-7,
        snapshot_every=1, deriv_norms=False,
    )


@pytest.fixture(scope="session")
def fixed_dt_traces(ref_metric):
    """The reference initial data integrated at dt0 and dt0/2."""
    out = {}
    for dt in (5e-7, 2.5e-7):
        out[dt] = flow.run(
            ref_metric, t_final=1e-5, dt=dt, snapshot_every=4,
            deriv_norms=False,
        )
    return out
