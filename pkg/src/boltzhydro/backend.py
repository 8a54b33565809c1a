"""Backend selection: compiled extension if available, NumPy fallback otherwise."""
from __future__ import annotations

try:
    from . import _corekern as core

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - exercised when built with BOLTZHYDRO_PURE
    from . import _fallback as core

    BACKEND = "numpy-fallback"

gamma_batch = core.gamma_batch
assemble_rows = core.assemble_rows
poly_tables_gain = core.poly_tables_gain
cross_tables_gain = core.cross_tables_gain
linear_poly_rows = core.linear_poly_rows
interp_eval = core.interp_eval
set_num_threads = core.set_num_threads
get_max_threads = core.get_max_threads
