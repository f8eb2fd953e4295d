"""Routing kernel selection.

Prefers the compiled extension when it is built; falls back to the pure
Python implementation otherwise.  Set AQPTREE_PURE_PYTHON=1 to force the
fallback (used by the parity tests and the benchmark).
"""

import os

if os.environ.get("AQPTREE_PURE_PYTHON"):
    from . import _kernels_py as impl
else:
    try:
        from . import _kernels as impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as impl

IMPL_NAME = impl.IMPL_NAME
TreeTopo = impl.TreeTopo
TreeStats = impl.TreeStats
find_leaf = impl.find_leaf
route_insert = impl.route_insert
route_delete = impl.route_delete
route_catchup = impl.route_catchup
node_counts = impl.node_counts
node_catchup = impl.node_catchup
node_top = impl.node_top
node_bot = impl.node_bot
node_flags = impl.node_flags
set_absorbing = impl.set_absorbing
get_absorbing = impl.get_absorbing
reset_node = impl.reset_node
copy_node = impl.copy_node
load_node = impl.load_node
