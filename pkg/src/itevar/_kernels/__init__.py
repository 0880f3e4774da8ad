"""Kernel backend selection.

The compiled extension is used when available; set ITEVAR_BACKEND=python
to force the pure NumPy fallback or ITEVAR_BACKEND=c to require the
compiled core. Both backends produce bit-identical results.
"""

import os

from . import pure as _pure

_requested = os.environ.get("ITEVAR_BACKEND", "auto").lower()

if _requested not in ("auto", "c", "python"):
    raise RuntimeError(f"unknown ITEVAR_BACKEND value: {_requested!r}")

if _requested == "python":
    impl = _pure
else:
    try:
        from . import _core as impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "c":
            raise RuntimeError(
                "ITEVAR_BACKEND=c but the compiled kernel is not built; "
                "reinstall the package or use ITEVAR_BACKEND=python"
            ) from None
        impl = _pure

BACKEND = impl.BACKEND_NAME
MODE_REG = impl.MODE_REG
MODE_EFF = impl.MODE_EFF

build_tree = impl.build_tree
reg_forest_predict = impl.reg_forest_predict
reg_forest_predict_oob = impl.reg_forest_predict_oob
eff_forest_accumulate = impl.eff_forest_accumulate
eff_forest_accumulate_oob = impl.eff_forest_accumulate_oob
