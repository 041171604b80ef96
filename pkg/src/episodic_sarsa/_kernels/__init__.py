"""Episode kernels: compiled core when built, pure-Python fallback otherwise.

Both backends expose ``policy_table``, ``run_episode`` and ``run_batch`` with
identical signatures and bit-identical results.
"""

from types import ModuleType

from . import _fallback

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

BACKENDS: dict[str, ModuleType] = {"python": _fallback}
if _core is not None:
    BACKENDS["cython"] = _core

DEFAULT = "cython" if _core is not None else "python"


def get_backend(name: str | None = None) -> ModuleType:
    name = DEFAULT if name is None else name
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
