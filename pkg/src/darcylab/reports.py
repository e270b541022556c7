"""Report serialization: structured JSON, flat CSV tables, atomic writes."""

from __future__ import annotations

import json
import os
import platform
import tempfile


def environment_metadata() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {
        "darcylab": __version__,
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "machine": platform.machine(),
    }


def atomic_write_text(path: str, text: str) -> None:
    """Write through a temp file and rename; readers never see partials."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_jsonable) + "\n"


def atomic_write_json(path: str, obj) -> None:
    atomic_write_text(path, dump_json(obj))


def _jsonable(value):
    import numpy as np

    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if hasattr(value, "to_dict"):
        return value.to_dict()
    raise TypeError(f"not JSON serializable: {type(value)}")


def _flatten(prefix: str, value, out: dict) -> None:
    if isinstance(value, dict):
        for k in sorted(value, key=str):
            _flatten(f"{prefix}.{k}" if prefix else str(k), value[k], out)
    elif isinstance(value, (list, tuple)):
        if all(isinstance(v, (int, float)) for v in value) and len(value) <= 9:
            for i, v in enumerate(value):
                out[f"{prefix}[{i}]"] = v
    else:
        out[prefix] = value


_PREFERRED_ORDER = ("eps", "sigma", "resolution", "count")


def points_table(points: list[dict]) -> str:
    """Flat comma-separated table, one row per ladder point.

    Columns: the preferred identifiers first, then the remaining flattened
    keys in sorted order (the documented fixed ordering).
    """
    rows = []
    for p in points:
        flat = {}
        _flatten("", p, flat)
        drop = [k for k, v in flat.items()
                if not isinstance(v, (int, float, bool, str))
                or k.split(".")[-1] == "wall_time"]  # volatile, JSON only
        for k in drop:
            del flat[k]
        rows.append(flat)
    keys = set()
    for r in rows:
        keys.update(r)
    ordered = [k for k in _PREFERRED_ORDER if k in keys]
    ordered += sorted(k for k in keys if k not in _PREFERRED_ORDER)
    lines = [",".join(ordered)]
    for r in rows:
        cells = []
        for k in ordered:
            v = r.get(k, "")
            if isinstance(v, float):
                cells.append(repr(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def fits_footer(fits: dict) -> str:
    lines = ["fit,exponent,prefactor,residual,target,deviation"]
    for name in sorted(fits, key=str):
        val = fits[name]
        d = val.to_dict() if hasattr(val, "to_dict") else val
        if isinstance(d, dict) and "exponent" in d:
            lines.append(
                f"{name},{d['exponent']!r},{d['prefactor']!r},"
                f"{d['residual']!r},{d.get('target')},{d.get('deviation')}")
        else:
            lines.append(f"{name},{d},,,,")
    return "\n".join(lines) + "\n"
