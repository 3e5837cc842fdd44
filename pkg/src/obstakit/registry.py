"""Named nodal expressions selectable from configuration files.

Configuration values pick target fields, loads, and bounds by name instead
of through a general expression parser.  A name is either a registry entry
or the literal form ``const:<value>``.
"""

import numpy as np

from .errors import ConfigError
from .mesh import interpolate

_EXPRESSIONS = {
    "zero": lambda x1, x2: np.zeros_like(x1),
    "one": lambda x1, x2: np.ones_like(x1),
    # tilted plane through (0, 1) and (1, 0), scaled to +-10 at the corners
    "tilted-plane": lambda x1, x2: 10.0 * (-x1 - x2 + 1.0),
    # polynomial bump vanishing on the boundary with unit peak
    "bump": lambda x1, x2: 16.0 * x1 * x2 * (1.0 - x1) * (1.0 - x2),
    "sine": lambda x1, x2: np.sin(np.pi * x1) * np.sin(np.pi * x2),
}


def expression_names():
    return sorted(_EXPRESSIONS)


def field_expression(name):
    """Resolve a field name to a callable of the two coordinates."""
    name = str(name).strip()
    if name.startswith("const:"):
        try:
            value = float(name[len("const:"):])
        except ValueError as exc:
            raise ConfigError(f"bad constant field {name!r}") from exc
        if not np.isfinite(value):
            raise ConfigError(f"constant field must be finite, got {name!r}")
        return lambda x1, x2, v=value: np.full_like(np.asarray(x1, dtype=float), v)
    try:
        return _EXPRESSIONS[name]
    except KeyError:
        raise ConfigError(
            f"unknown field {name!r}; choose one of {', '.join(expression_names())} "
            "or const:<value>"
        ) from None


def nodal_field(mesh, name):
    """Evaluate a named field on the interior nodes of a mesh."""
    return interpolate(mesh, field_expression(name))


def nodal_bound(mesh, name, side):
    """Evaluate a bound selector; 'none' leaves the side unconstrained.

    side is 'lower' or 'upper' and fixes the sign of the infinity used for
    the unconstrained case.
    """
    name = str(name).strip()
    if name == "none":
        fill = -np.inf if side == "lower" else np.inf
        return np.full(mesh.n_interior, fill)
    return nodal_field(mesh, name)
