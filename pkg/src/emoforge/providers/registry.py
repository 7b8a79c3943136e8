"""Provider plugin selection.

Config keys ``providers.<role> = <plugin name>`` pick the implementation per
role; the ``EMOFORGE_PROVIDERS`` environment variable overrides them, either
as a single plugin name for every role or as ``role=name`` pairs separated
by commas. Unknown plugins degrade to mocks with a warning so desk-scale
runs never require GPU weights.
"""

from __future__ import annotations

import logging
import os
from typing import Callable, Mapping

from emoforge.providers.base import ProviderSuite
from emoforge.providers.mock import MockSuite

log = logging.getLogger(__name__)

ENV_OVERRIDE = "EMOFORGE_PROVIDERS"

# plugin name -> factory(d, seed) -> ProviderSuite
_PLUGINS: dict[str, Callable[..., ProviderSuite]] = {}


def register_plugin(name: str, factory: Callable[..., ProviderSuite]) -> None:
    _PLUGINS[name] = factory


register_plugin("mock", MockSuite)


def _parse_env(value: str) -> dict[str, str]:
    value = value.strip()
    if not value:
        return {}
    if "=" not in value:
        return {role: value for role in ProviderSuite.ROLES}
    out: dict[str, str] = {}
    for part in value.split(","):
        role, _, name = part.partition("=")
        out[role.strip()] = name.strip()
    return out


def build_suite(
    selection: Mapping[str, str] | None = None,
    *,
    d: int = 32,
    seed: int = 0,
    env: Mapping[str, str] | None = None,
    **mock_kwargs,
) -> ProviderSuite:
    """Build a suite honoring per-role selection with mock fallback.

    Per-role mixing instantiates each named plugin suite and picks the role
    off it, so a real encoder can be combined with mock everything-else.
    """
    env = os.environ if env is None else env
    merged = dict(selection or {})
    override = env.get(ENV_OVERRIDE)
    if override:
        merged.update(_parse_env(override))

    mock = MockSuite(d=d, seed=seed, **mock_kwargs)
    names = {merged.get(role, "mock") for role in ProviderSuite.ROLES}
    suites: dict[str, ProviderSuite] = {"mock": mock}
    for name in names:
        if name in suites:
            continue
        factory = _PLUGINS.get(name)
        if factory is None:
            log.warning("unknown provider plugin %r; falling back to mocks", name)
            continue
        suites[name] = factory(d=d, seed=seed)

    kwargs = {}
    for role in ProviderSuite.ROLES:
        name = merged.get(role, "mock")
        source = suites.get(name, mock)
        kwargs[role] = getattr(source, role)
    chosen = sorted({merged.get(r, "mock") for r in ProviderSuite.ROLES})
    return ProviderSuite(name="+".join(chosen), perceptual=None, **kwargs)
