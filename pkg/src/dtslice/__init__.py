"""Digital-twin-assisted network slicing for multicast short-video streaming."""

from .domain import ScenarioConfig, build_catalog, load_scenario, validate_scenario

__version__ = "0.1.0"

__all__ = ["ScenarioConfig", "build_catalog", "load_scenario", "validate_scenario", "__version__"]
