"""Software-defined QKD network emulator.

Simulated quantum links feeding a real key-management, key-forwarding and
SDN control plane, with ETSI-style key delivery interfaces on top.
"""

from importlib import resources

__version__ = "0.1.0"


def builtin_config_path(name: str = "madqci") -> str:
    """Filesystem path of a configuration shipped with the package."""
    return str(resources.files(__package__) / "configs" / f"{name}.yaml")
