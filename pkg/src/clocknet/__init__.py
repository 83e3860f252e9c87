"""Simulation and analysis of atomic-clock networks sharing entangled GHZ cascades."""
from .model import (CascadePlan, CascadeSpec, FeedbackMode, NetworkConfig, NodeSpec, Scheme, config_from_dict,
                    equal_network, load_scenario, validate_config)

__all__ = [
    "CascadePlan", "CascadeSpec", "FeedbackMode", "NetworkConfig", "NodeSpec", "Scheme", "config_from_dict",
    "equal_network", "load_scenario", "validate_config",
]
