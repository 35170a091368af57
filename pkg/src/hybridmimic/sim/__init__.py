"""Penalty-contact articulated-body simulator.

The compiled kernel is used when it was built; otherwise the numpy kernel is
selected. Set ``HYBRIDMIMIC_BACKEND=python`` to force the fallback.
"""
from . import backend
from .model import (Humanoid, KernelModel, NonFiniteState, PenetrationAtReset, PhysicsWorld, RigidObject,
                    SimError, SimState)
from .world import (action_to_target, fk_state, human_state, object_state, penetration_depth,
                    read_contact_forces, reset, step, target_to_action)

__all__ = [
    "Humanoid", "KernelModel", "NonFiniteState", "PenetrationAtReset", "PhysicsWorld", "RigidObject",
    "SimError", "SimState", "action_to_target", "backend", "fk_state", "human_state", "object_state",
    "penetration_depth", "read_contact_forces", "reset", "step", "target_to_action",
]
