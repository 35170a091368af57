import numpy as np
import pytest

from hybridmimic.geometry import Skeleton
from hybridmimic.scenario import box_mesh, make_scenario
from hybridmimic.sim import Humanoid, PhysicsWorld, RigidObject


@pytest.fixture(scope="session")
def scenario():
    return make_scenario()


@pytest.fixture(scope="session")
def world(scenario):
    return scenario.world()


def probe_skeleton(hinge_limit=50.0):
    """Root, a two-link pendulum and two dummy 'wrists' hanging off the root."""
    names = ("root", "upper", "lower", "lw", "rw")
    parents = np.array([-1, 0, 1, 0, 0])
    offsets = np.array([[0, 0, 0], [0, 0, 0], [0, 0, -0.3], [-0.5, 0, 0], [0.5, 0, 0]], dtype=float)
    lim = [(-hinge_limit, hinge_limit)]
    return Skeleton(names, parents, offsets, ("body",) * 5, ("", "x", "x", "", ""),
                    (np.zeros((0, 2)), lim, lim, np.zeros((0, 2)), np.zeros((0, 2))), (3, 4), (3, 4))


def small_box(mass=1.0, size=0.1):
    v, f = box_mesh(size, 2)
    return RigidObject.box(v, f, mass, size)


def pendulum_world(**kw):
    skel = probe_skeleton()
    hum = Humanoid(skel, np.array([0, 1.0, 0.5, 0, 0]), np.array([[0, 0, 0], [0, 0, -0.3], [0, 0, -0.25], [0, 0, 0], [0, 0, 0]]),
                   kp=0.0, kd=0.0, torque_limit=100.0, armature=0.01,
                   sphere_joint=[3, 3, 4, 4], sphere_local=np.zeros((4, 3)), sphere_radius=[0.01] * 4,
                   sensors=[[0, 1], [2, 3]])
    kw.setdefault("has_table", False)
    kw.setdefault("has_ground", False)
    return PhysicsWorld(hum, small_box(), **kw)


def probe_hand_world(mass=0.4):
    """A free-sliding point body (the root) with four sensor spheres below it."""
    skel = probe_skeleton()
    local = np.array([[-0.03, -0.03, -0.02], [0.03, -0.03, -0.02], [-0.03, 0.03, -0.02], [0.03, 0.03, -0.02]])
    hum = Humanoid(skel, np.array([mass, 0, 0, 0, 0]), np.zeros((5, 3)), kp=0.0, kd=0.0, torque_limit=1.0,
                   armature=0.01, sphere_joint=[0, 0, 0, 0], sphere_local=local, sphere_radius=[0.01] * 4,
                   sensors=[[0, 1], [2, 3]], root_free=True)
    return PhysicsWorld(hum, small_box())


@pytest.fixture(scope="session")
def target(scenario):
    from hybridmimic.targets import NoiseConfig, synth_reference
    return synth_reference(scenario, NoiseConfig(joint_sigma=0.005), 0)
