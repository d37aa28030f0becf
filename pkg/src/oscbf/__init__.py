"""Real-time safety filtering for serial-chain manipulators.

A numpy toolkit for operational-space control with barrier-function safety
filters: rigid-body kinematics/dynamics, a library of barrier functions with
relative-degree handling, a dense slack-relaxed interior-point QP solver,
velocity- and torque-level safety-filter controllers with task-consistent
objectives, a deterministic simulator/benchmark harness, and a WebSocket
teleoperation bridge.
"""

from .errors import (
    DegenerateGeometry,
    SimDiverged,
    SingularOpSpaceInertia,
    WrongRelativeDegree,
)
from .models import load_robot
from .robot import (
    ChainFrames,
    CollisionSphere,
    JointSpec,
    LinkInertial,
    OpSpaceQuantities,
    RobotModel,
    RobotState,
    bias_forces,
    forward_kinematics,
    jacobian,
    jacobian_partials,
    jdot_qd,
    kinematic_quantities,
    kinetic_energy,
    mass_matrix,
    op_space_quantities,
    point_jacobian,
    rnea,
)

__version__ = "0.1.0"
