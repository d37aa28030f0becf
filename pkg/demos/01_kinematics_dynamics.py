"""Tour of the rigid-body layer: kinematics, dynamics, task-space model.

Loads the bundled 7-DOF arm, pokes at the quantities every controller in
this package is built from, and verifies a couple of identities numerically.
"""

import numpy as np

from oscbf import (
    bias_forces,
    forward_kinematics,
    jacobian,
    load_robot,
    mass_matrix,
    op_space_quantities,
)

np.set_printoptions(precision=3, suppress=True)

robot = load_robot("panda")
q = robot.home_configuration()
qd = 0.2 * np.ones(robot.n_q)

print(f"model: {robot.name} with {robot.n_q} joints and {robot.n_spheres} collision spheres")

fk = forward_kinematics(robot, q)
print("\nEE position at home:", fk.ee_pos)
print("first collision-sphere centers:\n", fk.sphere_centers[:3])

J = jacobian(robot, q)
print("\ngeometric Jacobian (linear rows):\n", J[:3])

M = mass_matrix(robot, q)
c, g = bias_forces(robot, q, qd)
print("\nmass matrix diagonal:", np.diag(M))
print("gravity torques:", g)
print("Coriolis torques at qd=0.2:", c)

oq = op_space_quantities(robot, q, qd)
print("\ntask-space inertia (diagonal):", np.diag(oq.lam))
Jt = oq.J[list(oq.task_rows)]
print("|| J N || (null space is invisible at the EE):", np.max(np.abs(Jt @ oq.N)))
print("|| Lambda (J M^-1 J') - I ||:",
      np.max(np.abs(oq.lam @ (Jt @ oq.M_inv @ Jt.T) - np.eye(6))))
