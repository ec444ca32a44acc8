"""MPC trajectory-tracking stack for overactuated tilt-rotor aerial vehicles.

Library layout:

* :mod:`tiltmpc.so3`, :mod:`tiltmpc.dynamics` -- attitude algebra and
  rigid-body dynamics.
* :mod:`tiltmpc.allocation` -- minimum-norm actuator allocation.
* :mod:`tiltmpc.qp`, :mod:`tiltmpc.ocp` -- dense active-set QP and the
  multiple-shooting real-time-iteration solver.
* :mod:`tiltmpc.controllers` -- the wrench-level and actuator-level MPC.
* :mod:`tiltmpc.ekf`, :mod:`tiltmpc.residual` -- disturbance observer and the
  offline-trained residual wrench model.
* :mod:`tiltmpc.simulator`, :mod:`tiltmpc.trajectories`,
  :mod:`tiltmpc.metrics` -- deterministic closed-loop benchmark harness.
* :mod:`tiltmpc.config`, :mod:`tiltmpc.cli`, :mod:`tiltmpc.plots` --
  experiment configuration, command line, figure rendering.
"""

__version__ = "0.1.0"
