"""Fatigue awareness for a cable-driven continuum robot with a hinge-beam backbone.

Submodules:

* ``prbm``        pseudo-rigid-body chain: kinematics, stiffness, gravity, cable Jacobian
* ``statics``     constrained equilibrium, limit pose, end-stop torque
* ``ident``       stiffness identification and the tau_lim -> k_hat surrogate
* ``detection``   limit-event detection on torque/displacement telemetry
* ``fatigue``     phase classification and trend-change detection over cycles
* ``geometry``    stopper sizing, compression safety, tip-drift metrics
* ``synth``       seeded synthetic data and brute-force oracles
* ``cli``         command-line front end
"""

__version__ = "0.1.0"
