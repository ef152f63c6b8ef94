import os


SCENARIO_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'scenarios'))

LTI_STATIC = os.path.join(SCENARIO_DIR, 'lti_static.scn')
LTI_TRACKING = os.path.join(SCENARIO_DIR, 'lti_tracking.scn')
ROUNDABOUT = os.path.join(SCENARIO_DIR, 'roundabout.scn')
ROUNDABOUT_LEARNED = os.path.join(SCENARIO_DIR, 'roundabout_learned.scn')

# relative tolerance of finite-difference checks
FD_REL_TOL = 1e-4

# LTI loop whose tracking error responds linearly to disturbance amplitude, target speed
# and perception noise: static target at t = 0, u0 = u*, zero initial tracking error
ISS_SCENARIO = """
name = "lti_iss"
horizon = 40
substeps = 20
seed = 3

[plant]
kind = "lti"
A = [[-1.0, 0.0], [0.0, -1.0]]
B = [[1.0, 0.0], [0.0, 1.0]]
E = [[1.0, 0.0], [0.0, 1.0]]
Q = [[2.0, 0.0], [0.0, 2.0]]

[cost]
kind = "quadratic"
Ru = [[1.0, 0.0], [0.0, 1.0]]
Rx = [[1.0, 0.0], [0.0, 1.0]]

[cost.x_ref]
kind = "circle"
center = [0.5, 0.5]
radius = 0.5
speed = 0.0

[controller]
eta = 0.1
tau = 2.0
u0 = [0.5, 0.25]

[controller.constraint]
kind = "box"
lower = [-3.0, -3.0]
upper = [3.0, 3.0]

[disturbance]
kind = "sinusoid"
amplitude = 0.0
frequency = 0.5

[perception]
mode = "noisy"
noise = 0.0
"""
