"""Support-estimation safety layers and derivative-free recovery control.

A laboratory for inferring implicit state constraints from demonstrations
with time-varying one-class SVM support estimates, and for switching between
a behavior-cloned policy and a derivative-free recovery controller that
climbs the support decision function, in small 2D quasi-static manipulation
environments.
"""

__version__ = "0.1.0"
