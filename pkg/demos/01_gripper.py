# %% [markdown]
# # Gripper model walk-through
#
# Servo setting to force, the finger linkage, and what happens when the two
# fingers close on an object that is not centered between them.

# %%
import numpy as np

from magpie_sim.gripper import (ForceModel, GraspSpec, GripperState, aperture, default_gripper,
                                fingertip_force, force_to_setting, min_grip_force, setting_to_force)

fm = ForceModel()
for x in (0, 100, 200, 400, 600, 800, 1023):
    print(f"setting {x:4d} -> {setting_to_force(fm, x):6.3f} N")

# the quadratic above the knee meets the line with matching slope
print("quadratic coefficients:", fm.quad_coeffs)
print("setting for 18.4 N:", force_to_setting(fm, 18.4))

# %% [markdown]
# ## Linkage
# Each finger is a 4-bar; the crank angle sets the contact-face position.

# %%
g = default_gripper()
lk = g.linkage
lo, hi = lk.crank_range
for t in np.linspace(lo, hi, 6):
    print(f"crank {t:+.3f} rad  aperture {aperture(lk, t, t):7.2f} mm  "
          f"force at stall {fingertip_force(lk, lk.stall_torque, t):6.1f} N")

# %% [markdown]
# ## How hard to squeeze
# Two friction contacts have to carry the weight, with a safety margin.

# %%
for mass in (0.02, 0.1, 0.5, 1.0):
    print(f"{mass:5.2f} kg needs {min_grip_force(GraspSpec(), mass):6.2f} N per finger")

# %% [markdown]
# ## Off-center grasp
# The object sits 10 mm toward the right finger, which touches first and
# holds while the left one keeps closing. The table holds the object with
# 6 N, more than the 5 N the right finger pushes with, so it stays put.

# %%
out = g.close_on_object(GripperState(), 50.0, 10.0, 5.0, hold_force=6.0, release=True)
print("first contact:", out.first, "phases:", out.phase_times)
print("contact apertures: left", out.contact_aperture_left, "right", out.contact_aperture_right)
print(" time   aperture  left N  right N")
for t, ap, fl, fr in out.trace[::3]:
    print(f"{t:6.3f}  {ap:7.2f}  {fl:6.2f}  {fr:6.2f}")
