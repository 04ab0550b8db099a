"""
Receiver models and their reversed spaces
=========================================

Every receiver bundles measurement settings, outcome interpretations and
an ideal source.  Propagating each registered outcome backwards through
the optics yields the receiver's reversed space: the channel subspace
the device actually responds to.  Everything orthogonal to it can never
cause a click -- which is exactly the room an attacker gets to play in.
"""

import numpy as np

import qkdlab.fockspace as fs
import qkdlab.receivers as rc

# The stock receivers, from the plain time-bin design to the defended
# variant that registers a wider window of time bins.
KINDS = [
    ("interferometric-6mode", None),
    ("interferometric-defended-10mode", None),
    ("interferometric-2mode", None),
    ("interferometric-2mode", "single-window"),
    ("polarization-threshold", None),
    ("blinded-bright", None),
    ("ideal-bb84", None),
]

print("reversed-space dimension per receiver:")
for kind, variant in KINDS:
    receiver = rc.make_receiver(kind, variant)
    space = rc.reversed_space(receiver)
    suffix = f" / {variant}" if variant else ""
    print(f"  {kind}{suffix:<18} dim = {len(space)}")

# The basis is orthonormal; for the six-mode receiver it spans the
# vacuum plus four channel time bins.
receiver = rc.make_receiver("interferometric-6mode")
space = rc.reversed_space(receiver)
gram = np.array([[fs.inner_product(x, y) for y in space] for x in space])
print(f"\nsix-mode Gram deviation from identity: {np.max(np.abs(gram - np.eye(len(space)))):.2e}")

# What the receiver does with a given channel state: feed the ideal
# source states through each setting and read off outcome probabilities.
print("\nsix-mode outcome probabilities per setting and source state:")
for label, state in sorted(receiver.source.states.items()):
    for setting_name in sorted(receiver.settings):
        probs = rc.outcome_probabilities(receiver, setting_name, state)
        shown = {k: round(v, 4) for k, v in sorted(probs.items()) if v > 1e-12}
        print(f"  alice {label} -> setting {setting_name}: {shown}")

# The interpretation map is the receiver's public contract: which
# outcome of which setting means bit 0, bit 1, loss, or invalid.
print("\ninterpretation structure of the single-window variant:")
narrow = rc.make_receiver("interferometric-2mode", "single-window")
for setting_name, outcomes in sorted(rc.interpretation_structure(narrow).items()):
    print(f"  {setting_name}: {outcomes}")

# Receivers also load from JSON configs -- bundled kinds by name, or a
# fully custom design with explicit matrices.  The bundled path:
from_config = rc.receiver_from_config({"kind": "interferometric-6mode"})
print(f"\nconfig round trip matches: "
      f"{rc.interpretation_structure(from_config) == rc.interpretation_structure(receiver)}")
