"""
Classifying known attacks by their space footprint
==================================================

Each attack is summarized by which spaces it reads and writes: the
protocol signal span, the device's unused extension of it, the shared
environment, and Eve's private ancillas.  Four classes fall out of the
footprint alone -- state channels (pure signal manipulation), side
channels (extension or environment usage), the trivial side channel
(an environment write nobody can observe), and strategies that never
touch the quantum interface at all.
"""

import qkdlab.attacks as atk
import qkdlab.classify as cl
import qkdlab.receivers as rc

print(f"{'attack':<28} {'class':<19} families")
for record in cl.registry():
    assigned = cl.classify(record.footprint)
    flag = "" if assigned == record.expected_class else "  <-- MISMATCH"
    print(f"{record.name:<28} {assigned:<19} {', '.join(sorted(record.tags)) or '-'}{flag}")

# The footprints themselves are tiny declarative objects:
record = {r.name: r for r in cl.registry()}["bright-illumination"]
print(f"\nbright-illumination reads  {sorted(record.footprint.reads)}")
print(f"bright-illumination writes {sorted(record.footprint.writes)}")

# Family structure: the special-case -> general-case edges.
print("\nfamily subsumptions:")
for special, general in cl.FAMILY_EDGES:
    print(f"  every {special} attack is a {general} attack")

# The invariant behind the second edge, checked over the registry:
ok = all("reversed-space" in r.tags
         for r in cl.registry() if "faked-states" in r.tags)
print(f"registry respects faked-states -> reversed-space: {ok}")

# Synthesized attacks classify automatically from their isometry.
receiver = rc.make_receiver("interferometric-6mode")
timing = atk.faked_states_attack(receiver)
footprint = cl.footprint_of_attack(timing)
print(f"\nsynthesized timing attack classifies as: {cl.classify(footprint)}")

# The registry exports to JSON and Graphviz for documentation builds.
dot = cl.registry_to_dot()
print(f"\nGraphviz export: {len(dot.splitlines())} lines, "
      f"{dot.count('->')} edges")
