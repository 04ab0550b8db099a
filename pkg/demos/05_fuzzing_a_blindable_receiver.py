"""
Fuzzing a blindable detector stack
==================================

The fuzz harness drives a stateful model of a four-APD polarization
receiver with out-of-spec inputs -- wrong timing, wrong intensity --
and watches for behavior that breaks the receiver's advertised
contract.  The headline findings are the blinding properties: bright
illumination switches the APDs to linear mode, after which tailored
pulses force deterministic outcomes.  Those findings compile directly
into a receiver model the attack synthesizer can consume.
"""

import qkdlab.fuzz as fz
import qkdlab.receivers as rc

params = fz.APDParams()
print(f"device under test: Geiger threshold {params.p_th} photons, "
      f"blinding threshold {params.blind_threshold}, "
      f"{params.recovery_slots} recovery slots")

device = fz.make_apd_receiver_device(params)
config = fz.default_config(params)
report = fz.run_fuzz_campaign(device, config, seed=0)

print(f"\nran {report.test_cases_run} cases "
      f"({report.distinct_inputs} distinct inputs)")
print(f"properties found: {sorted(report.properties_found)}")

# Each property is backed by concrete anomalies: the input pulse train,
# the observed clicks, and a replay index.
by_tag = {}
for anomaly in report.anomalies:
    by_tag.setdefault(anomaly.tag, anomaly)
print("\none witness per anomaly tag:")
for tag, anomaly in sorted(by_tag.items()):
    pulses = [f"slot {p.time_slot} theta {p.theta:.3f} "
              f"{p.mean_photons:g} photons" for p in anomaly.input.pulses]
    print(f"  {tag} ({anomaly.anomaly_id}): {'; '.join(pulses)}")
    print(f"    -> {anomaly.observation.interpretation}")

# Any anomaly can be replayed from its id; the device is rebuilt from
# the report, so the artifact alone is enough to reproduce a finding.
first = report.anomalies[0].anomaly_id
observation, reproduced = fz.replay_anomaly(device, report, first)
print(f"\nreplay of {first}: reproduced={reproduced}")

# The derived vulnerability records say which polarization at which
# intensity forces which outcome.  Feeding them to make_receiver yields
# the blinded-receiver model -- structurally identical to the bundled
# hand-built one.
print("\nderived vulnerability records:")
for record in report.derived_vulnerabilities:
    print(f"  {record['polarization']:>2} at intensity {record['intensity']}"
          f" -> forced {record['forced_basis']}/{record['forced_bit']}")

rebuilt = rc.make_receiver("blinded-bright",
                           from_vulnerabilities=report.derived_vulnerabilities)
hand_built = rc.make_receiver("blinded-bright")
same = rc.interpretation_structure(rebuilt) == rc.interpretation_structure(hand_built)
print(f"\nfuzz-derived receiver matches the hand-built model: {same}")
