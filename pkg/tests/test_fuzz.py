"""Black-box device model and blinding-discovery campaign tests."""

import json
import math

import numpy as np
import pytest

import qkdlab.fockspace as fs
from qkdlab import fuzz
from qkdlab import receivers as rc


def binom_sigma(p, n):
    return math.sqrt(p * (1.0 - p) / n)


# ---------------------------------------------------------------------------
# inputs, parameters, validation
# ---------------------------------------------------------------------------

def test_pulse_and_input_validation():
    p = fuzz.pulse(0, "H", 1.0)
    assert p.theta == 0.0
    assert fuzz.pulse(0, "+45", 1.0).theta == pytest.approx(math.pi / 4)
    assert fuzz.polarization_label(fuzz.pulse(0, "-45", 1).theta) == "-45"
    # raw angles are accepted and unnamed ones have no label
    assert fuzz.polarization_label(fuzz.pulse(0, 0.3, 1).theta) is None

    with pytest.raises(fuzz.FuzzError):
        fuzz.pulse(0, "D", 1.0)
    with pytest.raises(fuzz.FuzzError):
        fuzz.pulse(0, math.pi, 1.0)
    with pytest.raises(fuzz.FuzzError):
        fuzz.pulse(0, "H", -1.0)
    with pytest.raises(fuzz.FuzzError):
        fuzz.pulse(0, "H", float("inf"))
    with pytest.raises(fuzz.FuzzError):
        fuzz.FuzzInput(())
    with pytest.raises(fuzz.FuzzError):
        fuzz.FuzzInput((fuzz.pulse(2, "H", 1.0), fuzz.pulse(0, "H", 1.0)))


def test_apd_params_validation():
    with pytest.raises(fuzz.FuzzError):
        fuzz.APDParams(p_th=0.0)
    with pytest.raises(fuzz.FuzzError):
        fuzz.APDParams(p_th=20.0, blind_threshold=20.0)
    with pytest.raises(fuzz.FuzzError):
        fuzz.APDParams(recovery_slots=-1)
    with pytest.raises(fuzz.FuzzError):
        fuzz.APDParams(geiger_efficiency=0.0)
    with pytest.raises(fuzz.FuzzError):
        fuzz.make_apd_receiver_device(layout="time-bin")
    with pytest.raises(fuzz.FuzzError):
        fuzz.make_apd_receiver_device(double_click_rule="coin-flip")


def test_input_json_round_trip():
    case = fuzz.FuzzInput((fuzz.pulse(0, "H", 400.0),
                           fuzz.pulse(1, 0.3, 1.0)))
    data = json.loads(json.dumps(case.to_json_dict()))
    assert fuzz.input_from_json_dict(data) == case
    assert data["pulses"][0]["polarization"] == "H"
    assert data["pulses"][1]["polarization"] == pytest.approx(0.3)


# ---------------------------------------------------------------------------
# splitter tree and the single-photon oracle
# ---------------------------------------------------------------------------

def test_arm_intensities_split_the_pulse():
    arms = fuzz.arm_intensities(0.0, 8.0)  # horizontal
    assert arms == pytest.approx(
        {"d_h": 4.0, "d_v": 0.0, "d_plus": 2.0, "d_minus": 2.0})
    arms = fuzz.arm_intensities(math.pi / 4, 8.0)  # diagonal
    assert arms == pytest.approx(
        {"d_h": 2.0, "d_v": 2.0, "d_plus": 4.0, "d_minus": 0.0})
    for theta in np.linspace(0, math.pi, 13, endpoint=False):
        assert sum(fuzz.arm_intensities(theta, 3.0).values()) == \
            pytest.approx(3.0)


def fock_click_distribution(theta):
    """Single-photon detector distribution from the amplitude model.

    The tree is a 50/50 splitter into two spatial arms followed by a
    45-degree polarization rotation in the second arm; each arm ends in
    a polarizing splitter whose ports are the four detectors.
    """
    C = fs.CUSTOM
    in_h, in_v = fs.Mode(C, 0), fs.Mode(C, 1)
    aux_h, aux_v = fs.Mode(C, 2), fs.Mode(C, 3)
    arm1_h, arm1_v = fs.Mode(C, 4), fs.Mode(C, 5)
    arm2_h, arm2_v = fs.Mode(C, 6), fs.Mode(C, 7)
    rot_h, rot_v = fs.Mode(C, 8), fs.Mode(C, 9)
    reg = fs.registry([in_h, in_v, aux_h, aux_v, arm1_h, arm1_v,
                       arm2_h, arm2_v, rot_h, rot_v], max_photons=2)

    state = fs.PhotonicState(reg, {
        fs.single(in_h): math.cos(theta),
        fs.single(in_v): math.sin(theta),
    })
    state = fs.apply_beam_splitter(state, (in_h, aux_h), (arm1_h, arm2_h))
    state = fs.apply_beam_splitter(state, (in_v, aux_v), (arm1_v, arm2_v))
    # diagonal analyzer: the rotated-H port collects the +45 component
    c, s = math.cos(math.pi / 4), math.sin(math.pi / 4)
    state = fs.apply_mode_map(state, {
        arm2_h: [(rot_h, c), (rot_v, s)],
        arm2_v: [(rot_h, s), (rot_v, -c)],
    })
    ports = {"d_h": arm1_h, "d_v": arm1_v, "d_plus": rot_h, "d_minus": rot_v}
    return {det: abs(state.amplitude(fs.single(m))) ** 2
            for det, m in ports.items()}


def test_single_photon_statistics_match_the_amplitude_model():
    # the classical intensity shares used by the device equal the
    # quantum single-photon click distribution for every polarization
    for theta in (0.0, math.pi / 2, math.pi / 4, 3 * math.pi / 4, 0.3, 1.2):
        fock = fock_click_distribution(theta)
        shares = fuzz.arm_intensities(theta, 1.0)
        for det in fuzz.DETECTORS:
            assert abs(fock[det] - shares[det]) < 1e-12, (theta, det)

    # empirical Geiger-mode frequencies for a horizontal photon
    device = fuzz.make_apd_receiver_device()
    case = fuzz.FuzzInput((fuzz.pulse(0, "H", 1.0),))
    n = 20000
    counts = {det: 0 for det in fuzz.DETECTORS}
    for seed in range(n):
        device.reset()
        obs = device.probe(case, seed)
        assert len(obs.clicks) == 1  # unit efficiency, one photon
        counts[next(iter(obs.clicks))] += 1
    assert counts["d_v"] == 0
    assert abs(counts["d_h"] / n - 0.5) < 4 * binom_sigma(0.5, n)
    assert abs(counts["d_plus"] / n - 0.25) < 4 * binom_sigma(0.25, n)
    assert abs(counts["d_minus"] / n - 0.25) < 4 * binom_sigma(0.25, n)


def test_baseline_class_probabilities():
    case = fuzz.FuzzInput((fuzz.pulse(0, "H", 1.0),))
    probs = fuzz.baseline_class_probabilities(case, 1.0)
    assert probs[(rc.LOSS, None)] == 0.0
    assert probs[(rc.BIT0, rc.COMPUTATIONAL)] == pytest.approx(0.5)
    assert probs[(rc.BIT0, rc.HADAMARD)] == pytest.approx(0.25)
    assert probs[(rc.BIT1, rc.HADAMARD)] == pytest.approx(0.25)
    assert probs[(rc.INVALID, None)] == pytest.approx(0.0, abs=1e-12)

    lossy = fuzz.baseline_class_probabilities(case, 0.8)
    assert lossy[(rc.LOSS, None)] == pytest.approx(0.2)
    assert sum(lossy.values()) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# device behaviour
# ---------------------------------------------------------------------------

def test_bright_pulse_is_swallowed_and_blinds_the_device():
    device = fuzz.make_apd_receiver_device()
    bright = fuzz.FuzzInput((fuzz.pulse(0, "H", 400.0),))
    obs = fuzz.probe(device, bright, seed=0)
    assert obs.clicks == frozenset()
    assert obs.interpretation == rc.LOSS

    # state persists across probes until reset: a later pulse inside the
    # recovery window stays dark ...
    dim = fuzz.FuzzInput((fuzz.pulse(2, "V", 1.0),))
    assert fuzz.probe(device, dim, seed=1).interpretation == rc.LOSS
    # ... and clicks normally after a reset
    device.reset()
    obs = fuzz.probe(device, dim, seed=1)
    assert obs.interpretation in (rc.BIT0, rc.BIT1)

    # within one case: blind, stay dark, then recover after the window
    device.reset()
    seq = fuzz.FuzzInput((fuzz.pulse(0, "H", 400.0),
                          fuzz.pulse(4, "V", 1.0)))
    assert fuzz.probe(device, seq, seed=2).interpretation == rc.LOSS
    device.reset()
    recovered = fuzz.FuzzInput((fuzz.pulse(0, "H", 400.0),
                                fuzz.pulse(5, "V", 1.0)))
    obs = fuzz.probe(device, recovered, seed=3)
    assert obs.clicks  # a V photon lands in d_v, d_plus, or d_minus
    assert obs.interpretation in (rc.BIT0, rc.BIT1)


def test_linear_mode_clicks_exactly_at_threshold():
    params = fuzz.APDParams()
    device = fuzz.make_apd_receiver_device(params)
    blind = fuzz.pulse(0, "H", params.blind_threshold)

    # an arm intensity exactly at p_th clicks; epsilon below stays dark
    at = fuzz.FuzzInput((blind, fuzz.pulse(1, "H", 2.0 * params.p_th)))
    obs = fuzz.probe(device, at, seed=0)
    assert obs.clicks == frozenset({"d_h"})
    assert (obs.interpretation, obs.basis_registered) == \
        (rc.BIT0, rc.COMPUTATIONAL)

    device.reset()
    below = fuzz.FuzzInput((blind,
                            fuzz.pulse(1, "H", 2.0 * params.p_th - 1e-9)))
    assert fuzz.probe(device, below, seed=0).interpretation == rc.LOSS


def test_blinded_forcing_covers_all_four_outcomes():
    params = fuzz.APDParams()
    expected = {
        "H": (rc.BIT0, rc.COMPUTATIONAL),
        "V": (rc.BIT1, rc.COMPUTATIONAL),
        "+45": (rc.BIT0, rc.HADAMARD),
        "-45": (rc.BIT1, rc.HADAMARD),
    }
    for name, (bit, basis) in expected.items():
        for seed in range(3):  # linear mode is deterministic
            device = fuzz.make_apd_receiver_device(params)
            case = fuzz.FuzzInput((
                fuzz.pulse(0, "V", params.blind_threshold),
                fuzz.pulse(1, name, 2.0 * params.p_th)))
            obs = fuzz.probe(device, case, seed=seed)
            assert (obs.interpretation, obs.basis_registered) == (bit, basis)


def test_double_click_rule_is_configurable():
    params = fuzz.APDParams()
    # a blinded diagonal-ish pulse pushes two arms over threshold
    case = fuzz.FuzzInput((fuzz.pulse(0, "H", params.blind_threshold),
                           fuzz.pulse(1, math.pi / 8, 4.0 * params.p_th)))
    strict = fuzz.make_apd_receiver_device(params)
    obs = fuzz.probe(strict, case, seed=0)
    assert len(obs.clicks) == 2
    assert obs.interpretation == rc.INVALID

    lenient = fuzz.make_apd_receiver_device(params, double_click_rule="loss")
    assert fuzz.probe(lenient, case, seed=0).interpretation == rc.LOSS


def test_pnr_device_resolves_photon_pairs():
    device = fuzz.make_ideal_pnr_device()
    case = fuzz.FuzzInput((fuzz.pulse(0, "H", 2.0),))
    seen_pair = False
    for seed in range(64):
        obs = device.probe(case, seed)
        assert obs.click_counts is not None
        counts = dict(obs.click_counts)
        assert sum(counts.values()) == 2
        seen_pair = seen_pair or max(counts.values()) == 2
    assert seen_pair  # P(miss 64 times) ~ 0.625^64, negligible

    # bright pulses never blind it
    bright = fuzz.FuzzInput((fuzz.pulse(0, "H", 400.0),
                             fuzz.pulse(1, "V", 1.0)))
    obs = device.probe(bright, seed=0)
    assert obs.interpretation == rc.INVALID  # many detectors fire


# ---------------------------------------------------------------------------
# campaign
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def campaign():
    device = fuzz.make_apd_receiver_device()
    return fuzz.run_fuzz_campaign(device, seed=0)


def test_campaign_discovers_all_three_behaviours(campaign):
    assert campaign.properties_found == (
        fuzz.PROPERTY_BLINDING, fuzz.PROPERTY_STRONG, fuzz.PROPERTY_WEAK)
    assert campaign.test_cases_run <= 10000
    tags = {a.tag for a in campaign.anomalies}
    assert {"blinding", "weak-under-blinding",
            "strong-under-blinding"} <= tags
    # the threshold detectors cannot count photons; recorded as an
    # anomaly but not as one of the protocol-level properties
    assert "no-photon-counting" in tags
    campaign.validate()


def test_campaign_is_deterministic(campaign):
    device = fuzz.make_apd_receiver_device()
    again = fuzz.run_fuzz_campaign(device, seed=0)
    assert json.dumps(again.to_json_dict(), sort_keys=True) == \
        json.dumps(campaign.to_json_dict(), sort_keys=True)

    other = fuzz.run_fuzz_campaign(fuzz.make_apd_receiver_device(), seed=7)
    assert other.properties_found == campaign.properties_found


def test_derived_records_rebuild_the_bright_receiver(campaign):
    records = campaign.derived_vulnerabilities
    assert {r["polarization"] for r in records} == {"H", "V", "+", "-"}
    for r in records:
        assert r["intensity"] < r["blinding_intensity"]
    derived = rc.make_receiver("blinded-bright", from_vulnerabilities=records)
    stock = rc.make_receiver("blinded-bright")
    assert rc.interpretation_structure(derived) == \
        rc.interpretation_structure(stock)


def test_anomalies_replay_on_a_fresh_device(campaign):
    ids = [r["anomaly_id"] for r in campaign.derived_vulnerabilities]
    ids += [a.anomaly_id for a in campaign.anomalies[:8]]
    for anomaly_id in ids:
        device = fuzz.make_apd_receiver_device()
        obs, reproduced = fuzz.replay_anomaly(device, campaign, anomaly_id)
        assert reproduced, anomaly_id
    with pytest.raises(fuzz.FuzzError):
        fuzz.replay_anomaly(fuzz.make_apd_receiver_device(), campaign,
                            "a9999")


def test_coverage_grows_monotonically_with_budget(campaign):
    previous_inputs = 0
    previous_ids = []
    for budget in (120, 800, 3000):
        report = fuzz.run_fuzz_campaign(
            fuzz.make_apd_receiver_device(),
            config=fuzz.default_config(fuzz.APDParams(), max_cases=budget),
            seed=0)
        assert report.test_cases_run <= budget
        assert report.distinct_inputs >= previous_inputs
        ids = [a.anomaly_id for a in report.anomalies]
        assert ids[:len(previous_ids)] == previous_ids
        assert set(report.properties_found) <= set(campaign.properties_found)
        previous_inputs = report.distinct_inputs
        previous_ids = ids


def test_pnr_device_raises_no_anomalies():
    report = fuzz.run_fuzz_campaign(
        fuzz.make_ideal_pnr_device(),
        config=fuzz.default_config(fuzz.APDParams()), seed=0)
    assert report.anomalies == []
    assert report.properties_found == ()


def test_unblindable_threshold_device_shows_only_counting_anomaly():
    # same threshold detectors, but bright pulses never reach the
    # blinding regime: no protocol-level properties should appear
    params = fuzz.APDParams(blind_threshold=1e9)
    report = fuzz.run_fuzz_campaign(
        fuzz.make_apd_receiver_device(params),
        config=fuzz.default_config(params), seed=0)
    assert report.properties_found == ()
    assert {a.tag for a in report.anomalies} <= {"no-photon-counting"}


def test_campaign_writes_a_trace(tmp_path, campaign):
    path = tmp_path / "trace.ndjson"
    report = fuzz.run_fuzz_campaign(fuzz.make_apd_receiver_device(),
                                    seed=0, trace_path=path)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert lines[0]["schema"] == fuzz.TRACE_SCHEMA
    assert lines[0]["rng_seed"] == 0
    assert len(lines) - 1 == report.distinct_inputs
    tagged = [row for row in lines[1:] if row["tags"]]
    assert len(tagged) > 0
    assert all({"case_index", "stage", "input", "classes"} <= set(row)
               for row in lines[1:])
    # trace does not perturb the campaign itself
    assert report.to_json_dict() == campaign.to_json_dict()


def test_config_and_argument_validation():
    with pytest.raises(fuzz.FuzzError):
        fuzz.CampaignConfig(max_cases=0)
    with pytest.raises(fuzz.FuzzError):
        fuzz.CampaignConfig(replays=0)
    with pytest.raises(fuzz.FuzzError):
        fuzz.CampaignConfig(combination_depth=0)
    with pytest.raises(fuzz.FuzzError):
        # explicit config with an empty sweep
        fuzz.run_fuzz_campaign(fuzz.make_apd_receiver_device(),
                               config=fuzz.CampaignConfig())
    with pytest.raises(fuzz.FuzzError):
        # a bare device without declared parameters needs a config
        fuzz.run_fuzz_campaign(fuzz.make_ideal_pnr_device())
