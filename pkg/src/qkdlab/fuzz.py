"""Black-box probing of receiver devices and the blinding-discovery campaign.

The device under test is a four-detector passive polarization receiver:
a polarization-independent 50/50 splitter feeds two polarizing splitters,
one straight (computational) and one behind a 45-degree rotator
(Hadamard).  Avalanche photodiodes behind each port run in Geiger mode
until bright illumination drives them into linear (intensity-threshold)
mode for a recovery window.

The campaign treats the device strictly as a black box: it schedules
pulse sequences, watches only the returned observations, compares the
observed outcome classes against an analytically computed ideal-receiver
baseline, and tags systematic deviations.  Three behaviours matter
downstream: bright pulses are swallowed (blinding), single photons stay
dark while blinded, and moderately bright pulses force chosen outcomes
while blinded.  The forced-outcome records are exactly the
vulnerability records the receiver factory accepts to rebuild the
equivalent bright-pulse receiver model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from . import receivers as rc

TRACE_SCHEMA = "fuzz-trace/1"
REPORT_SCHEMA = "fuzz-report/1"

DETECTORS = ("d_h", "d_v", "d_plus", "d_minus")
DETECTOR_MEANING = {
    "d_h": (rc.COMPUTATIONAL, 0),
    "d_v": (rc.COMPUTATIONAL, 1),
    "d_plus": (rc.HADAMARD, 0),
    "d_minus": (rc.HADAMARD, 1),
}

POLARIZATION_ANGLES = {
    "H": 0.0,
    "V": math.pi / 2,
    "+45": math.pi / 4,
    "-45": 3 * math.pi / 4,
}
# short labels used by the receiver factory's vulnerability records
_RECORD_POLARIZATION = {"H": "H", "V": "V", "+45": "+", "-45": "-"}

PROPERTY_BLINDING = "Blinding"
PROPERTY_WEAK = "WeakUnderBlinding"
PROPERTY_STRONG = "StrongUnderBlinding"
_TAG_PROPERTY = {
    "blinding": PROPERTY_BLINDING,
    "weak-under-blinding": PROPERTY_WEAK,
    "strong-under-blinding": PROPERTY_STRONG,
}

# observed-class probability below which a systematic observation is
# incompatible with the calibrated ideal baseline
_BASELINE_FLOOR = 1e-6


class FuzzError(ValueError):
    """Malformed inputs, parameters, or campaign configuration."""


# ---------------------------------------------------------------------------
# inputs and observations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pulse:
    """One optical pulse: arrival slot, linear polarization, intensity."""

    time_slot: int
    theta: float
    mean_photons: float


def pulse(time_slot: int, polarization, mean_photons: float) -> Pulse:
    """Build a pulse; ``polarization`` is an angle in [0, pi) or a name."""
    if isinstance(polarization, str):
        try:
            theta = POLARIZATION_ANGLES[polarization]
        except KeyError:
            raise FuzzError(
                f"unknown polarization {polarization!r}; named options are "
                f"{sorted(POLARIZATION_ANGLES)}")
    else:
        theta = float(polarization)
        if not 0.0 <= theta < math.pi:
            raise FuzzError(f"polarization angle {theta} outside [0, pi)")
    mean_photons = float(mean_photons)
    if not math.isfinite(mean_photons) or mean_photons < 0:
        raise FuzzError(f"mean photon number {mean_photons} must be "
                        f"finite and non-negative")
    return Pulse(int(time_slot), theta, mean_photons)


def polarization_label(theta: float) -> Optional[str]:
    for name, angle in POLARIZATION_ANGLES.items():
        if abs(theta - angle) < 1e-9:
            return name
    return None


@dataclass(frozen=True)
class FuzzInput:
    """An ordered pulse sequence presented to the device as one test case."""

    pulses: Tuple[Pulse, ...]

    def __post_init__(self):
        if not self.pulses:
            raise FuzzError("a test case needs at least one pulse")
        slots = [p.time_slot for p in self.pulses]
        if any(b < a for a, b in zip(slots, slots[1:])):
            raise FuzzError(f"pulse slots must be non-decreasing, got {slots}")

    def to_json_dict(self) -> dict:
        out = []
        for p in self.pulses:
            label = polarization_label(p.theta)
            out.append({
                "time_slot": p.time_slot,
                "polarization": label if label is not None else p.theta,
                "mean_photons": p.mean_photons,
            })
        return {"pulses": out}


def input_from_json_dict(data: Mapping) -> FuzzInput:
    return FuzzInput(tuple(
        pulse(p["time_slot"], p["polarization"], p["mean_photons"])
        for p in data["pulses"]))


@dataclass(frozen=True)
class FuzzObservation:
    """What the black box reported for one test case.

    ``clicks`` holds detector ids; ``click_counts`` is populated only by
    devices that can resolve photon number.  ``interpretation`` follows
    the device's declared click-to-outcome rule and ``basis_registered``
    names the basis of a single-detector click.
    """

    clicks: frozenset
    interpretation: str
    basis_registered: Optional[str]
    click_counts: Optional[Tuple[Tuple[str, int], ...]] = None

    def outcome_class(self) -> Tuple[str, Optional[str]]:
        return (self.interpretation, self.basis_registered)

    def to_json_dict(self) -> dict:
        return {
            "clicks": sorted(self.clicks),
            "interpretation": self.interpretation,
            "basis_registered": self.basis_registered,
            "click_counts": (dict(self.click_counts)
                             if self.click_counts is not None else None),
        }


def _interpret_clicks(clicks, double_click_rule: str
                      ) -> Tuple[str, Optional[str]]:
    if not clicks:
        return rc.LOSS, None
    if len(clicks) == 1:
        basis, bit = DETECTOR_MEANING[next(iter(clicks))]
        return (rc.BIT0 if bit == 0 else rc.BIT1), basis
    return (rc.LOSS, None) if double_click_rule == "loss" \
        else (rc.INVALID, None)


# ---------------------------------------------------------------------------
# devices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class APDParams:
    """Avalanche-photodiode thresholds of the device under test.

    ``p_th`` is the minimal intensity a linear-mode APD registers (a
    pulse at exactly ``p_th`` clicks); ``blind_threshold`` is the input
    intensity that drives the APDs into linear mode for
    ``recovery_slots`` further time slots; ``geiger_efficiency`` is the
    per-photon click probability in Geiger mode.
    """

    p_th: float = 20.0
    blind_threshold: float = 400.0
    recovery_slots: int = 4
    geiger_efficiency: float = 1.0

    def __post_init__(self):
        if self.p_th <= 0:
            raise FuzzError("p_th must be positive")
        if self.blind_threshold <= self.p_th:
            raise FuzzError("blind_threshold must exceed p_th")
        if self.recovery_slots < 0:
            raise FuzzError("recovery_slots must be non-negative")
        if not 0.0 < self.geiger_efficiency <= 1.0:
            raise FuzzError("geiger_efficiency must lie in (0, 1]")


def arm_intensities(theta: float, mean_photons: float) -> Dict[str, float]:
    """Classical intensity reaching each detector for one pulse.

    Half the light goes to each basis arm; the polarizing splitters
    project on (H, V) straight and on (H, V) rotated by 45 degrees.
    """
    half = mean_photons / 2.0
    rot = theta - math.pi / 4
    return {
        "d_h": half * math.cos(theta) ** 2,
        "d_v": half * math.sin(theta) ** 2,
        "d_plus": half * math.cos(rot) ** 2,
        "d_minus": half * math.sin(rot) ** 2,
    }


class APDReceiverDevice:
    """Stateful threshold-APD receiver in the passive two-basis layout.

    State is one integer: the first slot at which the detectors are back
    in Geiger mode.  A pulse at or above ``blind_threshold`` produces no
    click itself (the avalanche saturates) and holds the whole device in
    linear mode for the following ``recovery_slots`` slots; re-blinding
    refreshes the window.  Linear-mode detectors click deterministically
    when their arm intensity reaches ``p_th``; Geiger-mode detectors see
    ``round(mean_photons)`` photons routed multinomially down the
    splitter tree, each clicking with ``geiger_efficiency``.
    """

    def __init__(self, params: APDParams,
                 layout: str = "polarization-bb84-passive",
                 double_click_rule: str = "invalid"):
        if layout != "polarization-bb84-passive":
            raise FuzzError(f"unknown layout {layout!r}")
        if double_click_rule not in ("invalid", "loss"):
            raise FuzzError("double_click_rule must be 'invalid' or 'loss'")
        self.params = params
        self.layout = layout
        self.double_click_rule = double_click_rule
        self._geiger_from_slot = None  # None: never blinded

    def reset(self) -> None:
        self._geiger_from_slot = None

    def _blinded_at(self, slot: int) -> bool:
        return (self._geiger_from_slot is not None
                and slot < self._geiger_from_slot)

    def probe(self, case: FuzzInput, seed: int) -> FuzzObservation:
        gen = np.random.Generator(np.random.Philox(key=seed))
        p = self.params
        clicks = set()
        for pl in case.pulses:
            if pl.mean_photons >= p.blind_threshold:
                # saturation: no click, detectors fall into linear mode
                horizon = pl.time_slot + p.recovery_slots + 1
                if self._geiger_from_slot is None:
                    self._geiger_from_slot = horizon
                else:
                    self._geiger_from_slot = max(self._geiger_from_slot,
                                                 horizon)
                continue
            arms = arm_intensities(pl.theta, pl.mean_photons)
            if self._blinded_at(pl.time_slot):
                for det, intensity in arms.items():
                    if intensity >= p.p_th:
                        clicks.add(det)
                continue
            n = round(pl.mean_photons)
            if n == 0:
                continue
            shares = np.array([arms[d] for d in DETECTORS])
            counts = gen.multinomial(n, shares / shares.sum())
            for det, arrived in zip(DETECTORS, counts):
                if arrived == 0:
                    continue
                miss = (1.0 - p.geiger_efficiency) ** int(arrived)
                if gen.random() >= miss:
                    clicks.add(det)
        interpretation, basis = _interpret_clicks(clicks,
                                                  self.double_click_rule)
        return FuzzObservation(frozenset(clicks), interpretation, basis)


class IdealPNRDevice:
    """Photon-number-resolving reference: never blinds, reports counts."""

    def __init__(self, geiger_efficiency: float = 1.0):
        if not 0.0 < geiger_efficiency <= 1.0:
            raise FuzzError("geiger_efficiency must lie in (0, 1]")
        self.efficiency = geiger_efficiency
        self.double_click_rule = "invalid"

    def reset(self) -> None:
        pass

    def probe(self, case: FuzzInput, seed: int) -> FuzzObservation:
        gen = np.random.Generator(np.random.Philox(key=seed))
        registered: Dict[str, int] = {}
        for pl in case.pulses:
            n = round(pl.mean_photons)
            if n == 0:
                continue
            arms = arm_intensities(pl.theta, pl.mean_photons)
            shares = np.array([arms[d] for d in DETECTORS])
            counts = gen.multinomial(n, shares / shares.sum())
            for det, arrived in zip(DETECTORS, counts):
                seen = int(gen.binomial(int(arrived), self.efficiency))
                if seen:
                    registered[det] = registered.get(det, 0) + seen
        clicks = frozenset(registered)
        interpretation, basis = _interpret_clicks(clicks, "invalid")
        return FuzzObservation(clicks, interpretation, basis,
                               tuple(sorted(registered.items())))


def make_apd_receiver_device(params: Optional[APDParams] = None,
                             layout: str = "polarization-bb84-passive",
                             double_click_rule: str = "invalid"
                             ) -> APDReceiverDevice:
    return APDReceiverDevice(params or APDParams(), layout,
                             double_click_rule)


def make_ideal_pnr_device(geiger_efficiency: float = 1.0) -> IdealPNRDevice:
    return IdealPNRDevice(geiger_efficiency)


def probe(device, case: FuzzInput, seed: int) -> FuzzObservation:
    """Send one test case to a device.  The only sanctioned interface."""
    return device.probe(case, seed)


# ---------------------------------------------------------------------------
# the ideal baseline
# ---------------------------------------------------------------------------

def _subset_probability(case: FuzzInput, subset, efficiency: float) -> float:
    """P(every click falls inside ``subset``) on the ideal receiver."""
    total = 1.0
    for pl in case.pulses:
        n = round(pl.mean_photons)
        if n == 0:
            continue
        arms = arm_intensities(pl.theta, pl.mean_photons)
        norm = sum(arms.values())
        share = sum(arms[d] for d in subset) / norm
        total *= (share * efficiency + (1.0 - efficiency)) ** n
    return total


def baseline_class_probabilities(case: FuzzInput, efficiency: float
                                 ) -> Dict[Tuple[str, Optional[str]], float]:
    """Outcome-class distribution of an ideal (never-blinded) receiver.

    Photons are routed independently, so P(clicks within a subset S) is
    a product over pulses of ((share of S)*eta + 1 - eta)^n; exact
    single-detector probabilities follow by subtracting the no-click
    term, and the invalid class absorbs the remainder.
    """
    p_none = _subset_probability(case, (), efficiency)
    probs: Dict[Tuple[str, Optional[str]], float] = {(rc.LOSS, None): p_none}
    singles = 0.0
    for det in DETECTORS:
        p_det = _subset_probability(case, (det,), efficiency) - p_none
        basis, bit = DETECTOR_MEANING[det]
        cls = (rc.BIT0 if bit == 0 else rc.BIT1, basis)
        probs[cls] = probs.get(cls, 0.0) + max(p_det, 0.0)
        singles += max(p_det, 0.0)
    probs[(rc.INVALID, None)] = max(1.0 - singles - p_none, 0.0)
    return probs


def _pair_in_one_detector_probability(case: FuzzInput) -> float:
    """P(both photons of a two-photon pulse land in one detector)."""
    if len(case.pulses) != 1 or round(case.pulses[0].mean_photons) != 2:
        return 0.0
    pl = case.pulses[0]
    arms = arm_intensities(pl.theta, pl.mean_photons)
    norm = sum(arms.values())
    return sum((v / norm) ** 2 for v in arms.values())


# ---------------------------------------------------------------------------
# campaign
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CampaignConfig:
    """Schedule parameters: budget, sweeps, and combination depth.

    ``intensity_grid`` is absolute mean photon numbers for the stage-1
    sweep; ``follow_up_intensities`` are appended to blinded prefixes in
    stage 2; ``time_grid`` shifts the valid single-photon probe;
    ``follow_up_offsets`` are slot gaps between a prefix and its probe.
    ``max_cases`` caps the number of device probes (every replay counts).
    """

    max_cases: int = 10000
    intensity_grid: Tuple[float, ...] = ()
    time_grid: Tuple[int, ...] = (-2, -1, 0, 1, 2)
    combination_depth: int = 2
    replays: int = 12
    follow_up_intensities: Tuple[float, ...] = ()
    follow_up_offsets: Tuple[int, ...] = (1,)

    def __post_init__(self):
        if self.max_cases < 1:
            raise FuzzError("max_cases must be >= 1")
        if self.replays < 1:
            raise FuzzError("replays must be >= 1")
        if self.combination_depth < 1:
            raise FuzzError("combination_depth must be >= 1")


_GRID_FACTORS = (0.5, 1, 2, 5, 10, 50, 100, 1e3, 1e4)


def default_config(params: APDParams, max_cases: int = 10000
                   ) -> CampaignConfig:
    """The stock schedule, scaled to the device's declared thresholds."""
    return CampaignConfig(
        max_cases=max_cases,
        intensity_grid=(2.0,) + tuple(f * params.p_th for f in _GRID_FACTORS),
        follow_up_intensities=(1.0, 2.0 * params.p_th),
        follow_up_offsets=(1, params.recovery_slots + 1),
    )


@dataclass(frozen=True)
class FuzzAnomaly:
    anomaly_id: str
    stage: int
    case_index: int
    replay_index: int
    input: FuzzInput
    observation: FuzzObservation
    tag: str

    def to_json_dict(self) -> dict:
        return {
            "anomaly_id": self.anomaly_id,
            "stage": self.stage,
            "case_index": self.case_index,
            "replay_index": self.replay_index,
            "input": self.input.to_json_dict(),
            "observation": self.observation.to_json_dict(),
            "tag": self.tag,
        }


@dataclass
class FuzzReport:
    test_cases_run: int
    distinct_inputs: int
    anomalies: List[FuzzAnomaly]
    properties_found: Tuple[str, ...]
    derived_vulnerabilities: List[dict]
    rng_seed: int
    schema: str = REPORT_SCHEMA

    def validate(self) -> None:
        tags = {a.tag for a in self.anomalies}
        mapped = {_TAG_PROPERTY[t] for t in tags if t in _TAG_PROPERTY}
        if not set(self.properties_found) <= mapped:
            raise FuzzError("properties_found not backed by anomaly tags")

    def to_json_dict(self) -> dict:
        return {
            "schema": self.schema,
            "test_cases_run": self.test_cases_run,
            "distinct_inputs": self.distinct_inputs,
            "anomalies": [a.to_json_dict() for a in self.anomalies],
            "properties_found": list(self.properties_found),
            "derived_vulnerabilities": self.derived_vulnerabilities,
            "rng_seed": self.rng_seed,
        }


def observation_from_json_dict(data: Mapping) -> FuzzObservation:
    counts = data.get("click_counts")
    return FuzzObservation(
        clicks=frozenset(data["clicks"]),
        interpretation=data["interpretation"],
        basis_registered=data.get("basis_registered"),
        click_counts=(tuple(sorted((str(k), int(v))
                                   for k, v in counts.items()))
                      if counts is not None else None),
    )


def report_from_json_dict(data: Mapping) -> FuzzReport:
    """Rebuild a campaign report (e.g. for replaying logged anomalies)."""
    if data.get("schema") != REPORT_SCHEMA:
        raise FuzzError(f"expected schema {REPORT_SCHEMA!r}, "
                        f"got {data.get('schema')!r}")
    anomalies = [
        FuzzAnomaly(
            anomaly_id=a["anomaly_id"], stage=int(a["stage"]),
            case_index=int(a["case_index"]),
            replay_index=int(a["replay_index"]),
            input=input_from_json_dict(a["input"]),
            observation=observation_from_json_dict(a["observation"]),
            tag=a["tag"])
        for a in data["anomalies"]
    ]
    report = FuzzReport(
        test_cases_run=int(data["test_cases_run"]),
        distinct_inputs=int(data["distinct_inputs"]),
        anomalies=anomalies,
        properties_found=tuple(data["properties_found"]),
        derived_vulnerabilities=list(data["derived_vulnerabilities"]),
        rng_seed=int(data["rng_seed"]),
    )
    report.validate()
    return report


def _case_seed(master_seed: int, case_index: int, replay: int) -> int:
    # distinct non-overlapping key per (campaign, case, replay)
    return (int(master_seed) << 40) ^ (case_index << 8) ^ replay


def _schedule_stage01(config: CampaignConfig) -> List[Tuple[int, FuzzInput]]:
    cases: List[Tuple[int, FuzzInput]] = []
    for name in ("H", "V", "+45", "-45"):
        cases.append((0, FuzzInput((pulse(0, name, 1.0),))))
    for name in ("H", "V", "+45", "-45"):
        for mu in config.intensity_grid:
            cases.append((1, FuzzInput((pulse(0, name, mu),))))
        for shift in config.time_grid:
            cases.append((1, FuzzInput((pulse(shift, name, 1.0),))))
    return cases


def _followups(seed_input: FuzzInput, config: CampaignConfig
               ) -> List[FuzzInput]:
    last = seed_input.pulses[-1].time_slot
    probes = []
    for offset in config.follow_up_offsets:
        for name in ("H", "V", "+45", "-45"):
            for mu in config.follow_up_intensities:
                probes.append(FuzzInput(
                    seed_input.pulses + (pulse(last + offset, name, mu),)))
    return probes


def _classify_case(case: FuzzInput,
                   observations: List[FuzzObservation],
                   efficiency: float) -> List[Tuple[str, FuzzObservation, int]]:
    """Tags for one case: (tag, representative observation, replay index)."""
    replays = len(observations)
    baseline = baseline_class_probabilities(case, efficiency)
    histogram: Dict[Tuple[str, Optional[str]], List[int]] = {}
    for idx, obs in enumerate(observations):
        histogram.setdefault(obs.outcome_class(), []).append(idx)

    final = case.pulses[-1]
    bright_final = final.mean_photons >= 2.0
    has_prefix = len(case.pulses) > 1
    # classes the final pulse could reach on its own: if one shows up,
    # the deviation is the earlier pulses leaving no trace, not the
    # final pulse being steered
    final_alone = baseline_class_probabilities(
        FuzzInput((final,)), efficiency)

    found: List[Tuple[str, FuzzObservation, int]] = []
    for cls, hits in sorted(histogram.items(),
                            key=lambda item: item[1][0]):
        if 2 * len(hits) <= replays:
            continue  # not systematic
        if baseline.get(cls, 0.0) >= _BASELINE_FLOOR:
            continue  # reachable on the ideal receiver
        rep_idx = hits[0]
        rep = observations[rep_idx]
        kind, _basis = cls
        if kind == rc.LOSS:
            tag = "blinding" if bright_final else "weak-under-blinding"
            if not bright_final and not has_prefix:
                tag = "unexpected-loss"
        elif kind in (rc.BIT0, rc.BIT1):
            deterministic = len(hits) == replays
            if has_prefix and final_alone.get(cls, 0.0) >= _BASELINE_FLOOR:
                tag = "prefix-swallowed"
            elif deterministic and has_prefix:
                tag = "strong-under-blinding"
            else:
                tag = "forced-outcome"
        else:
            tag = "unexpected-invalid"
        found.append((tag, rep, rep_idx))

    pair_p = _pair_in_one_detector_probability(case)
    if pair_p >= 0.05:
        counted = any(obs.click_counts is not None for obs in observations)
        if not counted:
            found.append(("no-photon-counting", observations[0], 0))
    return found


def run_fuzz_campaign(device, config: Optional[CampaignConfig] = None,
                      seed: int = 0,
                      trace_path: Union[str, Path, None] = None) -> FuzzReport:
    """Probe a device through the staged schedule and tag what deviates.

    Stage 0 sends the four valid protocol states and calibrates the
    baseline loss rate; stage 1 sweeps intensity and timing one degree
    of freedom at a time; stage 2 (and deeper, up to
    ``combination_depth``) prefixes anomalous inputs to fresh probes.
    The device is reset before every probe, and each case is replayed
    ``config.replays`` times under derived sub-seeds, so a report is a
    pure function of (device model, config, seed).
    """
    if config is None:
        params = getattr(device, "params", None)
        if params is None:
            raise FuzzError("device carries no parameters; pass an explicit "
                            "CampaignConfig")
        config = default_config(params)
    if not config.intensity_grid:
        raise FuzzError("config has an empty intensity grid")

    trace_rows: List[dict] = []
    probes_done = 0
    case_index = 0
    anomalies: List[FuzzAnomaly] = []
    anomalous_inputs: List[FuzzInput] = []
    seen_inputs = set()
    efficiency = 1.0  # calibrated after stage 0
    stage0_losses = 0
    stage0_probes = 0

    def run_case(stage: int, case: FuzzInput) -> bool:
        """Probe one case with replays; returns False when out of budget."""
        nonlocal probes_done, case_index, stage0_losses, stage0_probes
        nonlocal efficiency
        if probes_done + config.replays > config.max_cases:
            return False
        observations = []
        for replay in range(config.replays):
            device.reset()
            observations.append(
                device.probe(case, _case_seed(seed, case_index, replay)))
        probes_done += config.replays
        if stage == 0:
            stage0_probes += len(observations)
            stage0_losses += sum(
                1 for o in observations if o.interpretation == rc.LOSS)
            efficiency = max(1.0 - stage0_losses / max(stage0_probes, 1),
                             1e-6)
        tags = _classify_case(case, observations, efficiency)
        for tag, rep, rep_idx in tags:
            anomalies.append(FuzzAnomaly(
                anomaly_id=f"a{len(anomalies):04d}",
                stage=stage, case_index=case_index, replay_index=rep_idx,
                input=case, observation=rep, tag=tag))
            if case not in seen_inputs:
                seen_inputs.add(case)
                anomalous_inputs.append(case)
        if trace_path is not None:
            classes: Dict[str, int] = {}
            for o in observations:
                key = f"{o.interpretation}/{o.basis_registered or '-'}"
                classes[key] = classes.get(key, 0) + 1
            trace_rows.append({
                "case_index": case_index, "stage": stage,
                "input": case.to_json_dict(), "classes": classes,
                "tags": [t for t, _, _ in tags],
            })
        case_index += 1
        return True

    in_budget = True
    for stage, case in _schedule_stage01(config):
        if not run_case(stage, case):
            in_budget = False
            break

    depth = 2
    frontier = list(anomalous_inputs)
    while in_budget and depth <= config.combination_depth and frontier:
        next_start = len(anomalous_inputs)
        for seed_input in frontier:
            for case in _followups(seed_input, config):
                if not run_case(depth, case):
                    in_budget = False
                    break
            if not in_budget:
                break
        frontier = anomalous_inputs[next_start:]
        depth += 1

    properties: List[str] = []
    for anomaly in anomalies:
        prop = _TAG_PROPERTY.get(anomaly.tag)
        if prop and prop not in properties:
            properties.append(prop)

    derived: List[dict] = []
    derived_keys = set()
    for anomaly in anomalies:
        if anomaly.tag != "strong-under-blinding":
            continue
        final = anomaly.input.pulses[-1]
        label = polarization_label(final.theta)
        record_pol = _RECORD_POLARIZATION.get(label or "")
        if record_pol is None:
            continue
        basis = anomaly.observation.basis_registered
        bit = 0 if anomaly.observation.interpretation == rc.BIT0 else 1
        key = (record_pol, basis, bit)
        if key in derived_keys:
            continue
        derived_keys.add(key)
        derived.append({
            "polarization": record_pol,
            "forced_basis": basis,
            "forced_bit": bit,
            "intensity": final.mean_photons,
            "blinding_intensity": max(
                p.mean_photons for p in anomaly.input.pulses[:-1]),
            "anomaly_id": anomaly.anomaly_id,
        })

    report = FuzzReport(
        test_cases_run=probes_done,
        distinct_inputs=case_index,
        anomalies=anomalies,
        properties_found=tuple(sorted(properties)),
        derived_vulnerabilities=derived,
        rng_seed=seed,
    )
    report.validate()

    if trace_path is not None:
        with open(trace_path, "w", encoding="utf-8") as fh:
            header = {"schema": TRACE_SCHEMA, "rng_seed": seed,
                      "max_cases": config.max_cases}
            fh.write(json.dumps(header, sort_keys=True,
                                separators=(",", ":")) + "\n")
            for row in trace_rows:
                fh.write(json.dumps(row, sort_keys=True,
                                    separators=(",", ":")) + "\n")
    return report


def replay_anomaly(device, report: FuzzReport,
                   anomaly_id: str) -> Tuple[FuzzObservation, bool]:
    """Re-execute a logged anomaly on a freshly reset device.

    Returns the new observation and whether it reproduces the logged
    one exactly.
    """
    for anomaly in report.anomalies:
        if anomaly.anomaly_id == anomaly_id:
            device.reset()
            obs = device.probe(anomaly.input,
                               _case_seed(report.rng_seed,
                                          anomaly.case_index,
                                          anomaly.replay_index))
            return obs, obs == anomaly.observation
    raise FuzzError(f"no anomaly with id {anomaly_id!r}")
