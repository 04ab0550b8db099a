"""End-to-end tests of the command-line interface.

Every subcommand is exercised through ``cli.main(argv)`` the way the
console script invokes it, including each bundled scenario config, the
machine-readable error paths behind exit codes 2/3/4, and artifact
byte-determinism for a fixed seed.
"""

import contextlib
import io
import json
import re
from pathlib import Path

import pytest

import qkdlab.attacks as atk
import qkdlab.cli as cli
import qkdlab.receivers as rc

REPO_ROOT = Path(__file__).resolve().parents[1]
SCENARIO_DIR = REPO_ROOT / "docs" / "scenarios"
SCHEMA_DIR = REPO_ROOT / "docs" / "schemas"
EXAMPLE_DIR = REPO_ROOT / "docs" / "examples"

CNOT_FILE = str(EXAMPLE_DIR / "cnot-ideal-attack.json")
FAKED_FILE = str(EXAMPLE_DIR / "faked-states-6mode-attack.json")


def run_cli(argv):
    """Invoke the CLI in-process, returning (exit_code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli.main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def last_error(stderr):
    return json.loads(stderr.strip().splitlines()[-1])


# a receiver that calls every click "bit0" admits no zero-error isometry:
# the bit-1 input may never produce a click, yet nothing else is reachable
UNSATISFIABLE_RECEIVER = {
    "kind": "custom",
    "name": "always-bit0",
    "modes": ["polarization-H:0", "polarization-V:0"],
    "channel_modes": ["polarization-H:0", "polarization-V:0"],
    "max_photons": 2,
    "settings": {
        "computational": {
            "input_basis": ["polarization-H:0", "polarization-V:0"],
            "output_basis": ["polarization-H:0", "polarization-V:0"],
            "matrix": [[[1, 0], [0, 0]], [[0, 0], [1, 0]]],
            "outcomes": {"D0": ["polarization-H:0"],
                         "D1": ["polarization-V:0"]},
            "interpretation": {"D0": "bit0", "D1": "bit0"},
        }
    },
    "source": {
        "computational/0": {"polarization-H:0": [1.0, 0.0]},
        "computational/1": {"polarization-V:0": [1.0, 0.0]},
    },
}


# ---------------------------------------------------------------------------
# happy paths per subcommand
# ---------------------------------------------------------------------------

def test_reverse_space_row_and_artifact(tmp_path):
    out = tmp_path / "rs.json"
    code, stdout, _ = run_cli(["reverse-space", "--receiver",
                               "interferometric-6mode", "--out", out])
    assert code == cli.EXIT_OK
    assert ("reverse-space receiver=interferometric-6mode "
            "dimension=5 constraints=6") in stdout
    artifact = json.loads(out.read_text())
    assert artifact["schema"] == "reverse-space/1"
    assert artifact["dimension"] == 5
    assert artifact["has_vacuum_direction"] is True
    assert artifact["rng_seed"] == 0


def test_synth_artifact_is_deterministic_and_verifiable(tmp_path):
    out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
    code_a, stdout, _ = run_cli(["synth", "--receiver",
                                 "interferometric-6mode", "--out", out_a])
    code_b, _, _ = run_cli(["synth", "--receiver",
                            "interferometric-6mode", "--out", out_b])
    assert code_a == code_b == cli.EXIT_OK
    assert out_a.read_bytes() == out_b.read_bytes()
    assert "family-dimension=5" in stdout

    artifact = json.loads(out_a.read_text())
    assert artifact["family_dimension"] == 5
    assert artifact["only_trivial"] is False
    attack = atk.AttackIsometry.from_json_dict(artifact["canonical"])
    receiver = rc.make_receiver("interferometric-6mode")
    assert atk.verify_oblivious(attack, receiver=receiver).oblivious


def test_synth_defended_reports_only_trivial(tmp_path):
    out = tmp_path / "fam.json"
    code, stdout, _ = run_cli(["synth", "--receiver",
                               "interferometric-defended-10mode",
                               "--out", out])
    assert code == cli.EXIT_OK
    assert "only-trivial" in stdout
    artifact = json.loads(out.read_text())
    assert artifact["only_trivial"] is True
    assert artifact["family_dimension"] == 3
    assert artifact["note"]


def test_verify_flags_detectable_attack(tmp_path):
    out = tmp_path / "ver.json"
    code, stdout, stderr = run_cli(["verify", "--receiver", "ideal-bb84",
                                    "--attack", CNOT_FILE, "--out", out])
    assert code == cli.EXIT_VERIFICATION
    assert "verdict=detectable" in stdout
    artifact = json.loads(out.read_text())
    assert artifact["oblivious"] is False
    assert artifact["max_error_amplitude"] == pytest.approx(2 ** -0.5)
    settings = {row["setting"] for row in artifact["failing_rows"]}
    assert settings == {rc.HADAMARD}
    assert last_error(stderr)["event"] == "verification-failed"


def test_verify_accepts_oblivious_attack(tmp_path):
    out = tmp_path / "ver.json"
    code, stdout, _ = run_cli(["verify", "--receiver",
                               "interferometric-6mode",
                               "--attack", FAKED_FILE, "--out", out])
    assert code == cli.EXIT_OK
    assert "verdict=oblivious" in stdout
    artifact = json.loads(out.read_text())
    assert artifact["oblivious"] is True
    assert artifact["failing_rows"] == []


def test_verify_accepts_named_attacks():
    code, stdout, _ = run_cli(["verify", "--receiver",
                               "interferometric-6mode",
                               "--attack", "faked-states"])
    assert code == cli.EXIT_OK
    assert "attack=faked-states-early-late" in stdout


def test_simulate_report_row_format(tmp_path):
    out = tmp_path / "sim.json"
    log = tmp_path / "rounds.ndjson"
    argv = ["simulate", "--receiver", "interferometric-6mode",
            "--attack", "faked-states", "--rounds", 20000,
            "--out", out, "--log", log]
    code, stdout, _ = run_cli(argv)
    assert code == cli.EXIT_OK
    lines = stdout.splitlines()
    assert re.fullmatch(r"efficiency comp=0\.\d{3} had=0\.000 qber=0",
                        lines[1])
    assert re.fullmatch(r"eve-accuracy 1\.000", lines[2])

    artifact = json.loads(out.read_text())
    assert artifact["schema"] == "simulation-report/1"
    assert artifact["qber_pooled"] == 0
    assert artifact["eve_guess_accuracy"] == 1.0

    header = json.loads(log.read_text().splitlines()[0])
    assert header["schema"] == "round-log/1"
    assert header["rounds"] == 20000

    out_b = tmp_path / "sim-b.json"
    code_b, _, _ = run_cli(argv[:-4] + ["--out", out_b])
    assert code_b == cli.EXIT_OK
    assert out.read_bytes() == out_b.read_bytes()


def test_simulate_seed_changes_report(tmp_path):
    rows = []
    for seed in (0, 1):
        out = tmp_path / f"sim-{seed}.json"
        code, _, _ = run_cli(["simulate", "--receiver", "ideal-bb84",
                              "--channel", "lossy", "--loss", "0.3",
                              "--rounds", 2000, "--seed", seed,
                              "--out", out])
        assert code == cli.EXIT_OK
        rows.append(json.loads(out.read_text())["sifted_total"])
    assert rows[0] != rows[1]


def test_fuzz_campaign_artifact_and_replay(tmp_path):
    out = tmp_path / "fuzz.json"
    trace = tmp_path / "trace.ndjson"
    code, stdout, _ = run_cli(["fuzz", "--out", out, "--trace", trace])
    assert code == cli.EXIT_OK
    assert "properties=Blinding,StrongUnderBlinding,WeakUnderBlinding" \
        in stdout

    artifact = json.loads(out.read_text())
    assert artifact["schema"] == "fuzz-report/1"
    assert artifact["test_cases_run"] <= 10000
    assert artifact["device"]["blind_threshold"] == 400.0
    assert artifact["derived_vulnerabilities"]

    header = json.loads(trace.read_text().splitlines()[0])
    assert header["schema"] == "fuzz-trace/1"

    anomaly_id = artifact["anomalies"][0]["anomaly_id"]
    code, stdout, _ = run_cli(["fuzz", "--replay", anomaly_id,
                               "--report", out])
    assert code == cli.EXIT_OK
    assert f"replay anomaly={anomaly_id}" in stdout
    assert "reproduced=true" in stdout

    code, _, stderr = run_cli(["fuzz", "--replay", "a9999",
                               "--report", out])
    assert code == cli.EXIT_CONFIG
    assert last_error(stderr)["code"] == "invalid-config"


def test_classify_writes_registry_and_graph(tmp_path):
    out = tmp_path / "reg.json"
    dot = tmp_path / "reg.dot"
    code, stdout, _ = run_cli(["classify", "--out", out, "--dot", dot])
    assert code == cli.EXIT_OK
    assert len(stdout.splitlines()) == 11

    artifact = json.loads(out.read_text())
    assert artifact["schema"] == "attack-registry/1"
    assert len(artifact["records"]) == 11
    text = dot.read_text()
    assert '"faked-states" -> "reversed-space"' in text


def test_report_renders_every_artifact_schema(tmp_path):
    sim = tmp_path / "sim.json"
    rs = tmp_path / "rs.json"
    fam = tmp_path / "fam.json"
    ver = tmp_path / "ver.json"
    reg = tmp_path / "reg.json"
    run_cli(["simulate", "--receiver", "ideal-bb84", "--rounds", 2000,
             "--out", sim])
    run_cli(["reverse-space", "--receiver", "interferometric-2mode",
             "--out", rs])
    run_cli(["synth", "--receiver", "interferometric-defended-10mode",
             "--out", fam])
    run_cli(["verify", "--receiver", "ideal-bb84", "--attack", CNOT_FILE,
             "--out", ver])
    run_cli(["classify", "--out", reg])

    code, stdout, _ = run_cli(["report", sim, rs, fam, ver, reg])
    assert code == cli.EXIT_OK
    lines = stdout.splitlines()
    assert lines[0].startswith("efficiency comp=")
    assert any(line.startswith("reverse-space receiver=interferometric-2mode")
               for line in lines)
    assert any(line.endswith("only-trivial") for line in lines)
    assert any("verdict=detectable" in line for line in lines)
    assert "registry records=11" in lines


def test_report_with_no_artifacts_is_empty():
    code, stdout, stderr = run_cli(["report"])
    assert code == cli.EXIT_OK
    assert stdout == ""
    assert stderr == ""


def test_report_rejects_unknown_schema(tmp_path):
    bogus = tmp_path / "bogus.json"
    bogus.write_text(json.dumps({"schema": "telemetry/9"}))
    code, _, stderr = run_cli(["report", bogus])
    assert code == cli.EXIT_CONFIG
    assert last_error(stderr)["code"] == "schema-mismatch"


# ---------------------------------------------------------------------------
# error paths and exit codes
# ---------------------------------------------------------------------------

def test_unknown_receiver_exits_config_error():
    code, _, stderr = run_cli(["reverse-space", "--receiver", "no-such"])
    assert code == cli.EXIT_CONFIG
    payload = last_error(stderr)
    assert payload["code"] == "invalid-receiver"
    assert payload["context"]["receiver"] == "no-such"


def test_missing_required_option_exits_config_error():
    code, _, stderr = run_cli(["verify", "--receiver", "ideal-bb84"])
    assert code == cli.EXIT_CONFIG
    assert last_error(stderr)["code"] == "missing-option"


def test_unknown_named_attack_exits_config_error():
    code, _, stderr = run_cli(["simulate", "--receiver", "ideal-bb84",
                               "--attack", "quantum-hammer"])
    assert code == cli.EXIT_CONFIG
    assert last_error(stderr)["code"] == "invalid-attack"


def test_attack_conflicts_with_channel_kind():
    code, _, stderr = run_cli(["simulate", "--receiver", "ideal-bb84",
                               "--attack", "cnot", "--channel", "pns"])
    assert code == cli.EXIT_CONFIG
    assert last_error(stderr)["code"] == "invalid-config"


def test_infeasible_synthesis_exits_3(tmp_path):
    path = tmp_path / "always-bit0.json"
    path.write_text(json.dumps(UNSATISFIABLE_RECEIVER))
    code, _, stderr = run_cli(["synth", "--receiver", path])
    assert code == cli.EXIT_INFEASIBLE
    payload = last_error(stderr)
    assert payload["code"] == "infeasible-synthesis"
    assert payload["context"]["receiver"] == "always-bit0"


def test_synth_rejects_zero_probe_dimension():
    code, _, stderr = run_cli(["synth", "--receiver", "ideal-bb84",
                               "--eve-dim", 0])
    assert code == cli.EXIT_CONFIG
    assert last_error(stderr)["code"] == "invalid-config"


# ---------------------------------------------------------------------------
# config files and flag precedence
# ---------------------------------------------------------------------------

def test_config_supplies_options_and_flags_override(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({
        "subcommand": "simulate", "receiver": "ideal-bb84",
        "rounds": 500, "seed": 3,
    }))
    out = tmp_path / "sim-out.json"
    code, _, _ = run_cli(["simulate", "--config", cfg,
                          "--rounds", 800, "--out", out])
    assert code == cli.EXIT_OK
    artifact = json.loads(out.read_text())
    assert artifact["rounds"] == 800  # flag beats config
    assert artifact["rng_seed"] == 3  # config beats default


def test_config_with_unknown_keys_is_rejected(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"receiver": "ideal-bb84", "bogus": 1}))
    code, _, stderr = run_cli(["reverse-space", "--config", cfg])
    assert code == cli.EXIT_CONFIG
    assert last_error(stderr)["code"] == "unknown-config-keys"


def test_config_subcommand_mismatch_is_rejected(tmp_path):
    cfg = tmp_path / "mismatch.json"
    cfg.write_text(json.dumps({"subcommand": "fuzz"}))
    code, _, stderr = run_cli(["classify", "--config", cfg])
    assert code == cli.EXIT_CONFIG
    assert last_error(stderr)["code"] == "subcommand-mismatch"


def test_config_must_be_a_json_object(tmp_path):
    cfg = tmp_path / "list.json"
    cfg.write_text("[1, 2]")
    code, _, stderr = run_cli(["classify", "--config", cfg])
    assert code == cli.EXIT_CONFIG
    assert last_error(stderr)["code"] == "invalid-config"


def test_missing_files_are_config_errors(tmp_path):
    code, _, stderr = run_cli(["classify", "--config",
                               tmp_path / "nope.json"])
    assert code == cli.EXIT_CONFIG
    assert last_error(stderr)["code"] == "file-not-found"

    code, _, stderr = run_cli(["verify", "--receiver", "ideal-bb84",
                               "--attack", tmp_path / "nope.json"])
    assert code == cli.EXIT_CONFIG
    assert last_error(stderr)["code"] == "file-not-found"


# ---------------------------------------------------------------------------
# logging
# ---------------------------------------------------------------------------

def test_log_level_gates_stderr_events(tmp_path, monkeypatch):
    out = tmp_path / "rs.json"
    argv = ["reverse-space", "--receiver", "ideal-bb84", "--out", out]

    monkeypatch.delenv("QKDLAB_LOG_LEVEL", raising=False)
    _, _, stderr = run_cli(argv)
    assert stderr == ""  # default threshold hides info events

    monkeypatch.setenv("QKDLAB_LOG_LEVEL", "info")
    _, _, stderr = run_cli(argv)
    events = [json.loads(line) for line in stderr.splitlines()]
    assert any(e["event"] == "artifact-written" for e in events)

    monkeypatch.setenv("QKDLAB_LOG_LEVEL", "error")
    code, _, stderr = run_cli(["verify", "--receiver", "ideal-bb84",
                               "--attack", CNOT_FILE])
    assert code == cli.EXIT_VERIFICATION
    events = [json.loads(line) for line in stderr.splitlines()]
    assert [e["event"] for e in events] == ["verification-failed"]


# ---------------------------------------------------------------------------
# bundled scenarios
# ---------------------------------------------------------------------------

# dependency order: the report scenario renders artifacts produced by the
# simulate and verify scenarios, so those must run first
SCENARIO_ORDER = [
    ("reverse-space-6mode.json", cli.EXIT_OK),
    ("synth-6mode.json", cli.EXIT_OK),
    ("synth-defended.json", cli.EXIT_OK),
    ("verify-copy-vs-ideal.json", cli.EXIT_VERIFICATION),
    ("verify-faked-states-6mode.json", cli.EXIT_OK),
    ("simulate-faked-states.json", cli.EXIT_OK),
    ("simulate-pns.json", cli.EXIT_OK),
    ("fuzz-blinding.json", cli.EXIT_OK),
    ("classify-registry.json", cli.EXIT_OK),
    ("report-simulation.json", cli.EXIT_OK),
]


def test_every_subcommand_has_a_bundled_scenario():
    names = {path.name for path in SCENARIO_DIR.glob("*.json")}
    assert names == {name for name, _ in SCENARIO_ORDER}
    covered = {json.loads((SCENARIO_DIR / name).read_text())["subcommand"]
               for name in names}
    assert covered == set(cli._HANDLERS)


def test_bundled_scenarios_run_with_expected_exit_codes(tmp_path,
                                                        monkeypatch):
    # scenarios reference docs/examples and write under artifacts/ using
    # paths relative to the working directory
    monkeypatch.chdir(tmp_path)
    (tmp_path / "docs").symlink_to(REPO_ROOT / "docs",
                                   target_is_directory=True)
    for name, expected in SCENARIO_ORDER:
        config = SCENARIO_DIR / name
        subcommand = json.loads(config.read_text())["subcommand"]
        code, stdout, stderr = run_cli([subcommand, "--config", config])
        assert code == expected, (name, stderr)
        if expected == cli.EXIT_OK and subcommand != "report":
            assert stdout

    produced = sorted(p.name for p in (tmp_path / "artifacts").iterdir())
    assert produced == [
        "attack-family-6mode.json",
        "attack-family-defended.json",
        "attack-registry.json",
        "attack-taxonomy.dot",
        "fuzz-blinding.json",
        "reverse-space-6mode.json",
        "simulation-faked-states.json",
        "simulation-pns.json",
        "verification-copy-vs-ideal.json",
        "verification-faked-states-6mode.json",
    ]


# ---------------------------------------------------------------------------
# schema documents match what the tools emit and accept
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def draft7():
    jsonschema = pytest.importorskip("jsonschema")
    from referencing import Registry, Resource
    from referencing.jsonschema import DRAFT7

    schemas = {}
    resources = []
    for path in sorted(SCHEMA_DIR.glob("*.schema.json")):
        content = json.loads(path.read_text())
        schemas[path.name] = content
        resources.append(
            (path.name,
             Resource.from_contents(content,
                                    default_specification=DRAFT7)))
    registry = Registry().with_resources(resources)

    def validate(instance, schema_name):
        jsonschema.Draft7Validator(
            schemas[schema_name], registry=registry).validate(instance)

    return validate


def test_schema_documents_are_valid_draft7(draft7):
    jsonschema = pytest.importorskip("jsonschema")
    for path in sorted(SCHEMA_DIR.glob("*.schema.json")):
        jsonschema.Draft7Validator.check_schema(
            json.loads(path.read_text()))


def test_bundled_configs_validate_against_schemas(draft7):
    for path in sorted(SCENARIO_DIR.glob("*.json")):
        draft7(json.loads(path.read_text()), "scenario-config.schema.json")
    for path in sorted(EXAMPLE_DIR.glob("*-attack.json")):
        draft7(json.loads(path.read_text()), "attack-isometry.schema.json")
    draft7(UNSATISFIABLE_RECEIVER, "receiver-config.schema.json")
    draft7({"kind": "blinded-bright", "bright_photons": 6},
           "receiver-config.schema.json")


def test_emitted_artifacts_validate_against_schemas(draft7, tmp_path):
    rs = tmp_path / "rs.json"
    fam = tmp_path / "fam.json"
    ver = tmp_path / "ver.json"
    sim = tmp_path / "sim.json"
    log = tmp_path / "log.ndjson"
    fuzz = tmp_path / "fuzz.json"
    trace = tmp_path / "trace.ndjson"
    reg = tmp_path / "reg.json"

    run_cli(["reverse-space", "--receiver", "interferometric-6mode",
             "--out", rs])
    run_cli(["synth", "--receiver", "interferometric-6mode", "--out", fam])
    run_cli(["verify", "--receiver", "ideal-bb84", "--attack", CNOT_FILE,
             "--out", ver])
    run_cli(["simulate", "--receiver", "interferometric-6mode",
             "--attack", "faked-states", "--rounds", 2000,
             "--out", sim, "--log", log])
    run_cli(["fuzz", "--out", fuzz, "--trace", trace])
    run_cli(["classify", "--out", reg])

    draft7(json.loads(rs.read_text()), "reverse-space.schema.json")
    draft7(json.loads(fam.read_text()), "attack-family.schema.json")
    draft7(json.loads(ver.read_text()), "verification.schema.json")
    draft7(json.loads(sim.read_text()), "simulation-report.schema.json")
    draft7(json.loads(fuzz.read_text()), "fuzz-report.schema.json")
    draft7(json.loads(reg.read_text()), "attack-registry.schema.json")
    for line in log.read_text().splitlines():
        draft7(json.loads(line), "round-log.schema.json")
    for line in trace.read_text().splitlines()[:200]:
        draft7(json.loads(line), "fuzz-trace.schema.json")
