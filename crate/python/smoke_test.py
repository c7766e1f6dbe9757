#!/usr/bin/env python3
"""Smoke test for the shaketab_py extension module.

Builds the cdylib with cargo, loads it and exercises the main surface:
schema loading, validation, distances, space sizes, flow profiling, the
rule DSL, simulation, suite generation and a small mutation experiment.

Usage: python3 python/smoke_test.py
"""

import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_extension() -> Path:
    subprocess.run(
        ["cargo", "build", "-p", "shaketab-python", "--release"],
        cwd=ROOT,
        check=True,
    )
    built = ROOT / "target" / "release" / "libshaketab_py.so"
    if not built.exists():  # macOS
        built = ROOT / "target" / "release" / "libshaketab_py.dylib"
    stage = Path(tempfile.mkdtemp(prefix="shaketab_py_"))
    shutil.copy(built, stage / "shaketab_py.so")
    return stage


def main() -> None:
    sys.path.insert(0, str(build_extension()))
    import shaketab_py

    schema = shaketab_py.Schema.load(str(ROOT / "fixtures" / "webserver.schema.json"))
    assert schema.property_names() == [
        "request_density",
        "file_number",
        "request_dispersion",
    ]

    # Validation: a known-good instance and a constraint violation.
    assert schema.validate_instance([12, 3, 0.5]) == []
    violations = schema.validate_instance([5, 100, 1])
    assert violations and "file_number <= request_density" in violations[0]

    # Distances over normalized coordinates.
    assert schema.distance([12, 3, 0.5], [12, 3, 0.5]) == 0.0
    assert abs(schema.distance([1, 1, 0], [1000, 1000, 1]) - math.sqrt(3)) < 1e-9

    # Space accounting: 1000 * 1000 * 11 instances, squared for length-2 flows.
    assert schema.context_space_size() == "11000000"
    assert schema.flow_space_size(2) == str(11_000_000**2)

    # Profiling the spike fixture: one escalating window, crescendo shape.
    spike = [
        [1, 1, 0.0],
        [1, 1, 0.0],
        [1, 1, 0.1],
        [1, 1, 0.3],
        [1, 1, 0.9],
        [1, 1, 0.2],
    ]
    profile = json.loads(schema.profile_flow(spike))
    assert profile["ep_count"] == 1
    assert profile["shape"] == "crescendo_peak"
    assert len(profile["origin_distance_series"]) == len(spike)

    # The reference policy parses and reacts to a load spike.
    policy = schema.parse_policy(shaketab_py.reference_policy())
    assert policy.rule_count() == 10
    scenario = [
        [10, 5, 1.0],
        [1000, 300, 0.1],
        [1000, 300, 0.1],
        [10, 5, 1.0],
    ]
    trace = json.loads(policy.simulate(scenario))
    assert not trace[0]["variant"]["cache_exists"]
    assert trace[1]["variant"]["cache_exists"]
    assert trace[1]["variant"]["data_servers"] > 1
    assert not trace[3]["variant"]["cache_exists"]

    # A small end-to-end search run.
    result = json.loads(
        schema.generate_suite(
            seed=7, flow_length=12, local_iterations=40, stale_limit=8, hard_limit=30
        )
    )
    assert result["solution"], "search returned an empty suite"
    assert result["iterations_used"] <= 30
    flows = [[inst for inst in flow["instances"]] for flow in result["solution"]]

    # Mutation analysis over the generated flows.
    report = json.loads(policy.mutation_report(flows, f1=3, f2=6, f3=6, f4=6))
    assert report["total_mutants"] == 21
    assert report["total_aeqs"] == len(flows)
    assert 0.0 <= report["raw_kill_fraction"] <= 1.0

    print(
        "smoke test passed: "
        f"{len(flows)} flows generated, G={result['g_value']:.3f}, "
        f"raw kill fraction {report['raw_kill_fraction']:.2f}"
    )


if __name__ == "__main__":
    main()
