import json

import pytest
from hypothesis import given, strategies as st

from svdkifmm.engine import plan_particles
from svdkifmm.geometry import cube_points
from svdkifmm.report import PHASES, RunReport, plan_report

timing = st.floats(min_value=0, max_value=1e6, allow_nan=False)


@given(st.dictionaries(st.sampled_from(PHASES), timing, min_size=len(PHASES)),
       st.integers(1, 10**7), st.integers(2, 20),
       st.one_of(st.none(), st.floats(0, 1)))
def test_json_round_trip(timings, n, depth, error):
    rep = RunReport("eval", {"p": 6, "m2l": "svd"}, n, depth, [40, 40], timings, 1234, error,
                    {"note": "x"})
    text = rep.to_json()
    again = RunReport.from_json(text)
    assert again == rep
    assert again.to_json() == text


def test_plan_report_fields(rng):
    plan = plan_particles(cube_points(500, seed=1))
    _, t = plan.apply_timed(rng.standard_normal(500))
    t["setup"] = 0.5
    rep = plan_report("eval", plan, t, 1e-4, solver="none")
    data = json.loads(rep.to_json())
    for key in ("command", "config", "n", "depth", "compressed_dims", "timings",
                "memory_bytes", "error", "extra"):
        assert key in data
    assert data["config"]["epsilon1"] == plan.epsilon1
    assert data["compressed_dims"] == list(plan.compressed_dims)
    assert set(PHASES) <= set(data["timings"])


def test_validation():
    good = dict.fromkeys(PHASES, 0.0)
    with pytest.raises(ValueError, match="phases"):
        RunReport("eval", {}, 1, 2, [1, 1], {"total": 1.0}, 0)
    with pytest.raises(ValueError, match="non-negative"):
        RunReport("eval", {}, 1, 2, [1, 1], {**good, "m2l": -1.0}, 0)
    with pytest.raises(ValueError, match="unknown"):
        RunReport.from_dict({"command": "x", "config": {}, "n": 1, "depth": 2,
                             "compressed_dims": [], "timings": good, "memory_bytes": 0,
                             "bogus": 1})
