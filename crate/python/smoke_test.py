"""Smoke test for the Python bindings.

Build and install first:
    pip install maturin && maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/submfq-*.whl
"""

import itertools
import json
import tempfile
from pathlib import Path

import submfq


def main():
    spec = submfq.SystemSpec.random(3, n=4, global_states=2, local_states=2,
                                    global_actions=2, local_actions=2, gamma=0.8)
    again = submfq.SystemSpec.from_json(spec.to_json())
    assert again.to_json() == spec.to_json()
    assert spec.n == 4 and spec.dims["local_states"] == 2

    # The system reward is the average of the surrogate over all k-subsets.
    s_locals, a_locals = [0, 1, 1, 0], [1, 0, 1, 1]
    full = spec.system_reward(1, s_locals, 0, a_locals)
    subsets = list(itertools.combinations(range(4), 2))
    avg = sum(spec.surrogate_reward(1, s_locals, 0, a_locals, list(d)) for d in subsets) / len(subsets)
    assert abs(full - avg) < 1e-12, (full, avg)

    table, report = submfq.learn(spec, k=2, iterations=200, tol=1e-10)
    assert report["converged"] and report["k"] == 2
    assert max(abs(v) for v in table.values()) <= spec.value_bound() + 1e-9

    sampled, _ = submfq.learn(spec, k=2, iterations=60, m=50, seed=5)
    assert table.max_abs_diff(sampled) < 1.0

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "q.bin"
        table.save(str(path), {"note": "smoke"})
        back, sidecar = submfq.QTable.load(str(path))
        assert back.values() == table.values()
        assert sidecar["metadata"]["note"] == "smoke"

    policy = submfq.LearnedPolicy(table)
    assert policy.greedy_global(0, [0, 1]) in (0, 1)
    traj = submfq.execute(spec, policy, strategy="weak_shared", horizon=20, seed=1)
    assert len(traj["steps"]) == 20
    summary = submfq.evaluate(spec, policy, episodes=200, horizon=30, seed=2)
    assert summary["half_width"] > 0

    reports = submfq.verify(["reward_average", "contraction"], seed=7)
    assert all(r["passed"] for r in reports), reports
    bad = submfq.verify(["contraction"], seed=7, perturb_gamma=0.3)
    assert not bad[0]["passed"]

    records = submfq.sweep({
        "environment": {"name": "random", "params": {"seed": 9, "sizes": {
            "n": 3, "global_states": 2, "local_states": 2, "global_actions": 2,
            "local_actions": 2, "gamma": 0.7}}},
        "learner": {"mode": "sampled", "iterations": 30, "m": 5},
        "execution": {"strategy": "independent", "episodes": 50, "horizon": 20},
        "sweep": {"k": [1, 2, 3]},
        "seed": 4,
    })
    assert [r["k"] for r in records] == [1, 2, 3]

    try:
        spec.with_gamma(1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("gamma = 1 accepted")

    print(json.dumps({"ok": True, "version": submfq.__version__, "mean_return": summary["mean"]}))


if __name__ == "__main__":
    main()
