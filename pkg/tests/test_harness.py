import json

import numpy as np
import pytest

from biaslab.cli import main
from biaslab.harness import (CSV_HEADER, ConfigError, ExperimentConfig, ResultRow, format_results,
                             read_results, run_experiment, splitmix64, trajectory_seed, true_effect,
                             write_results)


def small_config(**kw):
    base = dict(n_k=100, n_traj=8, factors=[1, 10], beta1_grid=[0.0, -2.0])
    base.update(kw)
    return ExperimentConfig(**base).validate()


def test_splitmix_reference_values():
    # first outputs of the reference SplitMix64 generator seeded with 0
    assert splitmix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF
    assert splitmix64(2 * 0x9E3779B97F4A7C15 % 2**64) == 0x6E789E6AA1B965F4


def test_seeds_distinct_and_deterministic():
    seeds = [trajectory_seed(0, i) for i in range(1000)]
    assert len(set(seeds)) == 1000
    assert seeds == [trajectory_seed(0, i) for i in range(1000)]
    assert trajectory_seed(1, 0) != trajectory_seed(0, 0)
    assert all(0 <= s < 2**64 for s in seeds)


def test_default_config_round_trip():
    cfg = ExperimentConfig()
    again = ExperimentConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert again == cfg


@pytest.mark.parametrize("patch,field", [
    ({"delta": -0.1}, "delta"),
    ({"nTraj": 0}, "nTraj"),
    ({"factors": [1, 7]}, "n_k"),
    ({"factors": [10, 20]}, "factors"),
    ({"beta1Grid": [-1.0]}, "beta1Grid"),
    ({"policy": {"alpha": 1.2}}, "policy.alpha"),
    ({"noise": {"r": 0.0}}, "noise.r"),
])
def test_config_errors_name_the_field(patch, field):
    doc = ExperimentConfig().to_json()
    for k, v in patch.items():
        if isinstance(v, dict):
            doc[k].update(v)
        else:
            doc[k] = v
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        ExperimentConfig.from_json(doc)


def test_unknown_config_field():
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_json({"nTrajectories": 3})


def test_empty_results_file(tmp_path):
    p = write_results([], tmp_path / "r.csv")
    assert p.read_text() == ",".join(CSV_HEADER) + "\n"


def test_single_row_round_trip(tmp_path):
    row = ResultRow(-0.5, "coarsened-10", "B2", 0.123456789012345, 1.5e-3, 42)
    p = write_results([row], tmp_path / "r.csv")
    lines = p.read_text().splitlines()
    assert len(lines) == 2
    assert lines[1] == "-0.5,coarsened-10,B2,0.123456789,0.0015,42"
    back = read_results(p)[0]
    assert back.model == row.model and back.seed == 42
    assert back.estimate == pytest.approx(row.estimate, rel=1e-9)


def test_unwritable_path_is_reported(tmp_path):
    with pytest.raises(OSError, match="r.csv"):
        write_results([], tmp_path / "missing" / "r.csv")


def test_rows_sorted():
    rows = [ResultRow(0.0, "continuous", "B1", 1, 1, 0), ResultRow(-1.0, "coarsened-01", "B2", 1, 1, 0),
            ResultRow(-1.0, "coarsened-01", "B1", 1, 1, 0)]
    lines = format_results(rows).splitlines()[1:]
    assert [l.split(",")[:3] for l in lines] == [["-1", "coarsened-01", "B1"], ["-1", "coarsened-01", "B2"],
                                                  ["0", "continuous", "B1"]]


def test_small_experiment(tmp_path):
    cfg = small_config()
    rows = run_experiment(cfg)
    models = {r.model for r in rows}
    assert models == {"coarsened-01", "coarsened-10", "continuous"}
    assert len(rows) == 2 * 3 * 2
    by = {(r.beta1, r.model, r.param): r for r in rows}
    for b in (0.0, -2.0):
        for prm in ("B1", "B2"):
            assert by[(b, "continuous", prm)].estimate == pytest.approx(
                by[(b, "coarsened-01", prm)].estimate, abs=1e-6)
    assert all(r.stderr > 0 for r in rows)


def test_experiment_is_deterministic(tmp_path):
    cfg = small_config(n_traj=4, beta1_grid=[0.0])
    a = write_results(run_experiment(cfg), tmp_path / "a.csv").read_bytes()
    b = write_results(run_experiment(cfg), tmp_path / "b.csv").read_bytes()
    assert a == b


def test_true_effect():
    np.testing.assert_allclose(true_effect(ExperimentConfig()), [0.04868933522348366, 0.47319852488978176],
                               rtol=1e-12)


def test_cli_run(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(small_config(n_traj=3, beta1_grid=[0.0]).to_json()))
    out = tmp_path / "results.csv"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_results(out)
    assert len(rows) == 6
    assert "true B" in capsys.readouterr().out


def test_cli_bad_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"delta": 0}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2
    assert "delta" in capsys.readouterr().err


def test_cli_simulate(tmp_path, capsys):
    assert main(["simulate", "--beta1", "-1", "--index", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 500
    first = json.loads(lines[0])
    assert set(first) == {"k", "X", "Y", "O", "U"}


def test_cli_model(capsys):
    assert main(["model", "--step"]) == 0
    doc = json.loads(capsys.readouterr().out)
    np.testing.assert_allclose(doc["B"], [[0.04868933522348366], [0.47319852488978176]], rtol=1e-12)


def test_cli_verify(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "7/7 checks passed" in out
