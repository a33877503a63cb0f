import json
import os

import numpy as np
import pytest

from pmflab.cli import main
from pmflab.configio import ConfigError, document_from, load_config, parse_document, save_config
from pmflab.experiments import (
    EXPERIMENT_KINDS,
    ExperimentSpec,
    emit_plotdata,
    mckean_config,
    run,
)
from pmflab.simulate import SimConfig


def write_mckean_config(path, N=6, n_paths=400, steps=50, x0_var=1.0):
    coeffs, noise = mckean_config(N, x0_var=x0_var)
    save_config(str(path), coeffs, noise,
                sim=SimConfig(T=1.0, steps=steps, n_paths=n_paths, seed=5))
    return path


# ------------------------------------------------------------- config i/o


def test_config_round_trip(tmp_path):
    coeffs, noise = mckean_config(5, x0_var=0.7)
    path = tmp_path / "net.json"
    save_config(str(path), coeffs, noise, sim=SimConfig(T=1.0, steps=10, n_paths=3, seed=1))
    parsed = load_config(str(path))
    assert parsed["coeffs"] == coeffs
    assert parsed["noise"].L_cov == noise.L_cov
    assert parsed["noise"].x0_cov == noise.x0_cov
    assert np.array_equal(parsed["noise"].x0_mean, noise.x0_mean)
    assert parsed["sim"].steps == 10
    # serialization is lossless including awkward floats
    doc = document_from(coeffs, noise)
    doc2 = document_from(parse_document(doc)["coeffs"], parse_document(doc)["noise"])
    assert doc == doc2


def test_config_defaults_and_overrides():
    doc = {"n": 3, "m": 2,
           "noise": {"L": {"default": {"brownian_var": 1.0},
                           "overrides": {"1": {"brownian_var": 4.0}}}}}
    parsed = parse_document(doc)
    assert parsed["noise"].L_specs[0].brownian_var == 1.0
    assert parsed["noise"].L_specs[1].brownian_var == 4.0


def test_config_error_messages_carry_location():
    with pytest.raises(ConfigError, match="coefficients.aP"):
        parse_document({"n": 2, "m": 2, "coefficients": {"aP": [[0, 1, 1.0], [0, 1, 2.0]]}})
    with pytest.raises(ConfigError, match="noise.L"):
        parse_document({"n": 2, "m": 2, "noise": {"L": [{"brownian_var": 1.0}]}})
    with pytest.raises(ConfigError):
        parse_document({"m": 2})


def test_config_bad_json_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\n  \"n\": 2,\n  oops\n}\n")
    with pytest.raises(ConfigError, match="line 3"):
        load_config(str(path))


# ------------------------------------------------------------------ kinds


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError, match="unknown experiment kind"):
        ExperimentSpec(kind="frobnicate")


def test_cli_unknown_kind_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_cli_missing_config_is_config_error(tmp_path, capsys):
    assert main(["rates"]) == 2
    assert main(["rates", "--config", str(tmp_path / "absent.json")]) == 2


def test_cli_simulate_and_rates(tmp_path, capsys):
    cfg = write_mckean_config(tmp_path / "net.json")
    out = tmp_path / "res"
    code = main(["simulate", "--config", str(cfg), "--out", str(out), "--paths", "200"])
    assert code == 0
    env = json.loads((out / "result.json").read_text())
    assert env["payload"]["kind"] == "simulate"
    assert env["payload"]["delta_hat"] > 0
    assert (out / "per_particle.csv").exists()
    assert (out / "per_particle.csv.about.txt").exists()
    capsys.readouterr()
    code = main(["rates", "--config", str(cfg)])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)["payload"]
    assert len(payload["r"]) == 12 and payload["bound"] > 0


def test_cli_certify_pass_and_fail(tmp_path, capsys):
    cfg = write_mckean_config(tmp_path / "net.json")
    assert main(["certify", "--config", str(cfg), "--paths", "200"]) == 0
    # a vacuous bound cannot certify: exit code 3
    coeffs, noise = mckean_config(4)
    big = coeffs.replace_role("aC", coeffs.aC.scale(70.0))
    bad = tmp_path / "bad.json"
    save_config(str(bad), big, noise, sim=SimConfig(T=1.0, steps=400, n_paths=50, seed=1))
    assert main(["certify", "--config", str(bad)]) == 3


def test_cli_mckean_sweep_payload(tmp_path):
    out = tmp_path / "sweep"
    code = main(["mckean-sweep", "--n-grid", "8,16", "--paths", "300",
                 "--steps", "40", "--seed", "3", "--out", str(out)])
    assert code == 0
    payload = json.loads((out / "payload.json").read_bytes())
    assert [row["N"] for row in payload["rows"]] == [8, 16]
    assert payload["rows"][0]["delta_hat"] > payload["rows"][1]["delta_hat"]
    csv = (out / "error_vs_N.csv").read_text().splitlines()
    assert csv[0] == "N,delta_hat,std_err,bound"
    assert len(csv) == 3


def test_cli_pagen_and_pafit(tmp_path):
    out = tmp_path / "graphs"
    code = main(["pagen", "--seed", "1", "--seeds", "1,2,3", "--out", str(out),
                 "--config", str(write_pagen_config(tmp_path))])
    assert code == 0
    payload = json.loads((out / "payload.json").read_bytes())
    assert len(payload["rows"]) == 3
    hist = out / "history_seed1.csv"
    assert hist.exists()
    lines = (out / "edges_seed1.csv").read_text().splitlines()
    assert lines[0] == "step,src,dst"
    assert len(lines) == 1 + 1 + 2000   # header + seed edge + steps
    fit_cfg = tmp_path / "fit.json"
    fit_cfg.write_text(json.dumps({
        "histories": [str(out / f"history_seed{s}.csv") for s in (1, 2, 3)],
        "n_grid": [250, 500, 1000, 2000]}))
    code = main(["pafit", "--config", str(fit_cfg), "--out", str(tmp_path / "fit")])
    assert code == 0
    fit = json.loads((tmp_path / "fit" / "payload.json").read_bytes())
    assert "slope" in fit["in"] and "slope" in fit["out"]


def write_pagen_config(tmp_path):
    cfg = tmp_path / "pa.json"
    cfg.write_text(json.dumps({"alpha": 0.3, "beta": 0.4, "gamma": 0.3,
                               "delta_in": 1.0, "delta_out": 0.5, "N": 2000}))
    return cfg


def test_cli_chaos_sweep(tmp_path):
    out = tmp_path / "chaos"
    code = main(["chaos-sweep", "--n-grid", "10,20", "--seed", "0", "--out", str(out)])
    assert code == 0
    payload = json.loads((out / "payload.json").read_bytes())
    assert all(row["all_hold"] for row in payload["classex"]["rows"])
    assert payload["sparse_family"]["strictly_decreasing"]
    csv = (out / "rate_vs_N.csv").read_text().splitlines()
    assert csv[0].startswith("N,r1,")


def test_cli_ldp_lambda_and_tail(tmp_path):
    out = tmp_path / "lam"
    code = main(["ldp-lambda", "--n-grid", "4,8", "--out", str(out)])
    assert code == 0
    payload = json.loads((out / "payload.json").read_bytes())
    assert len(payload["averages"]) == 2
    assert (out / "cesaro_vs_N.csv").exists()
    out2 = tmp_path / "tail"
    code = main(["ldp-tail", "--n-grid", "3,6", "--paths", "2000", "--seed", "2",
                 "--out", str(out2)])
    assert code == 0
    payload = json.loads((out2 / "payload.json").read_bytes())
    assert len(payload["rows"]) == 2
    assert (out2 / "tail_vs_N.csv").exists()


# ------------------------------------------------------------- envelopes


def test_envelope_validates_against_schema(tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    import importlib.resources as res

    schema = json.loads(res.files("pmflab").joinpath("schemas/envelope.v1.json").read_text())
    cfg = write_mckean_config(tmp_path / "net.json", N=4, n_paths=50, steps=20)
    for kind, extra in (("simulate", {}), ("rates", {}), ("certify", {})):
        spec = ExperimentSpec(kind=kind, config_path=str(cfg), seed=1, **extra)
        env = run(spec)
        doc = json.loads(env.to_json())
        jsonschema.validate(doc, schema)


def test_payload_bytes_deterministic_across_threads(tmp_path):
    cfg = write_mckean_config(tmp_path / "net.json", N=8, n_paths=600, steps=40)
    a = run(ExperimentSpec(kind="simulate", config_path=str(cfg), seed=9, threads=1))
    b = run(ExperimentSpec(kind="simulate", config_path=str(cfg), seed=9, threads=4))
    assert a.payload_bytes() == b.payload_bytes()


def test_emit_plotdata_empty_sweep_header_only(tmp_path):
    from pmflab.experiments import ResultEnvelope

    env = ResultEnvelope(spec={"kind": "mckean-sweep"}, tool_version="t",
                         master_seed=0, created_utc="now",
                         payload={"kind": "mckean-sweep", "rows": [], "N_grid": []})
    files = emit_plotdata(env, str(tmp_path))
    text = open(files[0]).read().splitlines()
    assert text == ["N,delta_hat,std_err,bound"]


def test_pagen_degree_conservation_in_csv(tmp_path):
    out = tmp_path / "g"
    main(["pagen", "--seeds", "4", "--out", str(out),
          "--config", str(write_pagen_config(tmp_path))])
    rows = (out / "history_seed4.csv").read_text().splitlines()[1:]
    edge_counts = [int(r.split(",")[0]) for r in rows]
    assert edge_counts == list(range(len(rows)))   # one edge per recorded step
