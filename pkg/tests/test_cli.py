import csv
import json

import pytest

from target_auction.cli import EXIT_INPUT, EXIT_NO_SALE, EXIT_OK, EXIT_VIOLATION, build_parser, run

EX1 = "bidder_id,price,quantity\nA,10,5\nB,8,5\nC,6,5\n"
EX1_FLAGS = ["--reserve-price", "5", "--share-cap", "10", "--revenue-target", "60"]


def invoke(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def ex1(tmp_path):
    p = tmp_path / "ex1.csv"
    p.write_text(EX1)
    return p


@pytest.fixture(scope="module")
def truthful_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("truthful")
    assert run(["gen-data", "--n", "40", "--seed", "4", "--output-dir", str(d)]) == EXIT_OK
    return d


# -- clear ------------------------------------------------------------------------------------

def test_clear_worked_example(capsys, ex1):
    code, out, _ = invoke(capsys, "clear", ex1, *EX1_FLAGS)
    body = json.loads(out)
    assert code == EXIT_OK
    assert body["stop_out_price"] == 6
    assert body["quantity_sold"] == 10 and body["revenue"] == 60
    assert body["allocations"] == {"A": 5, "B": 5, "C": 0}


def test_clear_json_input_matches_csv(capsys, ex1, tmp_path):
    j = tmp_path / "ex1.json"
    j.write_text(json.dumps({"A": [[10, 5]], "B": [[8, 5]], "C": [[6, 5]]}))
    _, a, _ = invoke(capsys, "clear", ex1, *EX1_FLAGS)
    _, b, _ = invoke(capsys, "clear", j, *EX1_FLAGS)
    assert a == b


def test_clear_empty_file_is_no_sale(capsys, tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("bidder_id,price,quantity\n")
    code, out, _ = invoke(capsys, "clear", p, *EX1_FLAGS)
    assert code == EXIT_NO_SALE
    assert json.loads(out)["status"] == "no-sale"


def test_clear_missing_file(capsys, tmp_path):
    code, out, err = invoke(capsys, "clear", tmp_path / "nope.csv", *EX1_FLAGS)
    assert code == EXIT_INPUT and out == ""
    assert "not found" in json.loads(err)["message"]


def test_clear_bad_bid_names_bidder(capsys, tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("bidder_id,price,quantity\nA,10,5\nZ,-3,1\n")
    code, _, err = invoke(capsys, "clear", p, *EX1_FLAGS)
    assert code == EXIT_INPUT
    assert json.loads(err)["bidder_id"] == "Z"


def test_clear_standard_mode(capsys, ex1):
    code, out, _ = invoke(capsys, "clear", ex1, "--reserve-price", "5", "--share-cap", "5", "--standard")
    assert code == EXIT_OK and json.loads(out)["stop_out_price"] == 8


def test_clear_output_file(capsys, ex1, tmp_path):
    dest = tmp_path / "o" / "out.json"
    code, out, _ = invoke(capsys, "clear", ex1, *EX1_FLAGS, "--output", dest)
    assert code == EXIT_OK and out == ""
    assert json.loads(dest.read_text())["stop_out_price"] == 6


# -- usage errors and config ---------------------------------------------------------------------

def test_unknown_flag_is_error(capsys, ex1):
    code, _, err = invoke(capsys, "clear", ex1, *EX1_FLAGS, "--frobnicate")
    assert code == EXIT_INPUT
    assert json.loads(err)["error"] == "usage"
    assert "frobnicate" in json.loads(err)["message"]


def test_missing_subcommand(capsys):
    code, _, err = invoke(capsys)
    assert code == EXIT_INPUT and json.loads(err)["error"] == "usage"


@pytest.mark.parametrize("argv", [
    [], ["clear"], ["simulate"], ["verify"], ["verify", "prop1"], ["verify", "prop2"],
    ["benchmark"], ["regress"], ["gen-data"],
])
def test_help_everywhere(capsys, argv):
    with pytest.raises(SystemExit) as e:
        run(argv + ["--help"])
    assert e.value.code == 0
    assert "usage:" in capsys.readouterr().out


def test_config_file_supplies_and_flags_override(capsys, ex1, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# auction\nreserve-price = 5\nshare_cap = 10\nrevenue-target = 60\n")
    code, out, _ = invoke(capsys, "--config", cfg, "clear", ex1)
    assert code == EXIT_OK and json.loads(out)["stop_out_price"] == 6
    # flag beats the file: R = 80 walks down to the reserve
    code, out, _ = invoke(capsys, "--config", cfg, "clear", ex1, "--revenue-target", "80")
    assert json.loads(out)["stop_out_price"] == 6
    assert json.loads(out)["target_met"] is False


def test_config_unknown_key(capsys, ex1, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = invoke(capsys, "--config", cfg, "clear", ex1, *EX1_FLAGS)
    assert code == EXIT_INPUT and "colour" in json.loads(err)["message"]


def test_parser_builds():
    assert build_parser().prog == "target-auction"


# -- simulate / verify -------------------------------------------------------------------------

def test_simulate_reports_both_rules(capsys, tmp_path):
    rec = tmp_path / "trials.csv"
    code, out, _ = invoke(capsys, "simulate", "--trials", "50", "--records", rec)
    body = json.loads(out)
    assert code == EXIT_OK
    assert set(body["mechanisms"]) == {"target-revenue", "fixed-supply"}
    rows = list(csv.DictReader(rec.open()))
    assert len(rows) == 100


def test_verify_prop1_defaults(capsys):
    code, out, _ = invoke(capsys, "verify", "prop1", "--trials", "200")
    assert code == EXIT_OK
    assert json.loads(out)["violations"] == 0


def test_verify_prop2_reports_and_flags_violation(capsys):
    code, out, _ = invoke(capsys, "verify", "prop2", "--rival-profiles", "3")
    body = json.loads(out)
    assert code == (EXIT_VIOLATION if body["violations"] else EXIT_OK)


# -- data commands ---------------------------------------------------------------------------------

def test_benchmark_truthful_identity(capsys, truthful_dir, tmp_path):
    code, out, _ = invoke(capsys, "benchmark", truthful_dir, "--output-dir", tmp_path / "bench")
    body = json.loads(out)
    assert code == EXIT_OK
    assert body["mape"] == 0 and body["mpe"] == 0 and body["mfb"] == 0
    rows = list(csv.DictReader((tmp_path / "bench" / "auctions.csv").open()))
    assert len(rows) == 40 and all(float(r["gap_ratio"]) == 0 for r in rows)
    assert json.loads((tmp_path / "bench" / "performance.json").read_text()) == body


def test_benchmark_missing_dir(capsys, tmp_path):
    code, _, err = invoke(capsys, "benchmark", tmp_path / "nothing")
    assert code == EXIT_INPUT and "not found" in err


def test_regress_text_and_json(capsys, tmp_path):
    d = tmp_path / "d"
    assert run(["gen-data", "--n", "300", "--seed", "1", "--output-dir", str(d)]) == EXIT_OK
    capsys.readouterr()
    code, out, _ = invoke(capsys, "regress", d)
    assert code == EXIT_OK and "exceed_reserve" in out and "Adjusted R-squared" in out
    code, out, _ = invoke(capsys, "regress", d, "--model", "model0", "--format", "json", "--robust")
    body = json.loads(out)
    assert body["cov_type"] == "HC1" and body["n"] == 300


def test_regress_rank_deficient_names_columns(capsys, tmp_path):
    d = tmp_path / "d"
    assert run(["gen-data", "--n", "80", "--seed", "2", "--output-dir", str(d)]) == EXIT_OK
    capsys.readouterr()
    lines = (d / "seo.csv").read_text().splitlines()
    header = lines[1].split(",")
    ia, ii = header.index("analyst"), header.index("institution")
    for k in range(2, len(lines)):
        cells = lines[k].split(",")
        cells[ia] = repr(2.0 * float(cells[ii]))
        lines[k] = ",".join(cells)
    (d / "seo.csv").write_text("\n".join(lines) + "\n")
    code, out, err = invoke(capsys, "regress", d, "--regressors", "analyst,institution", "--winsorize", "")
    payload = json.loads(err)
    assert code == EXIT_INPUT and out == ""
    assert payload["error"] == "rank_deficient"
    assert set(payload["columns"]) >= {"analyst", "institution"}


def test_jobs_must_be_positive(capsys):
    code, _, err = invoke(capsys, "simulate", "--jobs", "0")
    assert code == EXIT_INPUT and "--jobs" in err


def test_gen_data_is_byte_identical_across_jobs(capsys, tmp_path):
    for name, jobs in (("a", 1), ("b", 1), ("c", 3)):
        assert run(["gen-data", "--n", "50", "--seed", "9", "--strategy", "mixed",
                    "--jobs", str(jobs), "--output-dir", str(tmp_path / name)]) == EXIT_OK
    for f in ("seo.csv", "bids.csv", "ledger.jsonl"):
        ref = (tmp_path / "a" / f).read_bytes()
        assert (tmp_path / "b" / f).read_bytes() == ref
        assert (tmp_path / "c" / f).read_bytes() == ref
