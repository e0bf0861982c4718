import csv
import io
import math
import subprocess
import sys

import pytest
from hypothesis import given, settings, strategies as st

from qcd.cli import main
from qcd.config import ExperimentConfig, dump_config, load_config, parse_config
from qcd.errors import ConfigError

BASE = """\
# experiment
[model]
variant = iid-gaussian-mean
theta = 1.0

[prior]
kind = geometric
rho = 0.1
"""


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


class TestParse:
    def test_defaults(self):
        cfg = parse_config(BASE)
        assert cfg.model.build().information_rate() == 0.5
        assert cfg.detect.procedures == ("shiryaev",)
        assert cfg.mc.seed == 0 and cfg.mc.horizon is None
        assert cfg.output.formats == ("csv", "dat")

    def test_full(self, tmp_path):
        (tmp_path / "sig.csv").write_text("1.0\n0.5\n0.25\n")
        cfg = load_config(write(tmp_path, """
[model]
variant = ar-signal
beta = 0.3, 0.2
signal_csv = sig.csv
[prior]
kind = polynomial
s = 1.5
K = 200
q = 0.05
[detect]
procedures = shiryaev, sr
m = 1, 2, 1.5
[budget]
alphas = 0.1, 1e-2
[mc]
trials = 1e4
seed = 0xFFFFFFFFFFFFFFFF
horizon = 500
[verify]
k_grid = 0, 5
[output]
dir = results
formats = csv
"""))
        model = cfg.model.build()
        assert model.signal == (1.0, 0.5, 0.25)
        assert cfg.detect.procedures == ("shiryaev", "shiryaev-roberts")
        assert cfg.detect.m == (1, 2, 1.5)
        assert cfg.mc.trials == 10_000 and cfg.mc.seed == 2**64 - 1
        assert cfg.prior.build().K == 200

    @pytest.mark.parametrize(
        "text, fragment",
        [
            ("[model]\nvariant = iid-gaussian-mean\n", "[prior]"),
            ("theta = 1\n" + BASE, "line 1"),
            (BASE + "[mc]\ntrials = 10\ntrials = 20\n", "line 11"),
            (BASE + "[mc]\ntrials\n", "line 10"),
            (BASE + "[mc]\ntrials = ten\n", "[mc] trials"),
            (BASE + "[mc]\ntrials = 2.5\n", "[mc] trials"),
            (BASE + "[mc]\nseed = -1\n", "[mc] seed"),
            (BASE + "[mc]\nsed = 1\n", "unknown key"),
            (BASE + "[budget]\nalphas = 0.1, 0\n", "[budget] alphas"),
            (BASE + "[budget]\nalphas = 0.1, nan\n", "[budget] alphas"),
            (BASE + "[detect]\nprocedures = cusum\n", "[detect] procedures"),
            (BASE + "[detect]\nm = 0.5\n", "[detect] m"),
            (BASE + "[plots]\n", "unknown section"),
            (BASE.replace("iid-gaussian-mean", "hmm"), "[model] variant"),
            (BASE.replace("theta = 1.0", "theta = 0"), "[model]"),
            (BASE.replace("rho = 0.1", "rho = 1.5"), "[prior]"),
            (BASE.replace("geometric", "weibull"), "[prior] kind"),
        ],
    )
    def test_diagnostics(self, text, fragment):
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert fragment in str(err.value)

    def test_key_case_is_kept(self):
        cfg = parse_config(BASE.replace("kind = geometric\nrho = 0.1", "kind = polynomial\nK = 20"))
        assert cfg.prior.K == 20

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")


config_text = st.builds(
    lambda theta, rho, q, alphas, procs, m, trials, seed: BASE.replace("theta = 1.0", f"theta = {theta!r}")
    .replace("rho = 0.1", f"rho = {rho!r}\nq = {q!r}")
    + f"[budget]\nalphas = {', '.join(map(repr, alphas))}\n"
    + f"[detect]\nprocedures = {', '.join(procs)}\nm = {', '.join(map(repr, m))}\n"
    + f"[mc]\ntrials = {trials}\nseed = {seed}\n",
    st.floats(0.01, 10), st.floats(0.001, 0.999), st.floats(0, 0.9),
    st.lists(st.floats(1e-9, 0.999), min_size=1, max_size=4),
    st.lists(st.sampled_from(["shiryaev", "shiryaev-roberts", "sr"]), min_size=1, max_size=2),
    st.lists(st.one_of(st.integers(1, 4), st.floats(1, 4)), min_size=1, max_size=3),
    st.integers(1, 10**6), st.integers(0, 2**64 - 1),
)


@settings(max_examples=60, deadline=None)
@given(config_text)
def test_round_trip(text):
    cfg = parse_config(text)
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


def test_round_trip_every_variant():
    for model in ("variance-invariant\nsigma_0 = 3.0\ntheta = 2.5", "ar1-correlation\nbeta_0 = -0.2",
                  "constant\nvalue = 0.0", "ar-signal\nsignal = 1, 2, 3"):
        cfg = parse_config(BASE.replace("iid-gaussian-mean\ntheta = 1.0", model))
        assert parse_config(dump_config(cfg)) == cfg
        assert isinstance(cfg, ExperimentConfig)


class TestCalibrate:
    def test_thresholds(self, tmp_path, capsys):
        cfg = write(tmp_path, BASE.replace("rho = 0.1", "rho = 0.2")
                    + "[detect]\nprocedures = shiryaev, sr\n[budget]\nalphas = 0.01\n")
        assert main(["calibrate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        rows = read_csv(capsys.readouterr().out)
        got = {r["procedure"]: float(r["threshold"]) for r in rows}
        assert got["shiryaev"] == pytest.approx(99.0)
        assert got["shiryaev-roberts"] == pytest.approx(400.0)
        assert (tmp_path / "o" / "calibrate.csv").read_text().startswith("# qcd-calibrate v1")

    def test_alpha_zero(self, tmp_path, capsys):
        cfg = write(tmp_path, BASE + "[budget]\nalphas = 0.01, 0\n")
        assert main(["calibrate", "--config", str(cfg)]) == 2
        assert "alphas" in capsys.readouterr().err

    def test_budget_violation(self, tmp_path, capsys):
        cfg = write(tmp_path, BASE.replace("rho = 0.1", "rho = 0.1\nq = 0.2") + "[budget]\nalphas = 0.9\n")
        assert main(["calibrate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert "alpha=0.9" in capsys.readouterr().err


STUB = """\
[model]
variant = constant
value = 0
[prior]
kind = geometric
rho = 0.1
[detect]
procedures = sr
m = 1, 2
[budget]
thresholds = 10
[mc]
trials = 500
horizon = 100
changepoint = 0
"""


class TestSimulate:
    def test_stub_delay(self, tmp_path, capsys):
        assert main(["simulate", "--config", str(write(tmp_path, STUB)), "--out", str(tmp_path / "o")]) == 0
        rows = read_csv(capsys.readouterr().out)
        assert [float(r["delay_hat"]) for r in rows] == [10.0, 100.0]
        assert [float(r["delay_se"]) for r in rows] == [0.0, 0.0]
        assert rows[0]["alpha"] == ""

    def test_censoring_exit(self, tmp_path):
        cfg = write(tmp_path, STUB.replace("thresholds = 10", "thresholds = 1e6"))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3

    def test_no_survivors_exit(self, tmp_path):
        cfg = write(tmp_path, STUB.replace("changepoint = 0", "changepoint = 40"))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4

    def test_byte_identical_and_seed_band(self, tmp_path):
        text = BASE + "[detect]\nprocedures = shiryaev, sr\n[budget]\nalphas = 0.1, 0.01\n[mc]\ntrials = 20000\n"
        cfg = write(tmp_path, text)
        outs = []
        for seed, workers, sub in ((7, 1, "a"), (7, 4, "b"), (8, 1, "c")):
            assert main(["simulate", "--config", str(cfg), "--seed", str(seed), "--workers", str(workers),
                         "--out", str(tmp_path / sub)]) == 0
            outs.append((tmp_path / sub / "simulate.csv").read_text())
        assert outs[0] == outs[1]
        assert outs[0] != outs[2]
        for r1, r2 in zip(read_csv(outs[0]), read_csv(outs[2])):
            band = 6 * math.hypot(float(r1["delay_se"]), float(r2["delay_se"]))
            assert abs(float(r1["delay_hat"]) - float(r2["delay_hat"])) <= band
            band = 6 * math.hypot(float(r1["pfa_se"]), float(r2["pfa_se"]))
            assert abs(float(r1["pfa_hat"]) - float(r2["pfa_hat"])) <= band

    def test_naive_mode_route(self, tmp_path, capsys):
        cfg = write(tmp_path, BASE + "[budget]\nalphas = 0.1\n[mc]\ntrials = 5000\npfa_mode = naive\n")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        row = read_csv(capsys.readouterr().out)[0]
        assert float(row["pfa_hat"]) <= 0.1 + 3 * float(row["pfa_se"])

    def test_bad_flags(self, tmp_path):
        cfg = str(write(tmp_path, STUB))
        assert main(["simulate", "--config", cfg, "--seed", "-1"]) == 2
        assert main(["simulate", "--config", cfg, "--workers", "0"]) == 2
        assert main(["simulate"]) == 2
        assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2


class TestStudy:
    def test_outputs(self, tmp_path):
        cfg = write(tmp_path, BASE + "[detect]\nprocedures = shiryaev, sr\n"
                    "[budget]\nalphas = 0.1, 0.01\n[mc]\ntrials = 5000\n")
        out = tmp_path / "o"
        assert main(["study", "--config", str(cfg), "--out", str(out)]) == 0
        rows = read_csv((out / "study.csv").read_text())
        assert "sr_over_shiryaev" in rows[0]
        series = (out / "series_shiryaev_m1.dat").read_text().splitlines()
        assert series[0].startswith("# qcd-study v1")
        assert len([s for s in series if not s.startswith("#")]) == 2
        assert (out / "series_shiryaev-roberts_m1.dat").exists()

    def test_single_procedure_and_schedule(self, tmp_path):
        cfg = write(tmp_path, BASE.replace("rho = 0.1", "schedule_c = 1\nschedule_p = 1")
                    + "[budget]\nalphas = 0.01, 0.001\n[mc]\ntrials = 3000\n[output]\nformats = csv\n")
        out = tmp_path / "o"
        assert main(["study", "--config", str(cfg), "--out", str(out)]) == 0
        rows = read_csv((out / "study.csv").read_text())
        assert "sr_over_shiryaev" not in rows[0]
        assert float(rows[0]["mu_alpha"]) == pytest.approx(-math.log1p(-1 / math.log(100)))
        assert not list(out.glob("*.dat"))

    def test_needs_two_points(self, tmp_path):
        cfg = write(tmp_path, BASE + "[budget]\nalphas = 0.01\n")
        assert main(["study", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_budget_abort(self, tmp_path):
        cfg = write(tmp_path, BASE.replace("rho = 0.1", "rho = 0.1\nq = 0.2") + "[budget]\nalphas = 0.9, 0.1\n")
        assert main(["study", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


class TestVerify:
    def test_report(self, tmp_path):
        cfg = write(tmp_path, BASE + "[verify]\nr = 2\n")
        out = tmp_path / "o"
        assert main(["verify", "--config", str(cfg), "--out", str(out)]) == 0
        text = (out / "verify.txt").read_text()
        assert "condition-C satisfied" in text
        assert "llr-deviation decreasing over n grid" in text
        assert text.count("summable-looking") == 2
        assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 0
        assert (tmp_path / "p" / "verify.txt").read_text() == text

    def test_ar1(self, tmp_path):
        cfg = write(tmp_path, BASE.replace("iid-gaussian-mean\ntheta = 1.0",
                                           "ar1-correlation\nbeta_0 = 0.5\nbeta_1 = 0"))
        assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        text = (tmp_path / "o" / "verify.txt").read_text()
        assert "information-rate I=0.125" in text
        assert text.count("summable-looking") == 2

    def test_never_fails(self, tmp_path):
        cfg = write(tmp_path, STUB)
        assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        assert "skipped" in (tmp_path / "o" / "verify.txt").read_text()


def test_list_models(capsys):
    assert main(["list-models"]) == 0
    out = capsys.readouterr().out
    for name in ("iid-gaussian-mean", "ar-signal", "variance-invariant", "ar1-correlation"):
        assert name in out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "qcd", "list-models"], capture_output=True, text=True)
    assert res.returncode == 0 and "ar-signal" in res.stdout
