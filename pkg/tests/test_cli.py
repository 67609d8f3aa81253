import json
import subprocess
import sys

import numpy as np
import pytest

from latentrom import ModelParams, Series, linear_force, predict
from latentrom.cli import main
from latentrom.datagen import load_dataset, save_dataset
from latentrom.dataset import Dataset
from latentrom.modelfile import load_model, save_model


def write(path, text):
    path.write_text(text)
    return str(path)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


JEFFERY = """\
[generate]
generator = jeffery
out = {out}
seed = 3

[jeffery]
a = 2
b = 1
r = 1
u0 = 0
n_points = 32
dt = 1e-2
n_steps = {n_steps}
"""

FOM = """\
[generate]
generator = stable-fom
out = {out}
seed = 0

[stable-fom]
p_f = 8
l = 1
n_series = 80
n_steps = 150
dt = 1e-3
method = exact-linear
"""

TRAIN = """\
[train]
dataset = {data}
model_out = {model}
latent_dim = 3
max_iterations = 15
seed = 2
split = 0.7 0.2 0.1
"""


@pytest.fixture
def fom_data(tmp_path, capsys):
    out = tmp_path / "fom.txt"
    assert run(capsys, "generate", write(tmp_path / "g.ini", FOM.format(out=out)))[0] == 0
    return out


class TestGenerate:
    def test_jeffery(self, tmp_path, capsys):
        out = tmp_path / "j.txt"
        code, stdout, _ = run(capsys, "generate", write(tmp_path / "g.ini", JEFFERY.format(out=out, n_steps=20)))
        assert code == 0 and "l=64" in stdout
        ds = load_dataset(out)
        assert ds.l == 64 and len(ds.series[0]) == 21 and ds.dt == 1e-2
        assert ds.metadata["seed"] == 3 and ds.metadata["tool_version"] and ds.metadata["config_hash"]

    def test_stable_fom_corpus(self, fom_data):
        ds = load_dataset(fom_data)
        assert len(ds) == 80 and len(ds.series[0]) == 151 and ds.dt == 1e-3

    def test_missing_field(self, tmp_path, capsys):
        cfg = write(tmp_path / "g.ini", JEFFERY.format(out=tmp_path / "j.txt", n_steps=5).replace("n_points = 32\n", ""))
        code, _, err = run(capsys, "generate", cfg)
        assert code == 1 and "n_points" in err

    def test_set_override(self, tmp_path, capsys):
        out = tmp_path / "j.txt"
        cfg = write(tmp_path / "g.ini", JEFFERY.format(out=out, n_steps=5))
        assert run(capsys, "generate", cfg, "--set", "jeffery.n_points=16")[0] == 0
        assert load_dataset(out).l == 32

    def test_bad_override_syntax(self, tmp_path, capsys):
        cfg = write(tmp_path / "g.ini", JEFFERY.format(out=tmp_path / "j.txt", n_steps=5))
        assert run(capsys, "generate", cfg, "--set", "n_points")[0] == 1

    def test_invalid_choice(self, tmp_path, capsys):
        cfg = write(tmp_path / "g.ini", "[generate]\ngenerator = magic\nout = x\n")
        code, _, err = run(capsys, "generate", cfg)
        assert code == 1 and "generator" in err

    def test_missing_config_file(self, tmp_path, capsys):
        assert run(capsys, "generate", tmp_path / "nope.ini")[0] == 3

    def test_deterministic(self, tmp_path, capsys):
        cfg = write(tmp_path / "g.ini", FOM.format(out=tmp_path / "a.txt"))
        run(capsys, "generate", cfg)
        first = (tmp_path / "a.txt").read_bytes()
        run(capsys, "generate", cfg)
        assert (tmp_path / "a.txt").read_bytes() == first


class TestTrain:
    def test_bitwise_rerun(self, tmp_path, capsys, fom_data):
        model = tmp_path / "m.txt"
        cfg = write(tmp_path / "t.ini", TRAIN.format(data=fom_data, model=model))
        assert run(capsys, "train", cfg)[0] == 0
        first = model.read_bytes()
        assert run(capsys, "train", cfg)[0] == 0
        assert model.read_bytes() == first
        _, _, header = load_model(model)
        assert header["seed"] == "2" and header["config_hash"] != "none"
        history = (tmp_path / "m.txt.history").read_text().splitlines()
        assert history[0].startswith("# latentrom") and len(history) == 3 + 1 + 16

    def test_diverged_exit_code(self, tmp_path, capsys, fom_data):
        T = tmp_path / "T.txt"
        T.write_text("1 1\n-1e4\n")
        cfg = TRAIN.format(data=fom_data, model=tmp_path / "m.txt") + "cell = euler\n\n[force]\nkind = linear\n"
        cfg += f"T_path = {T}\n"
        code, _, err = run(capsys, "train", write(tmp_path / "t.ini", cfg))
        assert code == 2 and "numeric failure" in err

    def test_missing_dataset(self, tmp_path, capsys):
        cfg = write(tmp_path / "t.ini", TRAIN.format(data=tmp_path / "none.txt", model=tmp_path / "m.txt"))
        assert run(capsys, "train", cfg)[0] == 3

    @pytest.mark.parametrize("force", [
        "kind = spring-ring\nk_s = 2.5e4\nrest_length = min-edge\n",
        "kind = bending-ring\nsigma_b = 1e-4\nomega0 = initial\n",
    ])
    def test_full_size_configs_run(self, tmp_path, capsys, force):
        # the rubber-band and ellipsoid shapes: p=64 or 20, l=64, 150 steps
        data = tmp_path / "j.txt"
        run(capsys, "generate", write(tmp_path / "g.ini", JEFFERY.format(out=data, n_steps=150)))
        p = 64 if "spring" in force else 20
        cfg = (TRAIN.format(data=data, model=tmp_path / "m.txt")
               .replace("latent_dim = 3", f"latent_dim = {p}").replace("max_iterations = 15", "max_iterations = 2")
               .replace("split = 0.7 0.2 0.1", "split = 1 0 0\ntrain_steps = 150\nlearning_rate = 1e-3"))
        cfg += "\n[force]\n" + force
        assert run(capsys, "train", write(tmp_path / "t.ini", cfg))[0] == 0
        par, spec, _ = load_model(tmp_path / "m.txt")
        assert par.p == p and par.l == 64 and spec["kind"] == force.split()[2]


class TestPredict:
    @pytest.fixture
    def perfect(self, tmp_path):
        par = ModelParams(theta_d=[0.2, 0.1], C=[[0.0, 0.3], [0.0, 0.0]], R=[[0.3], [0.2]], dt=0.1)
        force = linear_force(np.eye(1))
        series = [Series(0.1 * np.arange(11), predict(par, force, [x0], 10)) for x0 in (0.5, -0.7)]
        save_dataset(Dataset(series, 0.1), tmp_path / "d.txt")
        save_model(tmp_path / "m.txt", par, force.spec)
        return tmp_path / "m.txt", tmp_path / "d.txt"

    def test_perfect_model(self, tmp_path, capsys, perfect):
        out = tmp_path / "p.txt"
        assert run(capsys, "predict", *perfect, "--horizon", 10, "--out", out)[0] == 0
        metrics = json.loads((tmp_path / "p.txt.metrics.json").read_text())
        assert metrics["rel_l2_error"] == 0 and metrics["rmse"] == 0 and metrics["final_state_error"] == 0
        rows = [ln.split() for ln in out.read_text().splitlines() if not ln.startswith("#")]
        assert rows[0] == ["series", "step", "t", "pred_0", "true_0"]
        assert len(rows) == 1 + 2 * 11
        assert all(float(r[3]) == float(r[4]) for r in rows[1:])

    def test_horizon_beyond_data(self, tmp_path, capsys, perfect):
        out = tmp_path / "p.txt"
        assert run(capsys, "predict", *perfect, "--horizon", 15, "--out", out)[0] == 0
        rows = [ln.split() for ln in out.read_text().splitlines() if not ln.startswith("#")][1:]
        assert len(rows) == 2 * 16
        assert rows[12][4] == "nan" and rows[10][4] != "nan"
        assert np.isfinite(float(rows[12][3]))
        assert json.loads((tmp_path / "p.txt.metrics.json").read_text())["compared_steps"] == 10

    def test_dimension_mismatch(self, tmp_path, capsys, perfect):
        save_dataset(Dataset([Series([0.0, 0.1], np.zeros((2, 2)))], 0.1), tmp_path / "wide.txt")
        code, _, err = run(capsys, "predict", perfect[0], tmp_path / "wide.txt", "--horizon", 1, "--out",
                           tmp_path / "p.txt")
        assert code == 1 and "l=1" in err


class TestDiagnose:
    def report(self, tmp_path, capsys, par, force=None):
        save_model(tmp_path / "m.txt", par, (force or linear_force(np.eye(par.l))).spec)
        code, out, _ = run(capsys, "diagnose", tmp_path / "m.txt", "--probe-steps", 50)
        assert code == 0
        return out

    def test_constrained(self, tmp_path, capsys):
        par = ModelParams(theta_d=[0.3, 0.5], C=[[0.0, 1.0], [0.0, 0.0]], R=[[0.4], [0.1]], dt=0.1)
        out = self.report(tmp_path, capsys, par)
        assert "stable (rho <= 1)" in out and "non-increasing" in out
        line = next(ln for ln in out.splitlines() if ln.startswith("continuous eigenvalues"))
        assert float(line.split("max Re ")[1].split(",")[0]) <= 0

    def test_unconstrained_flagged(self, tmp_path, capsys):
        par = ModelParams(theta_d=[0.3, 0.2], C=np.zeros((2, 2)), R=[[0.1], [0.1]], dt=0.1,
                          cell="midpoint-unconstrained")
        out = self.report(tmp_path, capsys, par)
        assert "UNSTABLE: rho > 1" in out and "WARNING" in out

    def test_zero_model(self, tmp_path, capsys):
        out = self.report(tmp_path, capsys, ModelParams.zeros(3, 2, 0.1))
        assert "spectral radius 1.000000000000" in out

    def test_nonlinear_with_reference(self, tmp_path, capsys):
        from latentrom import RingTopology, spring_ring
        from latentrom.datagen import ellipse_points
        force = spring_ring(RingTopology(4), 1.0, 0.5)
        x = ellipse_points(1.2, 1.0, 4).reshape(-1)
        save_dataset(Dataset([Series([0.0], x[None])], 0.1), tmp_path / "d.txt")
        par = ModelParams(theta_d=np.full(3, 0.2), C=np.zeros((3, 3)), R=0.1 * np.ones((3, 8)), dt=0.1)
        save_model(tmp_path / "m.txt", par, force.spec)
        code, out, _ = run(capsys, "diagnose", tmp_path / "m.txt", tmp_path / "d.txt", "--probe-steps", 20)
        assert code == 0 and "n/a (non-linear force)" in out and "linearized at the reference" in out


GRADCHECK = """\
[gradcheck]
p = 4
l = {l}
n_steps = {n}
seed = 1
mode = {mode}
use_z0 = true
learn_z_init = true

[force]
{force}
"""


class TestGradcheck:
    def test_linear(self, tmp_path, capsys):
        cfg = write(tmp_path / "g.ini", GRADCHECK.format(l=4, n=10, mode="exact", force="kind = identity"))
        code, out, _ = run(capsys, "gradcheck", cfg)
        assert code == 0 and "PASS" in out and "tolerance 1.0e-06" in out

    def test_spring(self, tmp_path, capsys):
        force = "kind = spring-ring\nk_s = 1.0\nrest_length = 0.5"
        cfg = write(tmp_path / "g.ini", GRADCHECK.format(l=8, n=5, mode="exact", force=force))
        code, out, _ = run(capsys, "gradcheck", cfg)
        assert code == 0 and "PASS" in out and "tolerance 1.0e-04" in out

    def test_approximate_not_failed(self, tmp_path, capsys):
        force = "kind = spring-ring\nk_s = 1.0\nrest_length = 0.5"
        cfg = write(tmp_path / "g.ini", GRADCHECK.format(l=8, n=5, mode="approximate", force=force))
        code, out, _ = run(capsys, "gradcheck", cfg)
        assert code == 0 and "expected" in out and "FAIL" not in out

    def test_failure_exit_code(self, tmp_path, capsys):
        cfg = GRADCHECK.format(l=4, n=10, mode="exact\ntolerance = 1e-300", force="kind = identity")
        code, out, _ = run(capsys, "gradcheck", write(tmp_path / "g.ini", cfg))
        assert code == 2 and "FAIL" in out


class TestMisc:
    def test_usage_error(self, capsys):
        assert run(capsys, "frobnicate")[0] == 1

    def test_bad_thread_env(self, tmp_path, capsys, monkeypatch, fom_data):
        monkeypatch.setenv("LATENTROM_NUM_THREADS", "many")
        cfg = write(tmp_path / "t.ini", TRAIN.format(data=fom_data, model=tmp_path / "m.txt"))
        code, _, err = run(capsys, "train", cfg)
        assert code == 1 and "LATENTROM_NUM_THREADS" in err

    def test_console_script(self):
        res = subprocess.run([sys.executable, "-m", "latentrom.cli", "--version"], capture_output=True, text=True)
        assert res.returncode == 0 and res.stdout.startswith("latentrom ")

    def test_inline_comments(self, tmp_path, capsys):
        out = tmp_path / "j.txt"
        cfg = JEFFERY.format(out=out, n_steps=5).replace("generator = jeffery", "generator = jeffery  ; analytic")
        assert run(capsys, "generate", write(tmp_path / "g.ini", cfg))[0] == 0
        assert load_dataset(out).l == 64
