import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from fairdesc import cli, dataio, nnkernel as nn, passcore


def digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_cli(args):
    return cli.main([str(a) for a in args])


TINY_TRAIN = [
    "--set", "T_fc=20", "--set", "T_deb=4", "--set", "T_atrain=15",
    "--set", "T_plat=5", "--set", "N_ep=3", "--set", "T_ep=2",
    "--set", "batch_size=16", "--set", "out_dim=12", "--set", "check_every=2",
]


def gen_args(out, attrs=("gender:2:1.0",), seed=7, dim=24, identities=24, per_id=6):
    args = [
        "generate", "--identities", identities, "--per-id", per_id,
        "--dim", dim, "--spread", 0.12, "--seed", seed, "-o", out,
    ]
    for a in attrs:
        args += ["--attr", a]
    return args


def test_generate_round_trip_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert run_cli(gen_args(a)) == 0
    assert run_cli(gen_args(b)) == 0
    ds = dataio.read_descriptors(str(a))
    assert ds.n_rows == 144 and ds.dim == 24
    assert digest(a) == digest(b)
    assert (tmp_path / "manifest.json").exists()
    out = capsys.readouterr().out
    assert "144 x 24" in out


def test_generate_rejects_impossible_dim(tmp_path, capsys):
    rc = run_cli(
        ["generate", "--identities", 4, "--per-id", 2, "--dim", 2,
         "--attr", "a:2:1.0", "--attr", "b:2:1.0", "--attr", "c:2:1.0",
         "-o", tmp_path / "x.bin"]
    )
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error[spec]:")
    assert not (tmp_path / "x.bin").exists()


def test_generate_probe_check_prints_accuracy(tmp_path, capsys):
    out = tmp_path / "d.bin"
    rc = run_cli(gen_args(out) + ["--probe-check", "--probe-iterations", 120])
    assert rc == 0
    assert "probe accuracy on gender" in capsys.readouterr().out


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    path = root / "d.bin"
    run_cli(gen_args(path))
    return path


@pytest.fixture(scope="module")
def two_attr_data_file(tmp_path_factory):
    root = tmp_path_factory.mktemp("data2")
    path = root / "d2.bin"
    run_cli(gen_args(path, attrs=("gender:2:1.0", "skin:3:0.8"), dim=32))
    return path


def test_train_deterministic_checkpoints(tmp_path, data_file):
    r1, r2 = tmp_path / "r1", tmp_path / "r2"
    for out in (r1, r2):
        rc = run_cli(
            ["train", "--data", data_file, "--attribute", "gender",
             "--profile", "desk", *TINY_TRAIN, "--seed", 3, "--out", out]
        )
        assert rc == 0
    assert digest(r1 / "checkpoint.bin") == digest(r2 / "checkpoint.bin")
    assert digest(r1 / "trainlog.csv") == digest(r2 / "trainlog.csv")
    m1 = json.loads((r1 / "manifest.json").read_text())
    m2 = json.loads((r2 / "manifest.json").read_text())
    m1.pop("wall_time_s"), m2.pop("wall_time_s")
    assert m1 == m2


def test_train_multipass_needs_two_attributes(tmp_path, data_file, capsys):
    rc = run_cli(
        ["train", "--data", data_file, "--mode", "multipass",
         "--profile", "desk", *TINY_TRAIN, "--out", tmp_path / "r"]
    )
    assert rc == 1
    assert capsys.readouterr().err.startswith("error[config]:")


def test_train_multipass_two_attributes(tmp_path, two_attr_data_file):
    rc = run_cli(
        ["train", "--data", two_attr_data_file, "--mode", "multipass",
         "--attributes", "gender,skin", "--profile", "desk", *TINY_TRAIN,
         "--out", tmp_path / "r"]
    )
    assert rc == 0
    model = passcore.load_model(str(tmp_path / "r" / "checkpoint.bin"))
    assert len(model.ensembles) == 2


def test_train_config_file_and_unknown_field(tmp_path, data_file, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# tiny run\nlambda = 2.5\nK = 2\nT_fc = 10\nT_deb = 3\nT_atrain = 8\n"
        "T_plat = 4\nT_ep = 2\nN_ep = 2\nbatch_size = 16\nout_dim = 10\n"
        "alpha2 = 0.004\ncheck_every = 2\n"
    )
    out = tmp_path / "r"
    rc = run_cli(["train", "--data", data_file, "--attribute", "gender",
                  "--config", cfg, "--out", out])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["lambda"] == 2.5
    assert manifest["config"]["K"] == 2

    bad = tmp_path / "bad.cfg"
    bad.write_text("lambda = 1\nwut = 3\n")
    rc = run_cli(["train", "--data", data_file, "--attribute", "gender",
                  "--config", bad, "--out", tmp_path / "r2"])
    assert rc == 1
    assert "wut" in capsys.readouterr().err


def test_train_unknown_profile_fails(tmp_path, data_file, capsys):
    rc = run_cli(["train", "--data", data_file, "--profile", "galaxy",
                  "--out", tmp_path / "r"])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error[config]:")


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, data_file):
    out = tmp_path_factory.mktemp("trained") / "run"
    rc = run_cli(
        ["train", "--data", data_file, "--attribute", "gender",
         "--profile", "desk", *TINY_TRAIN, "--seed", 3, "--out", out]
    )
    assert rc == 0
    return out


def test_transform_output_shape_and_labels(tmp_path, data_file, trained_run):
    out = tmp_path / "t.bin"
    rc = run_cli(["transform", "--checkpoint", trained_run / "checkpoint.bin",
                  "--data", data_file, "-o", out])
    assert rc == 0
    original = dataio.read_descriptors(str(data_file))
    transformed = dataio.read_descriptors(str(out))
    assert transformed.n_rows == original.n_rows
    assert transformed.dim == 12  # the configured generator output width
    assert np.array_equal(transformed.identity_labels, original.identity_labels)
    assert np.array_equal(
        transformed.attribute("gender").labels, original.attribute("gender").labels
    )


def test_transform_dim_mismatch_rejected(tmp_path, trained_run, capsys):
    other = tmp_path / "other.bin"
    run_cli(gen_args(other, dim=10))
    rc = run_cli(["transform", "--checkpoint", trained_run / "checkpoint.bin",
                  "--data", other, "-o", tmp_path / "t.bin"])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error[shape]:")


def test_transform_identity_stub_idempotent(tmp_path, data_file):
    # An identity-initialized generator (square identity weights, unit prelu
    # slope, zero bias) maps descriptors to themselves, so transforming twice
    # equals transforming once byte for byte.
    original = dataio.read_descriptors(str(data_file))
    dim = original.dim
    stub = passcore.PassModel(
        passcore.Generator(
            nn.Mlp([nn.DenseLayer(np.eye(dim), np.zeros(dim), "prelu", np.ones(dim))])
        ),
        passcore.new_classifier(dim, original.n_identities, np.random.default_rng(0)),
        [],
        passcore.PassConfig(out_dim=dim),
        dim,
        original.n_identities,
    )
    ckpt = tmp_path / "stub.bin"
    passcore.save_model(stub, str(ckpt))
    once = tmp_path / "once.bin"
    twice = tmp_path / "twice.bin"
    assert run_cli(["transform", "--checkpoint", ckpt, "--data", data_file,
                    "-o", once]) == 0
    assert run_cli(["transform", "--checkpoint", ckpt, "--data", once,
                    "-o", twice]) == 0
    assert digest(once) == digest(twice)
    assert np.array_equal(
        dataio.read_descriptors(str(once)).features, original.features
    )


def test_probe_missing_attribute_lists_available(tmp_path, data_file, capsys):
    rc = run_cli(["probe", "--data", data_file, "--attr", "nope",
                  "--out", tmp_path / "p"])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error[config]:")
    assert "gender" in err


def test_probe_reproducible(tmp_path, data_file):
    p1, p2 = tmp_path / "p1", tmp_path / "p2"
    for out in (p1, p2):
        rc = run_cli(["probe", "--data", data_file, "--attr", "gender",
                      "--probe-iterations", 150, "--seed", 5, "--out", out])
        assert rc == 0
    assert digest(p1 / "probe_report.json") == digest(p2 / "probe_report.json")
    report = json.loads((p1 / "probe_report.json").read_text())
    assert 0.0 <= report["accuracy"] <= 1.0


def test_evaluate_baseline_self_zero_bpc(tmp_path, data_file):
    base_dir = tmp_path / "base"
    rc = run_cli(["evaluate", "--data", data_file, "--genuine", 300,
                  "--impostor", 300, "--group-attr", "gender",
                  "--fprs", "0.1,0.01", "--seed", 4, "--out", base_dir])
    assert rc == 0
    eval_dir = tmp_path / "self"
    rc = run_cli(["evaluate", "--data", data_file, "--pairs", base_dir / "pairs.csv",
                  "--fprs", "0.1,0.01", "--baseline", base_dir / "report.json",
                  "--out", eval_dir])
    assert rc == 0
    payload = json.loads((eval_dir / "report.json").read_text())
    for entry in payload["bpc_report"]["per_fpr"]:
        if entry["bias_base"] == 0.0:
            assert entry["bpc"] is None
        else:
            assert entry["bpc"] == 0.0


def test_evaluate_pairs_csv_round_trip(tmp_path, data_file):
    d1 = tmp_path / "e1"
    rc = run_cli(["evaluate", "--data", data_file, "--genuine", 200,
                  "--impostor", 200, "--group-attr", "gender", "--seed", 9,
                  "--fprs", "0.1", "--out", d1])
    assert rc == 0
    # feeding the emitted pairs back reproduces the report byte for byte
    d2 = tmp_path / "e2"
    rc = run_cli(["evaluate", "--data", data_file, "--pairs", d1 / "pairs.csv",
                  "--fprs", "0.1", "--out", d2])
    assert rc == 0
    assert digest(d1 / "report.json") == digest(d2 / "report.json")
    assert digest(d1 / "report.csv") == digest(d2 / "report.csv")


def test_report_flattens_json(tmp_path, data_file, capsys):
    eval_dir = tmp_path / "e"
    run_cli(["evaluate", "--data", data_file, "--genuine", 100, "--impostor", 100,
             "--group-attr", "gender", "--fprs", "0.1", "--out", eval_dir])
    capsys.readouterr()
    rc = run_cli(["report", "--in", eval_dir / "report.json"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "fpr,metric,group,value"
    assert "tpr_overall" in out


def test_sweep_schedule_values_and_aggregate(tmp_path, data_file):
    out = tmp_path / "sweep"
    rc = run_cli(
        ["sweep", "--param", "schedule", "--values", "oat,aet", "--seeds", "1",
         "--data", data_file, "--attribute", "gender", "--profile", "desk",
         *TINY_TRAIN, "--probe-iterations", 60, "--genuine", 60,
         "--impostor", 60, "--out", out]
    )
    assert rc == 0
    lines = (out / "aggregate.csv").read_text().splitlines()
    assert lines[0].startswith("param,value,seed,fpr,probe_accuracy,tpr,bias,bpc")
    assert len(lines) == 3
    assert (out / "run_schedule=oat_seed1" / "checkpoint.bin").exists()
    assert (out / "run_schedule=aet_seed1" / "report.json").exists()
    for sub in ("run_schedule=oat_seed1", "run_schedule=aet_seed1"):
        manifest = json.loads((out / sub / "manifest.json").read_text())
        assert manifest["command"] == "sweep-subrun"


def test_sweep_lambda_zero_matches_direct_control(tmp_path, data_file):
    out = tmp_path / "sweep"
    rc = run_cli(
        ["sweep", "--param", "lambda", "--values", "0", "--seeds", "2",
         "--data", data_file, "--attribute", "gender", "--profile", "desk",
         *TINY_TRAIN, "--probe-iterations", 60, "--genuine", 60,
         "--impostor", 60, "--out", out]
    )
    assert rc == 0
    # an identical no-adversary control run produces the same checkpoint
    control = tmp_path / "control"
    rc = run_cli(
        ["train", "--data", data_file, "--attribute", "gender",
         "--profile", "desk", *TINY_TRAIN, "--set", "lambda=0", "--seed", 2,
         "--out", control]
    )
    assert rc == 0
    # the sweep trains on its internal 70% identity split, so compare against
    # the same split trained directly
    data = dataio.read_descriptors(str(data_file))
    train, _, _ = dataio.split(
        data, dataio.SplitSpec((0.70, 0.05, 0.25), "identity", seed=2)
    )
    values = json.loads((control / "manifest.json").read_text())["config"]
    values.update({"lambda": 0.0, "seed": 2})
    cfg = passcore.PassConfig.from_dict(values)
    model, _ = passcore.train_pass(train, cfg, "gender")
    direct = tmp_path / "direct.bin"
    passcore.save_model(model, str(direct))
    assert digest(out / "run_lambda=0_seed2" / "checkpoint.bin") == digest(direct)


def test_sweep_empty_values_rejected(tmp_path, data_file, capsys):
    rc = run_cli(["sweep", "--param", "lambda", "--values", "", "--seeds", "1",
                  "--data", data_file, "--out", tmp_path / "s"])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error[config]:")


def test_sweep_leak_strength_generates_data(tmp_path):
    out = tmp_path / "sweep"
    rc = run_cli(
        ["sweep", "--param", "leak_strength", "--values", "0.0,1.0",
         "--seeds", "1", "--gen-attr", "attr:2", "--gen-identities", 36,
         "--gen-per-id", 6, "--gen-dim", 16, "--profile", "desk", *TINY_TRAIN,
         "--probe-iterations", 60, "--genuine", 80, "--impostor", 80,
         "--out", out]
    )
    assert rc == 0
    lines = (out / "aggregate.csv").read_text().splitlines()
    assert len(lines) == 3


def test_sweep_continues_after_subrun_failure(tmp_path, data_file, capsys):
    # K=0 is an invalid config: that sub-run fails, the others complete, and
    # the sweep exits nonzero
    out = tmp_path / "sweep"
    rc = run_cli(
        ["sweep", "--param", "K", "--values", "0,1", "--seeds", "1",
         "--data", data_file, "--attribute", "gender", "--profile", "desk",
         *TINY_TRAIN, "--probe-iterations", 60, "--genuine", 50,
         "--impostor", 50, "--out", out]
    )
    assert rc == 1
    lines = (out / "aggregate.csv").read_text().splitlines()
    assert any(",error," in line for line in lines)
    assert (out / "run_K=1_seed1" / "checkpoint.bin").exists()


def test_missing_data_file_is_clean_error(tmp_path, capsys):
    rc = run_cli(["train", "--data", tmp_path / "nope.bin",
                  "--out", tmp_path / "r"])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error[io]:")


def test_manifest_digests_verify_inputs(tmp_path, data_file, trained_run):
    manifest = json.loads((trained_run / "manifest.json").read_text())
    assert manifest["inputs"]["data"] == digest(Path(data_file))


def test_effective_jobs_respects_env_cap(monkeypatch):
    monkeypatch.delenv("PASS_THREADS", raising=False)
    assert cli._effective_jobs(4) == 4
    assert cli._effective_jobs(0) == 1
    monkeypatch.setenv("PASS_THREADS", "2")
    assert cli._effective_jobs(8) == 2
    assert cli._effective_jobs(1) == 1
    monkeypatch.setenv("PASS_THREADS", "zebra")
    with pytest.raises(Exception):
        cli._effective_jobs(2)


def test_sweep_parallel_jobs_match_sequential(tmp_path, data_file):
    seq, par = tmp_path / "seq", tmp_path / "par"
    base = ["sweep", "--param", "lambda", "--values", "0,5", "--seeds", "1",
            "--data", data_file, "--attribute", "gender", "--profile", "desk",
            *TINY_TRAIN, "--probe-iterations", 40, "--genuine", 50,
            "--impostor", 50]
    assert run_cli(base + ["--out", seq]) == 0
    assert run_cli(base + ["--jobs", 2, "--out", par]) == 0
    assert digest(seq / "aggregate.csv") == digest(par / "aggregate.csv")
    assert digest(seq / "run_lambda=5_seed1" / "checkpoint.bin") == digest(
        par / "run_lambda=5_seed1" / "checkpoint.bin"
    )


def test_shipped_config_files_match_profiles():
    root = Path(__file__).resolve().parent.parent / "configs"
    for name, values in cli.PROFILES.items():
        parsed = cli.parse_config_file(str(root / f"{name}.cfg"))
        assert parsed == values, name
