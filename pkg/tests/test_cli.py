import numpy as np
import pytest

from conftest import SOLID_COLORS, _configs_dir
from vehicle_color import model
from vehicle_color.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from vehicle_color.cli import main
from vehicle_color.data import CLASS_NAMES, DatasetDescriptor
from vehicle_color.optim import TrainConfig
from vehicle_color.ppm import read_image, write_ppm
from vehicle_color.viz import kernel_figure, tile_positions

SIZE = 40


def solid(rgb, size=SIZE):
    return np.broadcast_to(np.array(rgb, np.uint8)[:, None, None], (3, size, size))


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Two solid images per class, so the split is one train and one test each."""
    root = tmp_path_factory.mktemp("images")
    for name in CLASS_NAMES:
        (root / name).mkdir()
        for k in range(2):
            write_ppm(root / name / f"{k}.ppm", solid(SOLID_COLORS[name]))
    out = tmp_path_factory.mktemp("prepared")
    assert main(["make-manifest", str(root), "--out", str(out), "--resize", str(SIZE)]) == 0
    return root, out / "dataset.txt"


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--config", str(_configs_dir() / "smoke.cfg"), "--data", str(dataset[1]),
                 "--out", str(out), "--log", str(out / "log.csv")])
    assert code == 0
    return out


def short_config(tmp_path, **changes):
    cfg = TrainConfig.load(_configs_dir() / "smoke.cfg").replace(**changes)
    path = tmp_path / "short.cfg"
    cfg.save(path)
    return path


def test_make_manifest_outputs(dataset, capsys, tmp_path):
    root, desc_path = dataset
    desc = DatasetDescriptor.load(desc_path)
    assert desc.resize_size == SIZE and desc.color_space == "rgb"
    manifest = desc.open()
    assert len(manifest) == 16 and len(manifest.subset("train")) == 8
    assert manifest.mean_image.shape == (3, SIZE, SIZE)
    code, out, _ = run(capsys, "make-manifest", root, "--out", tmp_path, "--resize", SIZE,
                       "--color-space", "hsv")
    assert code == 0
    assert out.splitlines()[:3] == ["records,16", "train,8", "test,8"]
    assert (tmp_path / f"mean_hsv_{SIZE}.cnt").exists()


def test_train_zero_iterations_writes_initial_checkpoint(dataset, tmp_path, capsys):
    code, out, err = run(capsys, "train", "--config", _configs_dir() / "smoke.cfg",
                         "--data", dataset[1], "--out", tmp_path, "--iters", 0)
    assert code == 0
    assert out == "iter,lr,train_loss\n"
    init = load_checkpoint(tmp_path / "ckpt_00000000.cvc")
    built = model.build(init.state.spec, seed=0)
    assert all(init.state.params[k].tobytes() == built.params[k].tobytes() for k in built.params)
    assert "final.cvc" in err


def test_resume_matches_uninterrupted_run(dataset, tmp_path, capsys):
    cfg = short_config(tmp_path, checkpoint_every=10, log_every=5, dropout_rate=0.5)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "train", "--config", cfg, "--data", dataset[1], "--out", a, "--iters", 20)[0] == 0
    assert run(capsys, "train", "--config", cfg, "--data", dataset[1], "--out", b, "--iters", 10)[0] == 0
    code, out, _ = run(capsys, "train", "--config", cfg, "--data", dataset[1], "--out", b,
                       "--resume", b / "ckpt_00000010.cvc", "--iters", 20)
    assert code == 0 and out.splitlines()[1].startswith("15,")
    assert (a / "final.cvc").read_bytes() == (b / "final.cvc").read_bytes()
    ckpt = load_checkpoint(b / "final.cvc")
    assert ckpt.optimizer.iteration == 20


def test_resume_rejects_other_network(dataset, tmp_path, capsys):
    other = model.build(model.NetworkSpec.tiny(fc_sizes=(32, 32)))
    save_checkpoint(tmp_path / "o.cvc", Checkpoint(other))
    code, _, err = run(capsys, "train", "--config", _configs_dir() / "smoke.cfg", "--data", dataset[1],
                       "--out", tmp_path, "--resume", tmp_path / "o.cvc")
    assert code == 2 and err.startswith("error[checkpoint]:")


def test_train_log_and_checkpoints(trained):
    lines = (trained / "log.csv").read_text().splitlines()
    assert lines[0] == "iter,lr,train_loss" and len(lines) == 11
    assert lines[-1].startswith("500,0.01,")
    assert float(lines[-1].split(",")[2]) < 0.05
    names = sorted(p.name for p in trained.glob("*.cvc"))
    assert names == ["ckpt_00000000.cvc", "ckpt_00000250.cvc", "ckpt_00000500.cvc", "final.cvc"]
    assert TrainConfig.load(trained / "config.txt") == TrainConfig.load(_configs_dir() / "smoke.cfg")


def test_eval(trained, dataset, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--checkpoint", trained / "final.cvc", "--data", dataset[1],
                       "--out", tmp_path / "report")
    assert code == 0
    assert "average" in out and f"report,{tmp_path / 'report'}" in out
    rows = (tmp_path / "report" / "per_class_accuracy.csv").read_text().splitlines()
    assert rows[-1] == "average_per_class,8,1.000000"
    assert read_image(tmp_path / "report" / "confusion.ppm").shape == (3, 192, 192)


def test_predict(trained, dataset, capsys):
    image = dataset[0] / "red" / "1.ppm"
    args = ("predict", "--checkpoint", trained / "final.cvc", "--image", image)
    code, first, _ = run(capsys, *args)
    assert code == 0
    _, second, _ = run(capsys, *args)
    assert first == second
    lines = first.splitlines()
    assert lines[0] == "prediction,red"
    probs = {name: float(p) for name, p in (line.split(",") for line in lines[1:])}
    assert list(probs) == list(CLASS_NAMES)
    assert sum(probs.values()) == pytest.approx(1.0, abs=1e-3)
    assert max(probs, key=probs.get) == "red"


def test_predict_color_space_mismatch(trained, dataset, capsys):
    code, _, err = run(capsys, "predict", "--checkpoint", trained / "final.cvc",
                       "--image", dataset[0] / "red" / "0.ppm", "--color-space", "lab")
    assert code == 2 and err.startswith("error[checkpoint]:")


def test_bench(trained, capsys):
    code, out, _ = run(capsys, "bench", "--checkpoint", trained / "final.cvc", "--repetitions", 5)
    assert code == 0
    lines = out.splitlines()
    assert lines[1].lstrip().startswith("Initialization time") and "3.248" in lines[2]
    assert "4 timed runs" in lines[3]


def test_viz_kernels_full_network(tmp_path, capsys):
    state = model.build(model.NetworkSpec(), seed=0)
    state.params["net1.conv1.weights"][0] = 0.25
    save_checkpoint(tmp_path / "full.cvc", Checkpoint(state))
    code, out, _ = run(capsys, "viz-kernels", "--checkpoint", tmp_path / "full.cvc",
                       "--out", tmp_path / "k.ppm")
    assert code == 0
    assert out.splitlines() == ["kernels,96", f"image,{tmp_path / 'k.ppm'}"]
    img = read_image(tmp_path / "k.ppm")
    canvas, origins = kernel_figure(state)
    np.testing.assert_array_equal(img, canvas)
    positions = tile_positions(48, 11)
    assert len(origins) * len(positions) == 96
    y, x = origins[0]
    assert (img[:, y : y + 11, x : x + 11] == 128).all()
    # The tile right of the constant one is a genuine min-max stretch.
    dy, dx = positions[1]
    tile = img[:, y + dy : y + dy + 11, x + dx : x + dx + 11]
    assert tile.min() == 0 and tile.max() == 255


@pytest.mark.parametrize(
    "argv,code_prefix",
    [
        (["train", "--config", "missing.cfg", "--data", "x", "--out", "y"], "error[io]:"),
        (["predict", "--checkpoint", "nope.cvc", "--image", "x.ppm"], "error[checkpoint]:"),
        (["make-manifest", "no/such/dir", "--out", "o"], "error[dataset]:"),
        (["eval", "--bogus"], "error[usage]:"),
        (["frobnicate"], "error[usage]:"),
        ([], "error[usage]:"),
    ],
)
def test_errors_exit_2(argv, code_prefix, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert err.startswith(code_prefix), err


def test_help(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for command in ("make-manifest", "train", "eval", "predict", "bench", "viz-kernels"):
        assert command in out
