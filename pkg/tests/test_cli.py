import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from abyss import checkpoint as ck
from abyss import dataset as ds
from abyss import training as tr
from abyss.cli import main
from abyss.model import GeneratorConfig

MINI_G = GeneratorConfig(n_rrdb=1, base_channels=4, growth_channels=2, scale=8)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    rng = np.random.default_rng(0)
    records = []
    for session in ("sessA", "sessB"):
        d = corpus / session
        d.mkdir(parents=True)
        for i in range(3):
            img = rng.integers(0, 256, (256, 256, 3), dtype=np.uint8)
            p = d / f"f{i}.png"
            Image.fromarray(img).save(p)
            records.append(ds.FrameRecord(session, str(p), 0))

    import skimage.data

    photo = root / "photo.png"
    Image.fromarray(skimage.data.astronaut()[:256, :256]).save(photo)

    manifest = ds.SplitManifest(train=tuple(records), test=(), seed=0, ratio=0.5)
    ckpt = tr.train_psnr(
        tr.TrainConfig(stage="psnr", max_steps=0, seed=1), manifest, gen_cfg=MINI_G)
    ckpt_path = root / "g.ckpt"
    ck.save(ckpt, ckpt_path)
    return {"root": root, "corpus": corpus, "photo": photo, "ckpt": ckpt_path}


@pytest.fixture
def runner():
    return CliRunner()


class TestPrepare:
    def test_writes_manifest_idempotently(self, runner, workspace, tmp_path):
        out = tmp_path / "m.txt"
        args = ["prepare", str(workspace["corpus"]), "--stride", "1",
                "--ratio", "0.5", "--seed", "3", "--out", str(out)]
        res = runner.invoke(main, args)
        assert res.exit_code == 0, res.output
        first = out.read_bytes()
        res = runner.invoke(main, args)
        assert res.exit_code == 0
        assert out.read_bytes() == first
        manifest = ds.load_manifest(out)
        train_sessions = {r.session_id for r in manifest.train}
        test_sessions = {r.session_id for r in manifest.test}
        assert train_sessions.isdisjoint(test_sessions)

    def test_unreadable_corpus_exits_1(self, runner, tmp_path):
        res = runner.invoke(main, ["prepare", str(tmp_path / "nope"),
                                   "--out", str(tmp_path / "m.txt")])
        assert res.exit_code == 1
        assert "not a directory" in res.output

    def test_missing_out_is_usage_error(self, runner, workspace):
        res = runner.invoke(main, ["prepare", str(workspace["corpus"])])
        assert res.exit_code == 2


class TestEncode:
    def test_encode_within_budget(self, runner, workspace, tmp_path):
        out = tmp_path / "payload.jpg"
        report = tmp_path / "r.txt"
        res = runner.invoke(main, ["encode", str(workspace["photo"]),
                                   "--budget", "4096", "--out", str(out),
                                   "--report", str(report)])
        assert res.exit_code == 0, res.output
        assert out.stat().st_size <= 4096
        entries = dict(line.split("\t") for line in report.read_text().splitlines())
        assert int(entries["bytes"]) <= 4096

    def test_infeasible_budget_exits_1(self, runner, workspace, tmp_path):
        res = runner.invoke(main, ["encode", str(workspace["photo"]),
                                   "--budget", "150", "--out", str(tmp_path / "x.jpg")])
        assert res.exit_code == 1
        assert "infeasible" in res.output


class TestTransmitSim:
    def test_reference_timing(self, runner):
        res = runner.invoke(main, ["transmit-sim", "--bytes", "1024",
                                   "--rate", "50000", "--packet-size", "1024",
                                   "--overhead", "0"])
        assert res.exit_code == 0, res.output
        assert "total_time=0.16384" in res.output
        assert "max_fps=6.10" in res.output

    def test_requires_exactly_one_source(self, runner, tmp_path):
        assert runner.invoke(main, ["transmit-sim"]).exit_code == 2
        payload = tmp_path / "p.bin"
        payload.write_bytes(b"abc")
        res = runner.invoke(main, ["transmit-sim", "--bytes", "5",
                                   "--payload", str(payload)])
        assert res.exit_code == 2


class TestSendRecv:
    def test_full_pipeline(self, runner, workspace, tmp_path):
        out_dir = tmp_path / "out"
        report = tmp_path / "rep.txt"
        args = ["sendrecv", str(workspace["photo"]), "--budget", "1024",
                "--ckpt", str(workspace["ckpt"]), "--out-dir", str(out_dir),
                "--report", str(report)]
        res = runner.invoke(main, args)
        assert res.exit_code == 0, res.output
        lr = out_dir / "lr.jpg"
        sr = out_dir / "sr.png"
        assert lr.stat().st_size <= 1024
        with Image.open(sr) as img:
            assert img.size == (256, 256)
        entries = dict(line.split("\t") for line in report.read_text().splitlines())
        assert int(entries["payload_bytes"]) <= 1024
        first_sr = sr.read_bytes()

        res = runner.invoke(main, args)  # inference path is deterministic
        assert res.exit_code == 0
        assert sr.read_bytes() == first_sr

    def test_small_input_exits_1(self, runner, workspace, tmp_path):
        small = tmp_path / "small.png"
        Image.fromarray(np.zeros((64, 64, 3), np.uint8)).save(small)
        res = runner.invoke(main, ["sendrecv", str(small),
                                   "--ckpt", str(workspace["ckpt"]),
                                   "--out-dir", str(tmp_path / "o")])
        assert res.exit_code == 1


class TestCompare:
    def test_single_image_grid(self, runner, workspace, tmp_path):
        out = tmp_path / "grid.png"
        res = runner.invoke(main, ["compare", str(workspace["photo"]),
                                   "--ckpt", str(workspace["ckpt"]),
                                   "--out", str(out)])
        assert res.exit_code == 0, res.output
        with Image.open(out) as img:
            assert img.size == (3 * 256 + 2 * 4, 256)

    def test_crop_rows_added(self, runner, workspace, tmp_path):
        out = tmp_path / "grid.png"
        res = runner.invoke(main, ["compare", str(workspace["photo"]),
                                   "--ckpt", str(workspace["ckpt"]),
                                   "--out", str(out),
                                   "--crop", "10,10,64,64", "--crop", "100,100,32,32"])
        assert res.exit_code == 0, res.output
        with Image.open(out) as img:
            assert img.size == (3 * 256 + 2 * 4, 3 * 256 + 2 * 4)

    def test_bad_crop_is_usage_error(self, runner, workspace, tmp_path):
        res = runner.invoke(main, ["compare", str(workspace["photo"]),
                                   "--ckpt", str(workspace["ckpt"]),
                                   "--out", str(tmp_path / "g.png"),
                                   "--crop", "10,10"])
        assert res.exit_code == 2

    def test_out_of_bounds_crop_exits_1(self, runner, workspace, tmp_path):
        res = runner.invoke(main, ["compare", str(workspace["photo"]),
                                   "--ckpt", str(workspace["ckpt"]),
                                   "--out", str(tmp_path / "g.png"),
                                   "--crop", "250,250,32,32"])
        assert res.exit_code == 1


class TestTrainingCommands:
    def test_train_psnr_then_gan_then_evaluate(self, runner, workspace, tmp_path):
        manifest = tmp_path / "m.txt"
        res = runner.invoke(main, ["prepare", str(workspace["corpus"]),
                                   "--stride", "1", "--ratio", "0.5",
                                   "--seed", "0", "--out", str(manifest)])
        assert res.exit_code == 0, res.output

        run1 = tmp_path / "run1"
        res = runner.invoke(main, [
            "train-psnr", "--manifest", str(manifest), "--steps", "1",
            "--out-dir", str(run1), "--n-rrdb", "1", "--base-channels", "4",
            "--growth-channels", "2", "--batch-size", "2", "--no-degrade"])
        assert res.exit_code == 0, res.output
        assert (run1 / "final.ckpt").exists()

        run2 = tmp_path / "run2"
        res = runner.invoke(main, [
            "train-gan", "--manifest", str(manifest), "--steps", "1",
            "--out-dir", str(run2), "--init", str(run1 / "final.ckpt"),
            "--batch-size", "2", "--d-channels", "4,8,16,32", "--no-degrade"])
        assert res.exit_code == 0, res.output
        gan_ckpt = ck.load(run2 / "final.ckpt")
        assert gan_ckpt.stage == "gan"
        assert gan_ckpt.discriminator is not None

        report = tmp_path / "eval.txt"
        res = runner.invoke(main, [
            "evaluate", "--ckpt", str(run2 / "final.ckpt"),
            "--manifest", str(manifest), "--no-degrade",
            "--report", str(report)])
        assert res.exit_code == 0, res.output
        entries = dict(line.split("\t") for line in report.read_text().splitlines())
        assert "mean_psnr_model" in entries

    def test_gan_requires_init(self, runner, workspace, tmp_path):
        res = runner.invoke(main, ["train-gan", "--manifest", "x",
                                   "--steps", "1", "--out-dir", str(tmp_path)])
        assert res.exit_code == 2
