import struct
import zlib

import numpy as np
import pytest
from PIL import Image

from osdm import cli
from osdm.geometry import desk_phantom, make_phantom, head_phantom
from osdm.io import FormatError, decode_array, encode_array, load_array, save_array

SMALL = ["--set", "geometry.n_views=24", "--set", "geometry.n_detectors=24",
         "--set", "image.width=16", "--set", "image.height=16", "--set", "image.pixel_size=1.2"]


def run(*args):
    return cli.main([str(a) for a in args])


def test_array_round_trip(rng, tmp_path):
    for shape in [(3,), (4, 5), (2, 3, 4), ()]:
        arr = rng.standard_normal(shape).astype(np.float32)
        back = decode_array(encode_array(arr))
        assert back.dtype == np.float32 and back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()
    path = tmp_path / "a.osdm"
    save_array(path, np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(load_array(path), np.arange(6.0).reshape(2, 3))


def test_array_layout_is_documented_bytes():
    buf = encode_array(np.array([[1.0, 2.0]], dtype=np.float32))
    assert buf[:4] == b"OSDM" and buf[4] == 1 and buf[5] == 2
    assert struct.unpack("<II", buf[6:14]) == (1, 2)
    assert struct.unpack("<2f", buf[14:22]) == (1.0, 2.0)
    assert struct.unpack("<I", buf[22:]) == (zlib.crc32(buf[:22]),)


def test_corruption_detected():
    buf = bytearray(encode_array(np.ones((3, 3))))
    buf[20] ^= 1
    with pytest.raises(FormatError, match="CRC"):
        decode_array(bytes(buf))
    with pytest.raises(FormatError):
        decode_array(b"NOPE" + bytes(20))
    with pytest.raises(FormatError):
        decode_array(encode_array(np.ones(3))[:-5])


def test_config_parsing(tmp_path):
    raw = cli.parse_config("# comment\nseed = 4\nrecon.rank=10  # trailing\n\n")
    assert raw == {"seed": "4", "recon.rank": "10"}
    cfg = cli.resolve(raw)
    assert cfg["seed"] == 4 and cfg["recon.rank"] == 10 and cfg["photon.eta"] == 22000.0
    for bad in ("nope = 1", "seed", "seed = 1\nseed = 2"):
        with pytest.raises(cli.ConfigError):
            cli.parse_config(bad)
    with pytest.raises(cli.ConfigError):
        cli.resolve({"recon.rank": "many"})
    assert cli.resolve({"photon.source_intensity": "inf"})["photon.source_intensity"] == np.inf
    assert cli.resolve({"recon.enable_tv": "off"})["recon.enable_tv"] is False


def test_unknown_key_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("not.a.key = 3\n")
    assert run("phantom", "--config", cfg, "--out", tmp_path) == 2
    assert "unknown key" in capsys.readouterr().err
    assert run("phantom", "--set", "image.width=abc", "--out", tmp_path) == 2


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit) as exc:
        run("reconstruct", "--help")
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for key, spec in cli.KEYS.items():
        assert key in out and f"[{spec.unit}]" in out


def test_phantom_command(tmp_path):
    assert run("phantom", "--set", "phantom.kind=empty", "--out", tmp_path / "e") == 0
    assert not load_array(tmp_path / "e" / "phantom.osdm").any()
    assert run("phantom", "--out", tmp_path / "a") == 0
    assert run("phantom", "--out", tmp_path / "b") == 0
    a = (tmp_path / "a" / "phantom.osdm").read_bytes()
    assert a == (tmp_path / "b" / "phantom.osdm").read_bytes()
    np.testing.assert_array_equal(load_array(tmp_path / "a" / "phantom.osdm"),
                                  desk_phantom().values.astype(np.float32))
    spec = "1.0,3,2,0.5,-1,30; -0.5,1,1,0,0,0"
    assert run("phantom", "--set", "phantom.kind=ellipses", "--set", f"phantom.ellipses={spec}",
               "--out", tmp_path / "c") == 0
    want = make_phantom(cli.parse_ellipses(spec), 128, 128, 0.16).values.astype(np.float32)
    np.testing.assert_array_equal(load_array(tmp_path / "c" / "phantom.osdm"), want)
    assert run("phantom", "--set", "phantom.kind=ellipses", "--set", "phantom.ellipses=1,2",
               "--out", tmp_path) == 2


def test_simulate_noiseless_and_dose_ordering(tmp_path):
    out = tmp_path / "inf"
    assert run("simulate", *SMALL, "--set", "photon.source_intensity=inf", "--out", out) == 0
    np.testing.assert_array_equal(load_array(out / "lowdose.osdm"), load_array(out / "clean.osdm"))
    errs = []
    for i0 in ("1e5", "5e4", "1e4"):
        d = tmp_path / i0
        assert run("simulate", *SMALL, "--set", f"photon.source_intensity={i0}", "--out", d) == 0
        x = load_array(d / "clean.osdm").astype(float)
        errs.append(np.mean((load_array(d / "lowdose.osdm") - x) ** 2))
    assert errs[0] < errs[1] < errs[2]


def test_simulate_is_seeded(tmp_path):
    for name in ("a", "b"):
        assert run("simulate", *SMALL, "--seed", 3, "--threads", 1, "--out", tmp_path / name) == 0
    for f in ("counts.osdm", "lowdose.osdm", "weights.osdm"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert run("simulate", *SMALL, "--seed", 4, "--out", tmp_path / "c") == 0
    assert (tmp_path / "c" / "counts.osdm").read_bytes() != (tmp_path / "a" / "counts.osdm").read_bytes()


def test_train_and_reconstruct_pipeline(tmp_path):
    sim = tmp_path / "sim"
    assert run("simulate", *SMALL, "--out", sim) == 0
    tr = tmp_path / "train"
    assert run("train", *SMALL, "--set", f"input.sinogram={sim / 'clean.osdm'}", "--set", "train.n_iters=5",
               "--set", "train.features=4", "--set", "train.window=4", "--out", tr) == 0
    lines = (tr / "loss.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss" and len(lines) == 6
    # resuming continues the loss curve
    tr2 = tmp_path / "train2"
    assert run("train", *SMALL, "--set", f"input.sinogram={sim / 'clean.osdm'}", "--set", "train.n_iters=3",
               "--set", "train.features=4", "--set", f"train.resume={tr / 'model.ckpt'}", "--out", tr2) == 0
    lines2 = (tr2 / "loss.csv").read_text().splitlines()
    assert len(lines2) == 9 and lines2[1:6] == lines[1:]
    rec = tmp_path / "rec"
    common = [*SMALL, "--set", f"input.sinogram={sim / 'lowdose.osdm'}", "--set", "recon.outer_steps=3",
              "--set", "recon.rank=8", "--out", rec]
    assert run("reconstruct", *common, "--set", f"input.checkpoint={tr / 'model.ckpt'}",
               "--set", f"input.reference={sim / 'clean.osdm'}") == 2  # reference is an image, not a sinogram
    assert run("reconstruct", *common, "--set", f"input.checkpoint={tr / 'model.ckpt'}",
               "--set", f"input.weights={sim / 'weights.osdm'}") == 0
    assert load_array(rec / "recon_image.osdm").shape == (16, 16)
    trace = (rec / "trace.csv").read_text().splitlines()
    assert trace[0] == "step,sigma,fidelity,tv" and len(trace) == 4
    assert run("reconstruct", *common) == 2  # diffusion on, no checkpoint
    assert run("reconstruct", *common, "--set", "recon.enable_diffusion=false") == 0  # H-SVD
    assert run("reconstruct", *common, "--set", "input.checkpoint=/no/such/file") == 2


def test_numerical_failure_exit_code(tmp_path, capsys):
    assert run("train", "--set", "train.dataset=delta", "--set", "train.delta_value=nan",
               "--set", "train.n_iters=2", "--set", "train.features=4", "--out", tmp_path) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_baseline_command(tmp_path):
    sim = tmp_path / "sim"
    assert run("simulate", *SMALL, "--set", "photon.source_intensity=inf", "--out", sim) == 0
    assert run("baseline", *SMALL, "--set", f"input.sinogram={sim / 'clean.osdm'}",
               "--set", "baseline.method=both", "--set", "sart.n_iters=4", "--out", tmp_path / "b") == 0
    assert load_array(tmp_path / "b" / "fbp.osdm").shape == (16, 16)
    rows = (tmp_path / "b" / "sart_residual.csv").read_text().splitlines()
    assert len(rows) == 5
    zero = tmp_path / "zero.osdm"
    save_array(zero, np.zeros((24, 24)))
    assert run("baseline", *SMALL, "--set", f"input.sinogram={zero}", "--out", tmp_path / "z") == 0
    assert not load_array(tmp_path / "z" / "fbp.osdm").any()
    assert run("baseline", "--set", "baseline.method=magic", "--set", f"input.sinogram={zero}",
               "--out", tmp_path) == 2


def test_eval_command(tmp_path, capsys, rng):
    ref = rng.random((20, 20)).astype(np.float32)
    save_array(tmp_path / "ref.osdm", ref)
    save_array(tmp_path / "same.osdm", ref)
    save_array(tmp_path / "off.osdm", ref + np.float32(0.5))
    assert run("eval", tmp_path / "ref.osdm", tmp_path / "same.osdm", tmp_path / "off.osdm",
               "--out", tmp_path) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "image,psnr,ssim,mse"
    same = out[1].split(",")
    assert same[0] == "same" and float(same[1]) == pytest.approx(99.99) and float(same[2]) == pytest.approx(1.0)
    assert float(out[2].split(",")[3]) == pytest.approx(0.25, rel=1e-6)
    assert (tmp_path / "metrics.csv").read_text().splitlines() == out


def test_export_png(tmp_path):
    mu_w = 0.2
    hu = np.array([[-1000, -250, 300, 600, 2000]], dtype=float)
    save_array(tmp_path / "img.osdm", mu_w * (1 + hu / 1000))
    assert run("export-png", tmp_path / "img.osdm", "--out", tmp_path) == 0
    px = np.asarray(Image.open(tmp_path / "img.png"))
    assert px.dtype == np.uint8
    assert px[0, 0] == 0 and px[0, 1] == 0 and px[0, 3] == 255 and px[0, 4] == 255
    assert px[0, 2] == 165  # (300 + 250) / 850 * 255
    assert run("export-png", tmp_path / "img.osdm", "--set", "display.window_lo=350",
               "--set", "display.window_hi=550", "--out", tmp_path / "narrow") == 0
    assert np.asarray(Image.open(tmp_path / "narrow" / "img.png"))[0, 3] == 255
    assert run("export-png", tmp_path / "img.osdm", "--set", "display.window_lo=5",
               "--set", "display.window_hi=5", "--out", tmp_path) == 2


def test_window_mapping():
    out = cli.window_to_uint8(np.array([-300.0, -250.0, 600.0, 700.0]), -250, 600)
    np.testing.assert_array_equal(out, [0, 0, 255, 255])
    np.testing.assert_allclose(cli.to_hu([0.2, 0.0], 0.2), [0.0, -1000.0])
