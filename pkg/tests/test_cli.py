import json

import numpy as np
import pytest

from gavatar.cli import main
from gavatar.render import read_pgm, read_ppm


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthesize a tiny dataset + fit once; downstream commands reuse it."""
    root = tmp_path_factory.mktemp("cli")
    ds = root / "ds"
    assert main(["--seed", "3", "synth", "--gaussians", "25", "--frames", "3",
                 "--views", "4", "--size", "24", "-o", str(ds)]) == 0
    fitted = root / "fitted.gava"
    losslog = root / "loss.csv"
    assert main(["fit", "--dataset", str(ds), "--iters", "5",
                 "--loss-log", str(losslog), "-o", str(fitted)]) == 0
    return root


def test_prior_command(tmp_path):
    out = tmp_path / "m.gapm"
    assert main(["--seed", "2", "prior", "--joints", "12", "--vertices", "40",
                 "-o", str(out)]) == 0
    from gavatar.prior import load_prior
    model = load_prior(out)
    assert model.joint_count == 12
    assert model.vertex_count == 40


def test_synth_outputs(workspace):
    ds = workspace / "ds"
    assert (ds / "manifest.json").exists()
    assert (ds / "gt_avatar.gava").exists()
    assert len(list((ds / "gt").glob("*.ppm"))) == 12


def test_fit_outputs(workspace):
    from gavatar.avatar import load_avatar
    avatar = load_avatar(workspace / "fitted.gava")
    avatar.validate()
    log = np.loadtxt(workspace / "loss.csv", skiprows=1)
    assert log.shape == (5,)


def test_encode_decode_round_trip(workspace):
    ds = workspace / "ds"
    stream = workspace / "a.gavc"
    assert main(["encode", "--avatar", str(ds / "gt_avatar.gava"),
                 "--model", str(ds / "model.gapm"), "--dataset", str(ds),
                 "--qp", "q2", "-o", str(stream)]) == 0
    assert stream.stat().st_size > 0
    dec_avatar = workspace / "dec.gava"
    dec_frames = workspace / "dec.gafp"
    assert main(["decode", str(stream), "--avatar-out", str(dec_avatar),
                 "--frames-out", str(dec_frames)]) == 0
    from gavatar.avatar import load_avatar, load_frame_params
    assert load_avatar(dec_avatar).count == 25
    assert len(load_frame_params(dec_frames)) == 3


def test_render_command(workspace, tmp_path):
    ds = workspace / "ds"
    # Render the GT avatar at frame 0 / view 0 and compare with the stored
    # ground-truth image (both pass through 8-bit PPM quantization).
    frames_file = ds / "frames" / "0000.gafp"
    out = tmp_path / "r.ppm"
    alpha = tmp_path / "r.pgm"
    assert main(["render", "--avatar", str(ds / "gt_avatar.gava"),
                 "--model", str(ds / "model.gapm"), "--frames", str(frames_file),
                 "--cameras", str(ds / "cameras.json"), "--frame", "0",
                 "--view", "0", "--alpha", str(alpha), "-o", str(out)]) == 0
    img = read_ppm(out)
    gt = read_ppm(ds / "gt" / "0000_00.ppm")
    # The GAVA file stores float32 attributes, so allow tiny drift on top of
    # the shared 8-bit quantization.
    assert np.max(np.abs(img - gt)) <= 2.5 / 255
    assert read_pgm(alpha).shape == (24, 24)


def test_rd_command(workspace, tmp_path):
    ds = workspace / "ds"
    out = tmp_path / "rd.csv"
    assert main(["rd", "--dataset", str(ds), "--avatar",
                 str(ds / "gt_avatar.gava"), "--out", str(out)]) == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "label,rate_mbps,psnr_db,ssim"
    assert len(rows) == 5
    rates = [float(r.split(",")[1]) for r in rows[1:]]
    assert rates == sorted(rates)


def test_e2e_command(tmp_path, capsys):
    # Tiny configuration: thresholds will not be met, so expect exit code 1
    # plus a well-formed JSON report.
    rc = main(["e2e", "--gaussians", "10", "--frames", "2", "--views", "2",
               "--size", "24", "--iters", "3", "--workdir", str(tmp_path)])
    report = json.loads(capsys.readouterr().out)
    assert rc == 1
    assert report["thresholds_met"] is False
    assert "train_psnr" in report and len(report["rd_points"]) == 4
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "rd.csv").exists()


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["bogus"])
