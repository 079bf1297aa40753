import numpy as np
import pytest

from nestq.backend import ImageBuffer, estimate_priors, export_latents, import_latents, read_image, write_image
from nestq.cli import main
from nestq.container import read_header


@pytest.fixture
def png(tmp_path):
    rng = np.random.default_rng(0)
    x = np.add.outer(np.arange(64), np.arange(48)) * 2.0 + rng.normal(0, 10, (64, 48))
    path = tmp_path / "in.png"
    write_image(path, ImageBuffer(np.clip(x, 0, 255).astype(np.uint8)))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_encode_decode_roundtrip(tmp_path, png, capsys):
    stream = tmp_path / "s.plnq"
    code, out, _ = run(capsys, "encode", png, "-o", stream)
    assert code == 0 and "stage=1" in out
    h = read_header(stream.read_bytes())
    assert h.schedule.levels == 4 and h.criterion == "sigma" and h.ordering_bytes == 0
    code, out, _ = run(capsys, "decode", stream, "-o", tmp_path / "out.png")
    assert code == 0 and "padded=0" in out
    assert read_image(tmp_path / "out.png").samples.shape == (64, 48, 1)


def test_truncate_and_budgets(tmp_path, png, capsys):
    stream = tmp_path / "s.plnq"
    run(capsys, "encode", png, "-o", stream, "--levels", "3", "--step", "2")
    code, out, _ = run(capsys, "truncate", stream, "-o", tmp_path / "t.plnq", "--budget-bpp", "1.0")
    assert code == 0
    assert len((tmp_path / "t.plnq").read_bytes()) <= 64 * 48 / 8
    code, out, _ = run(capsys, "decode", tmp_path / "t.plnq", "-o", tmp_path / "t.pgm")
    assert code == 0
    code, out, _ = run(capsys, "decode", stream, "-o", tmp_path / "b.pgm", "--budget-bytes", "200")
    assert code == 0
    code, _, err = run(capsys, "truncate", stream, "-o", tmp_path / "x.plnq")
    assert code == 1 and err.startswith("error:")


def test_rd_csv(tmp_path, png, capsys):
    stream = tmp_path / "s.plnq"
    run(capsys, "encode", png, "-o", stream)
    code, out, _ = run(capsys, "rd", stream, "--original", png, "--checkpoints", "6", "-o", tmp_path / "rd.csv")
    assert code == 0 and "monotonicity_violations=0" in out
    lines = (tmp_path / "rd.csv").read_text().splitlines()
    assert lines[0] == "checkpoint_bytes,bpp,psnr_db" and len(lines) >= 7


def test_side_info_and_import(tmp_path, png, capsys):
    y = np.random.default_rng(1).normal(0, 4, (3, 5, 5))
    src = tmp_path / "lat.bin"
    src.write_bytes(export_latents(y, estimate_priors(y)))
    stream = tmp_path / "l.plnq"
    code, _, _ = run(capsys, "encode", src, "-o", stream, "--criterion", "random", "--unit", "pixel",
                     "--image-size", "80x80")
    assert code == 0
    h = read_header(stream.read_bytes())
    assert h.ordering_bytes > 0 and h.width == 80
    code, _, _ = run(capsys, "decode", stream, "-o", tmp_path / "back.bin")
    assert code == 0
    back, _ = import_latents((tmp_path / "back.bin").read_bytes())
    assert back.shape == y.shape


def test_study_and_naive(tmp_path, png, capsys):
    code, out, _ = run(capsys, "study", png, png, png, "--levels", "2", "--step", "8", "--open-top",
                       "--criteria", "sigma:element", "--points", "6")
    assert code == 0 and "sigma,element" in out
    code, out, _ = run(capsys, "naive", png, "--scales", "1,2,4", "-o", tmp_path)
    assert code == 0
    rows = (tmp_path / "naive_rd.csv").read_text().splitlines()
    assert rows[0] == "s,bytes,bpp,psnr_db" and len(rows) == 4
    assert (tmp_path / "naive_s1.plnq").exists()


def test_errors_leave_no_output(tmp_path, png, capsys):
    code, _, err = run(capsys, "encode", tmp_path / "missing.png", "-o", tmp_path / "o.plnq")
    assert code == 1 and "no such file" in err
    bad = tmp_path / "bad.plnq"
    bad.write_bytes(b"PLNQ" + b"\x00" * 40)
    code, _, err = run(capsys, "decode", bad, "-o", tmp_path / "o.pgm")
    assert code == 1 and not (tmp_path / "o.pgm").exists()
    code, _, err = run(capsys, "encode", png, "-o", tmp_path / "nodir" / "o.plnq")
    assert code == 1
    code, _, err = run(capsys, "encode", png, "-o", tmp_path / "o.plnq", "--levels", "0")
    assert code == 1 and not (tmp_path / "o.plnq").exists()
    code, _, err = run(capsys, "naive", png, "--scales", "0.5", "-o", tmp_path)
    assert code == 1
    with pytest.raises(SystemExit):
        main(["encode", str(png)])
