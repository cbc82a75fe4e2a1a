import pandas as pd
import pytest

from evaluation.plots import MalformedCsvError, plot_curves, plot_training_logs, read_csv_checked


def write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def training_log(tmp_path):
    return write(tmp_path / "training_log.csv",
                 "# config_hash=abc seed=0\niteration,val_ss,loss_rl\n0,0.2,\n1,,0.5\n2,0.4,0.3\n")


@pytest.fixture
def curve(tmp_path):
    rows = "\n".join(f"{t / 50},{1 - t / 50}" for t in range(50))
    return write(tmp_path / "success_curve.csv", f"threshold,fraction\n{rows}\n")


def test_read_csv_skips_metadata_lines(training_log):
    df = read_csv_checked(training_log, ["iteration", "val_ss"])
    assert df["iteration"].tolist() == [0, 1, 2]
    assert df["val_ss"].isna().tolist() == [False, True, False]


@pytest.mark.parametrize("text, line, message", [
    ("", 1, "no header"),
    ("# only metadata\n", 2, "no header"),
    ("iteration,val_ss\n", 2, "no data rows"),
    ("iteration,other\n0,1\n", 1, "missing column"),
    ("iteration,val_ss\n0,0.1\n1,oops\n", 3, "non-numeric val_ss"),
    ("# config_hash=abc seed=0\niteration,val_ss\n0,0.1\n1,bad\n", 4, "non-numeric"),
])
def test_malformed_csv_reports_line(tmp_path, text, line, message):
    path = write(tmp_path / "bad.csv", text)
    with pytest.raises(MalformedCsvError, match=message) as info:
        read_csv_checked(path, ["iteration", "val_ss"])
    assert info.value.line == line


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_csv_checked(str(tmp_path / "absent.csv"), ["iteration"])


def test_training_plot_is_deterministic(tmp_path, training_log):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    plot_training_logs([training_log], str(a), description="cmp")
    plot_training_logs([training_log], str(b), description="cmp")
    assert a.read_bytes() == b.read_bytes()
    assert b"<svg" in a.read_bytes()


def test_curve_plots(tmp_path, curve):
    out = tmp_path / "plots" / "success.svg"
    plot_curves([curve, curve], "success", str(out), labels=["a", "b"])
    assert out.exists()
    plot_curves([curve], "precision", str(tmp_path / "precision.svg"))
    with pytest.raises(ValueError):
        plot_curves([curve], "roc", str(tmp_path / "roc.svg"))


def test_plot_refuses_malformed_input(tmp_path):
    bad = write(tmp_path / "bad.csv", "threshold,fraction\n0.0,x\n")
    with pytest.raises(MalformedCsvError):
        plot_curves([bad], "success", str(tmp_path / "out.svg"))
    assert not (tmp_path / "out.svg").exists()
    assert pd.read_csv(bad).shape == (1, 2)
