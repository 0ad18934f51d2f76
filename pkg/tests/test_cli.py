import csv
import subprocess
import sys

import numpy as np
import pytest

from hris.cli import main
from hris.codebook import load_codebook


def test_design_and_inspect(tmp_path, capsys):
    book = tmp_path / "book.csv"
    assert main(["design-codebook", "--Nx", "4", "--L", "8", "-o", str(book)]) == 0
    loaded = load_codebook(book)
    assert loaded.L == 8 and loaded.N == 16
    table = tmp_path / "pattern.csv"
    assert main(["inspect-codebook", str(book), "--points", "91", "-o", str(table)]) == 0
    rows = list(csv.reader(table.open()))
    assert rows[0] == ["phi"] + [f"c{i}" for i in range(8)] and len(rows) == 92
    gains = np.array(rows[1:], dtype=float)[:, 1:]
    assert np.all(gains >= 0) and np.all(gains <= 16 ** 2 + 1e-9)


def test_design_quantized_warns(tmp_path, capsys):
    book = tmp_path / "q.csv"
    assert main(["design-codebook", "--Nx", "4", "--L", "8", "--Q", "1", "-o", str(book)]) == 0
    assert "exceed the leakage bound" in capsys.readouterr().err
    assert load_codebook(book).quantization_bits == 1


def test_inspect_mismatched_geometry(tmp_path, capsys):
    book = tmp_path / "b.csv"
    main(["design-codebook", "--Nx", "3", "--Nz", "3", "--L", "4", "-o", str(book)])
    assert main(["inspect-codebook", str(book), "--Nz", "4"]) == 1
    assert "hris: error:" in capsys.readouterr().err


def test_probe_demo(tmp_path, capsys):
    out, trace = tmp_path / "profile.csv", tmp_path / "trace.csv"
    assert main(["probe-demo", "--K", "2", "--Q", "2", "-o", str(out), "--trace", str(trace)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["codeword", "phi_lo", "phi_hi", "rho_bs", "rho_ue"] and len(rows) == 33
    assert len(trace.read_text().splitlines()) == 1 + 2 * 32
    assert "BS peaks" in capsys.readouterr().err


def test_run_command(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(f"methods: [O-MARISA, O-wMARISA]\nsweep_values: [2, 3]\nn_trials: 3\n"
                   f"output_dir: {tmp_path / 'res'}\n")
    assert main(["run", str(cfg), "--trials", "2"]) == 0
    summary = tmp_path / "res" / "summary.csv"
    assert summary.exists() and (tmp_path / "res" / "summary_trials.csv").exists()
    rows = list(csv.DictReader(summary.open()))
    assert len(rows) == 4 and {r["n_trials"] for r in rows} == {"2"}


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("methods: [SoA]\n")
    assert main(["run", str(bad)]) == 1
    assert "unknown method" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main([])


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "hris.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "design-codebook" in r.stdout
