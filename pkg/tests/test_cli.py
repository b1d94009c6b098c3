import json
import subprocess
import sys

import numpy as np

from conftest import make_sources
from zsvad.cli import main
from zsvad.tensor_io import write_matrix


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "zsvad", *map(str, args)], capture_output=True, text=True)


def test_config_dump_parses(tmp_path, capsys):
    assert main(["config"]) == 0
    text = capsys.readouterr().out
    (tmp_path / "c.ini").write_text(text)
    assert main(["--config", str(tmp_path / "c.ini"), "config"]) == 0
    assert capsys.readouterr().out == text


def test_exit_codes(tmp_path):
    (tmp_path / "bad.ini").write_text("[nope]\n")
    r = run_cli("--config", tmp_path / "bad.ini", "config")
    assert r.returncode == 2 and json.loads(r.stderr)["type"] == "ConfigError"
    r = run_cli("detect", "--manifest", tmp_path / "none.jsonl", "--output", tmp_path / "o")
    assert r.returncode == 3
    (tmp_path / "f.jsonl").write_text("")
    (tmp_path / "m.jsonl").write_text(json.dumps({"video_id": "v", "frames": "x.vid", "categories": ["a"]}) + "\n")
    (tmp_path / "c.ini").write_text(f"[semantic]\nprovider = fixture\nfixture_path = {tmp_path / 'f.jsonl'}\n")
    synth = run_cli("synth", "--output", tmp_path / "s", "--count", 1, "--frames", 4, "--height", 32, "--width", 32)
    assert synth.returncode == 0
    r = run_cli("--config", tmp_path / "c.ini", "detect", "--manifest", tmp_path / "s" / "manifest.jsonl",
                "--output", tmp_path / "o")
    err = json.loads(r.stderr)
    assert r.returncode == 4 and err["module"] == "semantic_provider"


def test_empty_manifest_exits_zero(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    r = run_cli("detect", "--manifest", tmp_path / "m.jsonl", "--output", tmp_path / "o")
    assert r.returncode == 0 and json.loads(r.stdout)["videos"] == 0


def test_compress_and_sample(tmp_path):
    write_matrix(tmp_path / "t.bin", np.random.default_rng(0).normal(size=(20, 3)))
    assert main(["compress", "--input", str(tmp_path / "t.bin"), "--output", str(tmp_path / "c.bin"),
                 "--ratio", "0.25", "-k", "3"]) == 0
    side = json.loads((tmp_path / "c.bin.json").read_text())
    assert side["tokens_out"] == 5 and side["k"] == 3 and len(side["densities"]) == 20

    src = make_sources(10, 6)
    (tmp_path / "s.jsonl").write_text("".join(json.dumps(s.__dict__) + "\n" for s in src))
    assert main(["sample", "--input", str(tmp_path / "s.jsonl"), "--output", str(tmp_path / "e.jsonl"),
                 "--max-categories", "4"]) == 0
    assert len((tmp_path / "e.jsonl").read_text().splitlines()) == 10
    assert main(["sample", "--input", str(tmp_path / "s.jsonl"), "--output", str(tmp_path / "e.jsonl")]) == 3


def test_random_weights_notice(tmp_path):
    run_cli("synth", "--output", tmp_path / "s", "--count", 1, "--frames", 4, "--height", 32, "--width", 32)
    entry = json.loads((tmp_path / "s" / "manifest.jsonl").read_text())
    entry.pop("synthetic")
    (tmp_path / "s" / "real.jsonl").write_text(json.dumps(entry) + "\n")
    r = run_cli("detect", "--manifest", tmp_path / "s" / "real.jsonl", "--output", tmp_path / "o")
    assert r.returncode == 0 and "untrained" in r.stderr.lower()
    r = run_cli("detect", "--manifest", tmp_path / "s" / "manifest.jsonl", "--output", tmp_path / "o2")
    assert r.stderr == ""
