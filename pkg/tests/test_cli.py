import numpy as np
import pytest
from click.testing import CliRunner

from phantoms import random_blob_phantom
from volkey.cli import main
from volkey.volume import Volume, save_raw


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def phantom_path(tmp_path_factory):
    rng = np.random.default_rng(13)
    vol = random_blob_phantom((40, 40, 40), rng, n_blobs=8, margin=8)
    data_path, _ = save_raw(vol, tmp_path_factory.mktemp("cli") / "phantom")
    return data_path


def run(runner, args):
    return runner.invoke(main, args, catch_exceptions=False)


class TestExtractCommand:
    def test_constant_volume_zero_keypoints_success(self, runner, tmp_path):
        data_path, _ = save_raw(Volume(np.full((24, 24, 24), 1.0, dtype=np.float32)), tmp_path / "c")
        result = run(runner, ["extract", data_path, "-o", str(tmp_path / "out"), "--num-octaves", "2"])
        assert result.exit_code == 0
        assert "keypoints=0" in result.output

    def test_two_blob_phantom_writes_keypoints(self, runner, tmp_path):
        from phantoms import blob_field

        field = blob_field((64, 64, 64), [(20, 20, 20), (44, 44, 44)], [3.0, 5.0], [1.0, 1.0])
        data_path, _ = save_raw(Volume(field), tmp_path / "blobs")
        out = tmp_path / "out"
        result = run(runner, ["extract", data_path, "-o", str(out), "--num-octaves", "3"])
        assert result.exit_code == 0
        lines = (tmp_path / "out.keys.txt").read_text().splitlines()
        assert lines[0] == "# volkey keypoints v1"
        assert len(lines) >= 3  # >= 2 keypoints with frames

    def test_missing_input_exits_io_or_format(self, runner, tmp_path):
        result = runner.invoke(main, ["extract", str(tmp_path / "nope.f32"), "-o", str(tmp_path / "x")])
        assert result.exit_code in (3, 4)

    def test_bad_parameter_exit_code(self, runner, phantom_path, tmp_path):
        result = runner.invoke(
            main, ["extract", phantom_path, "-o", str(tmp_path / "x"), "--descriptor", "orb"]
        )
        assert result.exit_code == 5

    def test_config_file_plus_override(self, runner, phantom_path, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("num_octaves = 2\ndescriptor = rrief\n")
        result = run(
            runner,
            ["extract", phantom_path, "-o", str(tmp_path / "o"), "--config", str(cfg), "--pairs", "32"],
        )
        assert result.exit_code == 0
        header = (tmp_path / "o.desc.txt").read_text().splitlines()[0]
        assert "kind=rrief" in header and "n=32" in header


@pytest.fixture(scope="module")
def desc_file(tmp_path_factory):
    rng = np.random.default_rng(23)
    vol = random_blob_phantom((40, 40, 40), rng, n_blobs=8, margin=8)
    base = tmp_path_factory.mktemp("m")
    data_path, _ = save_raw(vol, base / "v")
    runner = CliRunner()
    out = base / "v_out"
    result = run(runner, ["extract", data_path, "-o", str(out), "--num-octaves", "2"])
    assert result.exit_code == 0
    return str(out) + ".desc.txt"


class TestMatchCommand:
    def test_self_match_identity(self, runner, desc_file):
        result = run(runner, ["match", desc_file, desc_file])
        assert result.exit_code == 0
        assert "consensus scale: 1" in result.output

    def test_kind_mismatch_exit(self, runner, desc_file, tmp_path):
        other = tmp_path / "other.desc.txt"
        other.write_text("# volkey descriptors v1 kind=brief n=64 seed=13\n")
        result = runner.invoke(main, ["match", desc_file, str(other)])
        assert result.exit_code == 5

    def test_no_consensus_exit(self, runner, tmp_path):
        # Two descriptor files whose single match cannot reach min_votes.
        line = "10 10 10 2.5 0 1 0.5 peak " + " ".join(["1 0 0 0 1 0 0 0 1"]) + " " + "0" * 16
        for name in ("a", "b"):
            (tmp_path / f"{name}.desc.txt").write_text(
                "# volkey descriptors v1 kind=brief n=64 seed=13\n" + line + "\n" + line + "\n"
            )
        result = runner.invoke(
            main, ["match", str(tmp_path / "a.desc.txt"), str(tmp_path / "b.desc.txt")]
        )
        assert result.exit_code == 6


class TestBenchCommand:
    def test_default_run_emits_csv(self, runner, phantom_path, tmp_path):
        csv_path = tmp_path / "t.csv"
        result = run(
            runner,
            ["bench", phantom_path, "--csv", str(csv_path), "--repeat", "1", "--num-octaves", "2"],
        )
        assert result.exit_code == 0
        assert csv_path.read_text().startswith("stage,octave,level,workers,chunk,wall_micros")

    def test_chunk_sweep_rows(self, runner, phantom_path, tmp_path):
        result = run(
            runner,
            ["bench", phantom_path, "--chunks", "1,5,10", "--repeat", "1", "--num-octaves", "2"],
        )
        assert result.exit_code == 0
        assert result.output.count("chunk=") == 3
        assert "fastest chunk:" in result.output

    def test_workers_comparison_table(self, runner, phantom_path):
        result = run(
            runner,
            ["bench", phantom_path, "--workers", "1", "--workers", "2", "--repeat", "1", "--num-octaves", "2"],
        )
        assert result.exit_code == 0
        assert "workers=1" in result.output and "workers=2" in result.output


class TestConfigDump:
    def test_round_trip(self, runner, tmp_path):
        out = tmp_path / "cfg.txt"
        result = run(runner, ["config-dump", "-o", str(out), "--blur-sigma", "1.85"])
        assert result.exit_code == 0
        from volkey.config import PipelineConfig

        assert PipelineConfig.from_file(out).blur_sigma == 1.85

    def test_prints_defaults(self, runner):
        result = run(runner, ["config-dump"])
        assert "blur_sigma = 0.95" in result.output
