import json

import numpy as np
import pytest

from ibpcat.cli import (
    DatasetError,
    dispatch,
    load_dataset,
    load_weights_json,
    save_dataset,
    save_weights_json,
)
from ibpcat.core import ObservationMatrix, WeightStack
from ibpcat.synthgen import ImageGenConfig, generate_images


def write_config(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


class TestDatasetIO:
    def test_header_and_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("R:2,2\n1,2\n")
        X = load_dataset(p)
        assert X.n_rows == 1 and X.n_cols == 2
        assert list(X.cardinalities) == [2, 2]

    def test_out_of_range_entry_names_line_and_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("R:2,2\n1,2\n1,3\n")
        with pytest.raises(DatasetError, match=r":3: column 2"):
            load_dataset(p)

    def test_bad_column_count(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("R:2,2\n1\n")
        with pytest.raises(DatasetError, match="expected 2 columns"):
            load_dataset(p)

    def test_missing_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,2\n")
        with pytest.raises(DatasetError, match="header"):
            load_dataset(p)

    def test_non_integer_entry(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("R:2\nx\n")
        with pytest.raises(DatasetError, match=":2"):
            load_dataset(p)

    def test_round_trip(self, tmp_path):
        X, _ = generate_images(ImageGenConfig(n_samples=12, seed=5))
        p = tmp_path / "d.csv"
        save_dataset(X, p)
        loaded = load_dataset(p)
        assert np.array_equal(loaded.data, X.data)
        assert np.array_equal(loaded.cardinalities, X.cardinalities)

    def test_weights_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        stack = WeightStack([rng.normal(size=(3, 2)), rng.normal(size=(3, 4))])
        p = tmp_path / "w.json"
        save_weights_json(stack, p)
        loaded = load_weights_json(p)
        for a, b in zip(loaded.mats, stack.mats):
            assert np.allclose(a, b)


class TestDispatch:
    def test_unknown_flag_usage_error(self, capsys):
        assert dispatch(["gibbs", "--bogus"]) == 1

    def test_unknown_command_usage_error(self):
        assert dispatch(["frobnicate", "--config", "x", "--out", "y"]) == 1

    def test_missing_config_file(self, tmp_path):
        assert dispatch(["gibbs", "--config", str(tmp_path / "nope.json"),
                         "--out", str(tmp_path / "o")]) == 1

    def test_invalid_config_schema(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"alpha": 1.0})  # missing seed
        assert dispatch(["gibbs", "--config", cfg, "--out", str(tmp_path / "o")]) == 1

    def test_runtime_error_exit_2(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {"seed": 1, "dataset": str(tmp_path / "missing.csv"),
             "gibbs": {"n_iterations": 2}},
        )
        assert dispatch(["gibbs", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_synth_images_outputs(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            {"seed": 7, "images": {"n_samples": 15}},
        )
        out = tmp_path / "out"
        assert dispatch(["synth-images", "--config", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["files"]) >= {"dataset.csv", "true_z.csv"}
        record = json.loads((out / "run_record.json").read_text())
        assert record["seed"] == 7 and "artifact_version" in record
        X = load_dataset(out / "dataset.csv")
        assert X.n_rows == 15

    def test_full_pipeline_and_determinism(self, tmp_path):
        # synth -> gibbs -> analyze; gibbs twice with the same seed must be
        # byte-identical.
        synth_cfg = write_config(
            tmp_path / "synth.json",
            {"seed": 3, "images": {"n_samples": 25}},
        )
        data_dir = tmp_path / "data"
        assert dispatch(["synth-images", "--config", synth_cfg, "--out", str(data_dir)]) == 0

        gibbs_cfg = write_config(
            tmp_path / "gibbs.json",
            {"seed": 11, "alpha": 0.5, "sigma_b_sq": 1.0,
             "dataset": str(data_dir / "dataset.csv"),
             "gibbs": {"n_iterations": 5, "k_init": 2}},
        )
        run1 = tmp_path / "run1"
        run2 = tmp_path / "run2"
        assert dispatch(["gibbs", "--config", gibbs_cfg, "--out", str(run1)]) == 0
        assert dispatch(["gibbs", "--config", gibbs_cfg, "--out", str(run2)]) == 0
        for name in ("trace.csv", "z_final.csv", "b_map.json"):
            assert (run1 / name).read_bytes() == (run2 / name).read_bytes()
        manifest = json.loads((run1 / "manifest.json").read_text())
        assert {"trace.csv", "z_final.csv", "b_map.json"} <= set(manifest["files"])

        analyze_cfg = write_config(
            tmp_path / "an.json",
            {"seed": 0, "dataset": str(data_dir / "dataset.csv"),
             "analysis": {"run_dir": str(run1)}},
        )
        report_dir = tmp_path / "report"
        assert dispatch(["analyze", "--config", analyze_cfg, "--out", str(report_dir)]) == 0
        manifest = json.loads((report_dir / "manifest.json").read_text())
        assert "pattern_census.csv" in manifest["files"]
        assert "baseline.csv" in manifest["files"]

    def test_seed_override(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"seed": 1, "images": {"n_samples": 5}})
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert dispatch(["synth-images", "--config", cfg, "--out", str(out_a),
                         "--seed", "99"]) == 0
        record = json.loads((out_a / "run_record.json").read_text())
        assert record["seed"] == 99
        assert dispatch(["synth-images", "--config", cfg, "--out", str(out_b)]) == 0
        a = (out_a / "dataset.csv").read_bytes()
        b = (out_b / "dataset.csv").read_bytes()
        assert a != b

    def test_synth_cat_and_vi(self, tmp_path):
        synth_cfg = write_config(
            tmp_path / "synth.json",
            {"seed": 5, "categorical": {"n_rows": 40, "n_cols": 4, "k_true": 2}},
        )
        data_dir = tmp_path / "cat"
        assert dispatch(["synth-cat", "--config", synth_cfg, "--out", str(data_dir)]) == 0
        assert (data_dir / "true_weights.json").exists()

        vi_cfg = write_config(
            tmp_path / "vi.json",
            {"seed": 2, "dataset": str(data_dir / "dataset.csv"),
             "vi": {"k": 3, "max_cycles": 15}},
        )
        out = tmp_path / "vi_out"
        assert dispatch(["vi", "--config", vi_cfg, "--out", str(out)]) == 0
        lines = (out / "bound_trace.csv").read_text().splitlines()
        assert lines[0] == "cycle,bound"
        bounds = [float(l.split(",")[1]) for l in lines[1:]]
        assert all(b2 >= b1 - 1e-6 for b1, b2 in zip(bounds, bounds[1:]))
        assert (out / "state.json").exists()
        assert (out / "z_binarized.csv").exists()
