import json

import numpy as np
import pytest

from nnfidelity.dataset import (
    FeatureSpec,
    build_dataset,
    dataset_paths,
    fidelity_resolution,
    load_dataset,
    make_binning,
    per_label_counts,
    save_dataset,
)
from nnfidelity.errors import BadEdges, CorruptRecord, IoError, SchemaMismatch
from nnfidelity.measurement import MeasurementSetting, outcome_probabilities
from nnfidelity.quantum import fidelity_to_pure, named_state, pauli_expectation
from nnfidelity.selection import select_settings


@pytest.fixture(scope="module")
def bell():
    return named_state("Bell")


@pytest.fixture(scope="module")
def small(bell):
    plan = select_settings(bell, 3, target_id="Bell-2")
    return build_dataset(bell, plan, make_binning("L66"), 4, 2, root_seed=3)


class TestBinning:
    @pytest.mark.parametrize("preset,count", [("L66", 66), ("L122", 122), ("L234", 234)])
    def test_presets(self, preset, count):
        b = make_binning(preset)
        assert b.count == count
        assert b.edges[0] == 0.0 and b.edges[-1] == 1.0

    def test_bin_of(self):
        b = make_binning("L122")
        assert b.bin_of(1.0) == 121
        assert b.bin_of(0.0) == 0
        assert b.bin_of(0.97) == 22 + int((0.97 - 0.55) // 0.0045) == 115
        assert b.bin_of(0.55) == 22

    def test_half_open(self):
        b = make_binning([0.0, 0.5, 1.0])
        assert b.bin_of(0.5) == 1 and b.bin_of(np.nextafter(0.5, 0)) == 0
        assert b.id.startswith("custom-")

    @pytest.mark.parametrize("edges", [[0.0, 0.5], [0.0, 0.6, 0.4, 1.0], [0.1, 1.0]])
    def test_bad_edges(self, edges):
        with pytest.raises(BadEdges):
            make_binning(edges)

    def test_unknown_preset(self):
        with pytest.raises(BadEdges):
            make_binning("L7")

    def test_resolution(self):
        assert fidelity_resolution(make_binning("L122")) == pytest.approx(0.0125)


class TestFeatureSpec:
    def test_layout_and_prefix(self):
        spec = FeatureSpec("PauliExpectations", (MeasurementSetting("XX"), MeasurementSetting("ZZ")), 2)
        assert spec.layout == ["XX:IX", "XX:XI", "XX:XX", "ZZ:IZ", "ZZ:ZI", "ZZ:ZZ"]
        assert spec.prefix(1).layout == spec.layout[:3]
        assert spec.prefix(1).layout_hash != spec.layout_hash

    def test_assemble_expectations(self):
        b = named_state("Bell")
        spec = FeatureSpec("PauliExpectations", (MeasurementSetting("XX"), MeasurementSetting("YY")), 2, shots=None)
        probs = np.stack([outcome_probabilities(b, s).p for s in spec.settings])
        x = spec.assemble(probs)
        expect = [pauli_expectation(b, lay.split(":")[1]) for lay in spec.layout]
        np.testing.assert_allclose(x, expect, atol=1e-12)

    def test_outcome_mode(self):
        spec = FeatureSpec("OutcomeProbs", (MeasurementSetting("XYZ"),), 3)
        assert len(spec.layout) == 8 and spec.layout[5] == "XYZ:101"

    def test_round_trip_and_tamper(self):
        spec = FeatureSpec("PauliExpectations", (MeasurementSetting("XY"),), 2)
        assert FeatureSpec.from_dict(spec.to_dict()).layout_hash == spec.layout_hash
        d = spec.to_dict()
        d["layout"] = list(reversed(d["layout"]))
        with pytest.raises(SchemaMismatch):
            FeatureSpec.from_dict(d)


class TestBuild:
    def test_counts_and_labels(self, bell):
        plan = select_settings(bell, 2)
        ds = build_dataset(bell, plan, make_binning("L122"), 8, 2, root_seed=0, shots=None)
        assert len(ds) == 1220
        assert np.array_equal(ds.binning.bin_of(ds.fidelity), ds.labels)
        counts = per_label_counts(ds)
        assert np.all(counts["train"] == 8) and np.all(counts["val"] == 2)

    def test_noiseless_features_bounded(self, bell):
        plan = select_settings(bell, 3)
        ds = build_dataset(bell, plan, make_binning("L66"), 1, 1, root_seed=3, shots=None)
        spec = ds.feature_spec
        assert ds.features.shape == (132, len(spec.layout))
        assert np.all(np.abs(ds.features) <= 1 + 1e-12)

    def test_fidelity_of_generated_states(self, bell):
        from nnfidelity.dataset import _generate_states, record_seed
        from nnfidelity.quantum import DensityMatrix, householder_target_unitary, transport

        seeds = [record_seed(0, i) for i in range(5)]
        fids = np.linspace(0.1, 0.9, 5)
        mats = _generate_states(2, "Mixed", "H", fids, seeds)
        U = householder_target_unitary(bell)
        for m, f in zip(mats, fids):
            assert fidelity_to_pure(bell, transport(U, DensityMatrix(m, check=False))) == pytest.approx(f, abs=1e-9)

    def test_deterministic(self, bell, small):
        plan = select_settings(bell, 3, target_id="Bell-2")
        again = build_dataset(bell, plan, make_binning("L66"), 4, 2, root_seed=3)
        assert again.features.tobytes() == small.features.tobytes()

    def test_split_sizes(self, small):
        assert len(small.train) == 66 * 4 and len(small.val) == 66 * 2

    def test_with_settings(self, small):
        sub = small.with_settings(2)
        assert sub.features.shape[1] == 6
        assert sub.feature_spec.layout == small.feature_spec.layout[:6]

    def test_rejects_bad_counts(self, bell):
        with pytest.raises(ValueError):
            build_dataset(bell, select_settings(bell, 1), make_binning("L66"), 0, 1)


class TestPersistence:
    def test_round_trip(self, small, tmp_path):
        save_dataset(small, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert np.array_equal(back.features, small.features)
        assert np.array_equal(back.fidelity, small.fidelity)
        assert np.array_equal(back.labels, small.labels)
        assert back.n_train == small.n_train

    def test_refuses_overwrite(self, small, tmp_path):
        save_dataset(small, tmp_path / "d")
        with pytest.raises(FileExistsError):
            save_dataset(small, tmp_path / "d")
        save_dataset(small, tmp_path / "d", force=True)

    def test_byte_identical_saves(self, small, tmp_path):
        save_dataset(small, tmp_path / "a")
        save_dataset(small, tmp_path / "b")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_truncated_csv(self, small, tmp_path):
        _, cpath = save_dataset(small, tmp_path / "d")
        data = cpath.read_bytes()
        cpath.write_bytes(data[: len(data) // 2])
        with pytest.raises(CorruptRecord):
            load_dataset(tmp_path / "d")

    def test_truncated_manifest(self, small, tmp_path):
        mpath, _ = save_dataset(small, tmp_path / "d")
        mpath.write_text(mpath.read_text()[:50])
        with pytest.raises(CorruptRecord):
            load_dataset(tmp_path / "d")

    def test_edited_binning(self, small, tmp_path):
        mpath, _ = save_dataset(small, tmp_path / "d")
        doc = json.loads(mpath.read_text())
        doc["binning"]["id"] = "L122"
        mpath.write_text(json.dumps(doc))
        with pytest.raises(SchemaMismatch):
            load_dataset(tmp_path / "d")

    def test_missing(self, tmp_path):
        with pytest.raises(IoError):
            load_dataset(tmp_path / "nothing")

    def test_paths(self, tmp_path):
        m, c = dataset_paths(tmp_path / "x.csv")
        assert m.name == "x.manifest.json" and c.name == "x.csv"
