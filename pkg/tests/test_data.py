import numpy as np
import pytest

from enlstm.data import (
    ChannelStats,
    WellRecord,
    build_windows,
    load_csv,
    loo_splits,
    mse,
    synth_coefficients,
    synth_generate,
    synth_targets,
    window,
    write_csv,
    zscore_apply,
    zscore_fit,
    zscore_invert,
)


def make_record(n=10, well="w1", channels=("gr", "rho")):
    rng = np.random.default_rng(0)
    return WellRecord(
        well, 0.1 * np.arange(n), {c: rng.normal(size=n) for c in channels}
    )


class TestWellRecord:
    def test_channel_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            WellRecord("w", [0.0, 0.1], {"a": [1.0]})

    def test_non_monotone_depth(self):
        with pytest.raises(ValueError, match="non-monotone"):
            WellRecord("w", [0.0, 0.2, 0.1], {"a": [1.0, 2.0, 3.0]})

    def test_non_uniform_spacing(self):
        with pytest.raises(ValueError, match="non-uniform"):
            WellRecord("w", [0.0, 0.1, 0.5], {"a": [1.0, 2.0, 3.0]})

    def test_matrix_column_order(self):
        rec = make_record()
        mat = rec.matrix(["rho", "gr"])
        assert np.array_equal(mat[:, 0], rec.channels["rho"])
        assert np.array_equal(mat[:, 1], rec.channels["gr"])


class TestCsv:
    def test_small_fixture(self, tmp_path):
        path = tmp_path / "wells.csv"
        path.write_text(
            "well_id,depth,gr,rho\n"
            "A,0.1,10.0,2.1\n"
            "A,0.2,11.0,2.2\n"
            "A,0.3,12.0,2.3\n"
        )
        (rec,) = load_csv(path)
        assert rec.well_id == "A"
        assert len(rec) == 3
        assert rec.channels["gr"][1] == 11.0

    def test_non_monotone_depth_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("well_id,depth,gr\nA,1.0,5\nA,0.9,6\n")
        with pytest.raises(ValueError, match="non-monotone depth at line 3"):
            load_csv(path)

    def test_non_numeric_cell_reports_column_and_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("well_id,depth,gr\nA,1.0,5\nA,1.1,oops\n")
        with pytest.raises(ValueError, match="column 'gr' at line 3"):
            load_csv(path)

    def test_missing_required_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("well_id,gr\nA,5\n")
        with pytest.raises(ValueError, match="missing required column 'depth'"):
            load_csv(path)

    def test_rows_with_missing_values_are_dropped(self, tmp_path, caplog):
        path = tmp_path / "gaps.csv"
        path.write_text(
            "well_id,depth,gr\nA,0.1,5\nA,0.2,\nA,0.3,7\n"
        )
        with caplog.at_level("WARNING"):
            (rec,) = load_csv(path)
        assert len(rec) == 2
        assert "dropped 1 rows" in caplog.text

    def test_groups_by_well(self, tmp_path):
        path = tmp_path / "two.csv"
        path.write_text(
            "well_id,depth,gr\nA,0.1,1\nA,0.2,2\nB,0.1,3\n"
        )
        recs = load_csv(path)
        assert [r.well_id for r in recs] == ["A", "B"]

    def test_roundtrip_is_exact(self, tmp_path):
        records = synth_generate(5, n_wells=2, length=30, n_in=2, n_out=1)
        path = tmp_path / "rt.csv"
        write_csv(records, path)
        back = load_csv(path)
        for orig, rec in zip(records, back):
            assert np.array_equal(orig.depth, rec.depth)
            for name in orig.channels:
                assert np.abs(orig.channels[name] - rec.channels[name]).max() <= 1e-12


class TestZscore:
    def test_population_statistics(self):
        rec = WellRecord("w", [0.0, 0.1, 0.2], {"a": [1.0, 2.0, 3.0]})
        stats = zscore_fit([rec], ["a"])
        assert stats.mean["a"] == pytest.approx(2.0)
        assert stats.std["a"] == pytest.approx(np.sqrt(2.0 / 3.0))
        normed = zscore_apply(rec, stats)
        assert np.allclose(normed.channels["a"], [-1.2247448, 0.0, 1.2247448],
                           atol=1e-6)

    def test_already_standardized_is_near_identity(self):
        rng = np.random.default_rng(1)
        series = rng.normal(size=5000)
        series = (series - series.mean()) / series.std()
        rec = WellRecord("w", 0.1 * np.arange(5000), {"a": series})
        stats = zscore_fit([rec], ["a"])
        out = zscore_apply(rec, stats)
        assert np.allclose(out.channels["a"], series, atol=1e-9)

    def test_denormalize_roundtrip(self):
        rec = make_record(50)
        stats = zscore_fit([rec], ["gr", "rho"])
        normed = zscore_apply(rec, stats)
        back = zscore_invert(
            np.column_stack([normed.channels["gr"], normed.channels["rho"]]),
            ["gr", "rho"],
            stats,
        )
        assert np.abs(back - rec.matrix(["gr", "rho"])).max() <= 1e-12

    def test_constant_channel_rejected(self):
        rec = WellRecord("w", [0.0, 0.1], {"a": [5.0, 5.0]})
        with pytest.raises(ValueError, match="degenerate channel 'a'"):
            zscore_fit([rec], ["a"])

    def test_stats_never_read_test_wells(self):
        # leak-free by construction: a NaN-filled held-out well cannot
        # contaminate statistics fit on the training wells alone
        train = [make_record(40, well="t1"), make_record(40, well="t2")]
        held_out = WellRecord("x", 0.1 * np.arange(5),
                              {"gr": np.full(5, np.nan), "rho": np.full(5, np.nan)})
        stats = zscore_fit(train, ["gr", "rho"])
        assert np.isfinite([stats.mean["gr"], stats.std["gr"],
                            stats.mean["rho"], stats.std["rho"]]).all()
        assert held_out.well_id == "x"


class TestWindow:
    def test_enumerated_starts(self):
        rec = make_record(210)
        batch = window(rec, ["gr"], ["rho"], length=130, stride=40)
        assert list(batch.starts) == [0, 40, 80]
        assert batch.inputs.shape == (3, 130, 1)

    def test_exact_length_gives_one_window(self):
        rec = make_record(130)
        assert len(window(rec, ["gr"], ["rho"], 130, 40)) == 1

    def test_short_series_gives_zero_windows(self):
        rec = make_record(129)
        batch = window(rec, ["gr"], ["rho"], 130, 40)
        assert len(batch) == 0
        assert batch.n_skipped == 1

    @pytest.mark.parametrize("seed", range(5))
    def test_coverage_when_stride_le_length(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(50, 400))
        length = int(rng.integers(5, 49))
        stride = int(rng.integers(1, length + 1))
        rec = make_record(n)
        batch = window(rec, ["gr"], ["rho"], length, stride)
        covered = np.zeros(n, dtype=bool)
        for start in batch.starts:
            covered[start:start + length] = True
        assert covered[: n - length + 1].all()

    def test_window_contents_match_source(self):
        rec = make_record(60)
        batch = window(rec, ["gr"], ["rho"], 20, 10)
        for i, start in enumerate(batch.starts):
            assert np.array_equal(batch.inputs[i, :, 0],
                                  rec.channels["gr"][start:start + 20])
            assert np.array_equal(batch.targets[i, :, 0],
                                  rec.channels["rho"][start:start + 20])


class TestLooSplits:
    @pytest.mark.parametrize("n_wells,expected", [(2, 2), (6, 6), (14, 14)])
    def test_fold_counts(self, n_wells, expected):
        records = [make_record(20, well=f"w{i:02d}") for i in range(n_wells)]
        folds = loo_splits(records)
        assert len(folds) == expected
        for train, test in folds:
            assert len(train) == n_wells - 1
            assert test.well_id not in {r.well_id for r in train}

    def test_ordered_by_well_id(self):
        records = [make_record(20, well=w) for w in ("b", "a", "c")]
        folds = loo_splits(records)
        assert [test.well_id for _, test in folds] == ["a", "b", "c"]

    def test_needs_two_wells(self):
        with pytest.raises(ValueError, match="at least 2 wells"):
            loo_splits([make_record(20)])


class TestSynth:
    def test_seeded_determinism(self):
        a = synth_generate(3, 2, 50, 3, 2)
        b = synth_generate(3, 2, 50, 3, 2)
        for ra, rb in zip(a, b):
            for name in ra.channels:
                assert np.array_equal(ra.channels[name], rb.channels[name])

    def test_zero_noise_matches_documented_formula(self):
        records = synth_generate(7, 1, 80, 3, 2, noise_std=0.0)
        rec = records[0]
        coeffs = synth_coefficients(7, 3, 2)
        x = rec.matrix(["in01", "in02", "in03"])
        expected = synth_targets(x, coeffs)
        actual = rec.matrix(["out01", "out02"])
        assert np.abs(expected - actual).max() <= 1e-12

    def test_depth_spacing_is_decimeters(self):
        (rec,) = synth_generate(1, 1, 40, 1, 1)
        assert np.allclose(np.diff(rec.depth), 0.1)

    def test_memoryless_fit_is_worse_than_the_noise_floor(self):
        # least-squares on current inputs alone cannot reach the generating
        # formula's noise floor: the lagged terms carry real signal
        records = synth_generate(11, 3, 500, 3, 2, noise_std=0.05)
        xs = np.vstack([r.matrix(["in01", "in02", "in03"]) for r in records])
        ys = np.vstack([r.matrix(["out01", "out02"]) for r in records])
        ys = (ys - ys.mean(axis=0)) / ys.std(axis=0)
        design = np.column_stack([np.ones(len(xs)), xs])
        coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
        resid = ys - design @ coef
        assert np.mean(resid**2) > 0.0025

    def test_count_validation(self):
        with pytest.raises(ValueError):
            synth_generate(0, 0, 10, 1, 1)


class TestMse:
    def test_perfect_prediction(self):
        assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_constant_offset(self):
        assert mse([2.0, 3.0], [1.0, 2.0]) == pytest.approx(1.0)

    def test_hand_example(self):
        assert mse([0.0, 0.0], [1.0, 3.0]) == pytest.approx(5.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="shapes differ"):
            mse([1.0], [1.0, 2.0])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        pred = rng.normal(size=40)
        truth = rng.normal(size=40)
        perm = rng.permutation(40)
        assert mse(pred, truth) == pytest.approx(mse(pred[perm], truth[perm]))
