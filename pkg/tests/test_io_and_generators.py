import numpy as np
import pytest

from amcsim.config import (
    converters_from,
    device_params_from,
    format_config,
    load_settings,
    parse_config,
    validate_keys,
    write_verify_from,
)
from amcsim.generators import generate_matrix, gram, regression_problem, wishart
from amcsim.mapping import make_scheme, quantize_matrix
from amcsim.matrix_io import (
    dump_buffer,
    load_buffer,
    load_mapped_matrix,
    read_matrix,
    save_mapped_matrix,
    write_matrix,
)
from amcsim.mnist import (
    load_idx_images,
    load_idx_labels,
    save_idx_images,
    save_idx_labels,
)


class TestGenerators:
    def test_wishart_symmetric_psd(self):
        w = wishart(2, np.random.default_rng(4))
        assert np.array_equal(w, w.T)
        assert np.linalg.eigvalsh(w).min() >= -1e-12

    def test_gram_unit_diagonal_exact(self, rng):
        g = gram(16, rng)
        assert np.array_equal(g, g.T)
        assert np.all(np.diag(g) == 1.0)
        assert np.abs(g).max() <= 1.0 + 1e-12

    def test_regression_problem_composes(self, rng):
        design, obs, coef = regression_problem(32, 4, rng, noise=0.0)
        assert design.shape == (32, 4)
        assert obs == pytest.approx(design @ coef)

    def test_determinism(self):
        a = generate_matrix("wishart", (16,), seed=9)
        b = generate_matrix("wishart", (16,), seed=9)
        assert np.array_equal(a, b)

    def test_dispatch_and_validation(self):
        assert generate_matrix("gram", (8,), 1).shape == (8, 8)
        assert generate_matrix("regression", (12, 3), 1).shape == (12, 3)
        with pytest.raises(ValueError):
            generate_matrix("nonsense", (4,), 1)
        with pytest.raises(ValueError):
            generate_matrix("wishart", (0,), 1)
        with pytest.raises(ValueError):
            generate_matrix("regression", (4,), 1)


class TestMatrixText:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        m = rng.standard_normal((7, 3)) * 1e-6
        path = tmp_path / "m.mat"
        write_matrix(path, m)
        assert np.array_equal(read_matrix(path), m)
        header = path.read_text().splitlines()[0]
        assert header == "7 3"

    def test_vector_written_as_column(self, tmp_path):
        write_matrix(tmp_path / "v.mat", np.arange(4.0))
        assert read_matrix(tmp_path / "v.mat").shape == (4, 1)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "bad.mat"
        p.write_text("not a header\n1 2 3\n")
        with pytest.raises(ValueError):
            read_matrix(p)

    def test_wrong_count(self, tmp_path):
        p = tmp_path / "bad.mat"
        p.write_text("2 2\n1.0 2.0 3.0\n")
        with pytest.raises(ValueError):
            read_matrix(p)


class TestBufferDump:
    def test_matrix_round_trip(self, tmp_path, rng):
        m = rng.standard_normal((3, 5))
        dump_buffer(tmp_path / "b.csv", "acts", m)
        name, back = load_buffer(tmp_path / "b.csv")
        assert name == "acts"
        assert np.array_equal(back, m)
        assert (tmp_path / "b.csv").read_text().splitlines()[0] == "acts,3,5"

    def test_vector_round_trip(self, tmp_path):
        v = np.array([1, -2, 3], dtype=np.int64)
        dump_buffer(tmp_path / "v.csv", "codes", v)
        name, back = load_buffer(tmp_path / "v.csv")
        assert back.shape == (3,)
        assert np.array_equal(back, v)


class TestMappedMatrixFiles:
    def test_round_trip(self, tmp_path, params, rng):
        scheme = make_scheme(params, a_max=2.0, n_slices=2)
        mm = quantize_matrix(rng.uniform(-2, 2, (6, 4)), scheme)
        save_mapped_matrix(tmp_path / "w", mm)
        back = load_mapped_matrix(tmp_path / "w")
        assert back.scheme == mm.scheme
        for a, b in zip(back.level_planes, mm.level_planes):
            assert np.array_equal(a, b)


class TestConfig:
    def test_parse_types_and_comments(self):
        cfg = parse_config("""
            # comment
            device.g_min = 2e-6
            wv.max_pulses = 150   # inline
            conv.v_ref = 1.5
            device.rng_seed = 7
        """)
        assert cfg["device.g_min"] == 2e-6
        assert cfg["wv.max_pulses"] == 150
        assert isinstance(cfg["wv.max_pulses"], int)

    def test_duplicate_key_rejected(self):
        with pytest.raises(ValueError):
            parse_config("a = 1\na = 2\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ValueError):
            parse_config("just words\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            validate_keys({"device.bogus": 1})
        with pytest.raises(ValueError):
            validate_keys({"mystery": 1})

    def test_builders(self):
        cfg = {"device.g_min": 2e-6, "wv.max_pulses": 99, "conv.adc_bits": 10}
        params = device_params_from(cfg)
        assert params.g_min == 2e-6
        assert write_verify_from(cfg).max_pulses == 99
        assert converters_from(cfg).adc_bits == 10

    def test_load_settings(self, tmp_path):
        p = tmp_path / "s.cfg"
        p.write_text("device.sigma_read = 0.0\nwv.tol_fraction = 0.5\n")
        params, wv, conv = load_settings(p)
        assert params.sigma_read == 0.0
        assert wv.tol_fraction == 0.5
        assert conv.adc_bits == 8

    def test_format_config_deterministic(self):
        assert format_config({"b": 2, "a": 1}) == "a = 1\nb = 2"


class TestIdx:
    def test_image_round_trip_gzip(self, tmp_path, rng):
        imgs = rng.integers(0, 256, (5, 28, 28)).astype(np.uint8)
        p = tmp_path / "im.idx.gz"
        save_idx_images(p, imgs)
        assert np.array_equal(load_idx_images(p), imgs)

    def test_label_round_trip_plain(self, tmp_path, rng):
        labs = rng.integers(0, 10, 7).astype(np.uint8)
        p = tmp_path / "lab.idx"
        save_idx_labels(p, labs)
        assert np.array_equal(load_idx_labels(p), labs)

    def test_magic_validation(self, tmp_path):
        p = tmp_path / "bad.idx"
        p.write_bytes(b"\x00\x00\x00\x99" + b"\x00" * 12)
        with pytest.raises(ValueError, match="magic"):
            load_idx_images(p)
        with pytest.raises(ValueError, match="magic"):
            load_idx_labels(p)

    def test_truncation_detected(self, tmp_path):
        import struct
        p = tmp_path / "short.idx"
        p.write_bytes(struct.pack(">IIII", 0x803, 10, 28, 28) + b"\x00" * 50)
        with pytest.raises(ValueError, match="truncated"):
            load_idx_images(p)

    def test_committed_fixture_loads(self):
        from amcsim.experiments import default_asset
        imgs = load_idx_images(default_asset("digits_test_images.idx.gz"))
        labs = load_idx_labels(default_asset("digits_test_labels.idx.gz"))
        assert imgs.shape == (1000, 28, 28)
        assert labs.shape == (1000,)
        assert set(np.unique(labs)) <= set(range(10))
