"""
Tests for the price_sources package - CSV paths and synth: specs
"""

import hashlib
from unittest.mock import patch

import pytest


class TestSynthSpec:
    """Test parsing of synth: spec strings"""

    def test_factor_spec_defaults(self):
        """Test that f defaults to 3 and the seed to the master seed"""
        from price_sources import parse_synth_spec
        spec = parse_synth_spec("synth:factor:n=395,T=2500", default_seed=11)
        assert (spec.n, spec.n_obs, spec.seed) == (395, 2500, 11)
        assert spec.model.kind == "factor"
        assert spec.model.factors == 3

    def test_uniform_spec_with_rho_and_seed(self):
        """Test the uniform model with explicit rho and seed"""
        from price_sources import parse_synth_spec
        spec = parse_synth_spec("synth:uniform:n=2,T=10000,rho=0.9,seed=7")
        assert spec.model.rho == 0.9
        assert spec.seed == 7

    @patch.dict('os.environ', {'MARGIN_MASTER_SEED': '99'})
    def test_seed_falls_back_to_environment(self):
        """Test that a spec without seed uses MARGIN_MASTER_SEED"""
        from price_sources import parse_synth_spec
        assert parse_synth_spec("synth:factor:n=4,T=20").seed == 99

    @pytest.mark.parametrize("text", [
        "synth:gaussian:n=4,T=20",
        "synth:factor:n=4",
        "synth:factor:n=4,T=20,colour=red",
        "synth:factor:n=four,T=20",
        "synth:factor",
    ])
    def test_malformed_specs_raise(self, text):
        """Test that unknown models, keys and missing sizes are rejected"""
        from price_sources import parse_synth_spec
        with pytest.raises(ValueError):
            parse_synth_spec(text)

    def test_canonical_form_materializes_defaults(self):
        """Test that the canonical string parses back to the same spec"""
        from price_sources import parse_synth_spec
        spec = parse_synth_spec("synth:factor:n=4,T=20,seed=5")
        assert spec.canonical() == "synth:factor:n=4,T=20,f=3,seed=5,vol=0.02"
        assert parse_synth_spec(spec.canonical()) == spec

    def test_is_synth_spec(self):
        """Test prefix detection"""
        from price_sources import is_synth_spec
        assert is_synth_spec("synth:factor:n=4,T=20")
        assert not is_synth_spec("prices/synth.csv")


class TestLoadPriceSource:
    """Test source dispatch and digests"""

    def test_synth_source_shape(self):
        """Test that a synth spec yields an n-asset, T-row matrix"""
        from price_sources import load_price_source
        prices = load_price_source("synth:factor:n=5,T=30,seed=1")
        assert prices.prices.shape == (30, 5)

    def test_synth_source_is_deterministic(self):
        """Test that equal specs give equal prices"""
        from price_sources import load_price_source
        a = load_price_source("synth:uniform:n=3,T=40,rho=0.2,seed=4")
        b = load_price_source("synth:uniform:n=3,T=40,rho=0.2,seed=4")
        assert (a.prices == b.prices).all()

    @patch('price_sources.load_csv_source')
    def test_paths_go_to_csv_loader(self, mock_csv):
        """Test that non-synth values are treated as CSV paths"""
        from price_sources import load_price_source
        load_price_source("data/prices.csv")
        mock_csv.assert_called_once_with("data/prices.csv")

    def test_csv_digest_is_sha256_of_bytes(self, tmp_path):
        """Test that a CSV digest hashes the file contents"""
        from price_sources import source_digest
        path = tmp_path / "p.csv"
        path.write_bytes(b"date,A\n2020-01-01,1\n2020-01-02,2\n")
        assert source_digest(str(path)) == hashlib.sha256(path.read_bytes()).hexdigest()

    def test_synth_digest_ignores_spelling(self):
        """Test that equivalent spellings of a spec share a digest"""
        from price_sources import source_digest
        assert source_digest("synth:factor:n=4,T=20,seed=5") == source_digest("synth:factor:T=20,n=4,f=3,seed=5")

    def test_missing_csv_digest_is_data_error(self, tmp_path):
        """Test that hashing a missing file raises PriceDataError"""
        from market_data import PriceDataError
        from price_sources import source_digest
        with pytest.raises(PriceDataError):
            source_digest(str(tmp_path / "missing.csv"))
