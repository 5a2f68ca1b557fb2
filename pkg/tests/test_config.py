from pathlib import Path

import pytest

from ctrbid.config import ConfigError, build_config, read_config_file


def write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


def test_file_values_and_lists(tmp_path):
    settings, schema = read_config_file(
        write(
            tmp_path,
            "[paths]\nimpressions = data/imps.csv\nout = /abs/out\n"
            "[campaign]\ncampaign_id = IO-7 \nrequested_scale = 5000\n"
            "[bidder]\ntarget_cpc = 1.10\noptimization_fraction = 0.9, 0.8\n"
            "[ingest]\ngeo_allowlist = US,\n  CA\nwindow_start = 2021-03-01\n"
            "[schema]\nis_click = clicked\n",
        )
    )
    cfg = build_config(settings, schema)
    assert cfg.impressions == tmp_path / "data" / "imps.csv"
    assert cfg.out_dir == Path("/abs/out")
    assert cfg.campaign_id == "IO-7"
    assert cfg.optimization_fractions == (0.9, 0.8)
    assert cfg.geo_allowlist == ("US", "CA")
    assert cfg.window_start.tzinfo is not None
    assert cfg.schema == {"is_click": "clicked"}
    assert [p.optimization_fraction for p in cfg.policies()] == [0.9, 0.8]
    assert cfg.merge_config().network_quota == 1500


@pytest.mark.parametrize(
    "text",
    [
        "[bidder]\ntarget_cpk = 1\n",
        "[schema]\nnot_a_field = x\n",
        "no section header\n",
    ],
)
def test_bad_files_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        read_config_file(write(tmp_path, text))


@pytest.mark.parametrize(
    "settings",
    [
        {"target_cpc_usd": "abc"},
        {"threads": -1},
        {"weeks": 0},
        {"optimization_fractions": ""},
        {"window_start": "2021-03-02", "window_end": "2021-03-01"},
        {"outlier_metric": "cost"},
    ],
)
def test_bad_values_rejected(settings):
    with pytest.raises(ConfigError):
        build_config(settings)


def test_missing_required_settings():
    cfg = build_config({})
    with pytest.raises(ConfigError):
        cfg.policies()
    with pytest.raises(ConfigError):
        cfg.merge_config()
    with pytest.raises(ConfigError):
        cfg.require_inputs("impressions")


def test_digest_ignores_out_dir_only():
    a = build_config({"out_dir": "a", "target_cpc_usd": 1.0})
    b = build_config({"out_dir": "b", "target_cpc_usd": 1.0})
    c = build_config({"out_dir": "a", "target_cpc_usd": 1.1})
    assert a.digest() == b.digest() != c.digest()
