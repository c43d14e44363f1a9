import json

import pytest

from sglidar import config as cfgmod
from sglidar.errors import ValidationError


class TestRoundTrip:
    def test_default_config_round_trips(self):
        cfg = cfgmod.RunConfig()
        text = cfgmod.config_text(cfg)
        back = cfgmod.from_dict(json.loads(text))
        assert cfgmod.config_text(back) == text

    def test_overrides_through_load(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 5, "train": {"steps": 123}}))
        cfg = cfgmod.load_config(path, {"train.lr": 1e-3, "seed": 9})
        assert cfg.seed == 9
        assert cfg.train.steps == 123
        assert cfg.train.lr == 1e-3

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError, match="unknown"):
            cfgmod.from_dict({"seeed": 1})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ValidationError, match="train"):
            cfgmod.from_dict({"train": {"stepz": 10}})

    def test_sensor_preset_resolution(self):
        cfg = cfgmod.from_dict(cfgmod.resolve_preset({"sensor_preset": "kitti"}))
        assert cfg.sensor.width == 1024 and cfg.sensor.height == 64

    def test_grid_divisibility_checked(self):
        with pytest.raises(ValidationError, match="divisible"):
            cfgmod.from_dict(
                {
                    "sensor": {
                        "width": 250, "height": 30, "fov_up_deg": 3.0,
                        "fov_down_deg": -25.0, "r_min": 1.0, "r_max": 50.0,
                    }
                }
            )


class TestDigest:
    def test_digest_tracks_model_subset_only(self):
        a = cfgmod.RunConfig()
        b = cfgmod.from_dict({"train": {"steps": 999}})
        c = cfgmod.from_dict({"denoiser": {"num_classes": 8, "base_channels": 16}})
        assert cfgmod.core_digest(a) == cfgmod.core_digest(b)
        assert cfgmod.core_digest(a) != cfgmod.core_digest(c)

    def test_defaults_match_reported_settings(self):
        cfg = cfgmod.RunConfig()
        # inference defaults: 1000 training steps, 50 ddim steps, scale 2
        assert cfg.schedule.T == 1000
        assert cfg.sampler.ddim_steps == 50
        assert cfg.sampler.guidance_scale == 2.0
        assert cfg.train.p_uncon == 0.2
        assert cfg.translation_fraction == 0.5
