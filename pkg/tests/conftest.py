import pytest

from simreal import config


def tiny_config(**corpus):
    """Small geometry and counts so rendering takes milliseconds."""
    cfg = config.default_config()
    cfg["corpus"].update({"n_synthetic": 6, "n_real": 20, "n_holdout_synthetic": 2,
                          "geometry": {"width": 48, "height": 48, "pixel_pitch": 2.5}})
    cfg["corpus"].update(corpus)
    cfg["split"] = {"k": 5, "eval_count": 2}
    cfg["grid"]["folds"] = [1, 2]
    cfg["grid"]["seeds"] = [0]
    cfg["training"].update({"epochs": 2, "steps_per_epoch": 3, "patch_size": 16, "stride": 16,
                            "batch": {"n_syn": 2, "n_real_unlabeled": 2, "n_real_labeled": 2}})
    config.validate(cfg)
    return cfg


@pytest.fixture
def tiny_cfg():
    return tiny_config()
