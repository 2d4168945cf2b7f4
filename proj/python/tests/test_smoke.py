import json
import math
import pathlib

import numpy as np
import pytest

import tcwae

CONFIGS = pathlib.Path(__file__).resolve().parents[2] / "configs"


def test_version():
    assert tcwae.__version__ == "0.1.0"


def test_sprites_grid():
    images, factors = tcwae.generate_sprites(["shape", "pos_x"], [3, 4], resolution=16)
    assert images.shape == (12, 16, 16, 1)
    assert factors.shape == (12, 2)
    assert set(np.unique(images)) <= {0.0, 1.0}
    assert factors[-1].tolist() == [2, 3]


def test_telescoping_identity():
    rng = np.random.default_rng(0)
    means = rng.normal(size=(32, 4))
    log_vars = rng.uniform(-2, 0, size=(32, 4))
    codes = means + np.exp(0.5 * log_vars) * rng.normal(size=(32, 4))
    terms = tcwae.mws_terms(codes, means, log_vars, 1000)
    log_q = -0.5 * (np.log(2 * np.pi) + log_vars + (codes - means) ** 2 / np.exp(log_vars)).sum(1)
    log_p = -0.5 * (np.log(2 * np.pi) + codes**2).sum(1)
    total = terms["index_code_mi"] + terms["tc"] + terms["dimwise_kl"]
    assert total == pytest.approx(np.mean(log_q - log_p), rel=1e-9)


def test_mws_log_qz_single_datum():
    z = np.array([[0.3, -0.2]])
    value = tcwae.mws_log_qz(z, np.zeros((1, 2)), np.zeros((1, 2)), 1)
    assert value[0] == pytest.approx(-math.log(2 * math.pi) - 0.5 * (0.09 + 0.04))


def test_mmd_separates_shift():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 2))
    y = rng.normal(size=(300, 2))
    assert abs(tcwae.mmd_unbiased(x, y)) < 0.02
    assert tcwae.mmd_unbiased(x, y + 3.0) > 0.1


def test_density_ratio_kl():
    logits = np.array([[1.0, 0.0], [3.0, 1.0]])
    assert tcwae.density_ratio_kl(logits) == pytest.approx(1.5)


def test_metrics_on_perfect_code():
    _, factors = tcwae.generate_sprites(["shape", "pos_x", "pos_y"], [3, 8, 8], resolution=16)
    latents = factors.astype(float)
    assert tcwae.mig(latents, factors, [3, 8, 8]) == pytest.approx(1.0)
    assert tcwae.sap_score(latents, factors, [3, 8, 8]) == pytest.approx(1.0)


def test_bad_config_raises(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"objective": "nope", "seeds": [1]}))
    with pytest.raises(ValueError, match="objective"):
        tcwae.train(str(cfg))


def test_train_and_evaluate(tmp_path, monkeypatch):
    cfg = json.loads((CONFIGS / "desk.json").read_text())
    cfg.update(
        name="smoke",
        architecture="reduced",
        seeds=[3],
        batch_size=16,
        iterations=150,
        beta=2,
        gamma=1,
        latent_dim=3,
        dataset={
            "factors": ["shape", "orientation", "pos_x", "pos_y"],
            "cardinalities": [3, 4, 4, 4],
            "resolution": 16,
            "seed": 0,
        },
    )
    cfg.pop("sweep", None)
    path = tmp_path / "smoke.json"
    path.write_text(json.dumps(cfg))
    monkeypatch.setenv("TCWAE_OUT", str(tmp_path / "out"))
    (run,) = tcwae.train(str(path))
    scores = tcwae.evaluate(run)
    assert set(scores) == {"mse", "mig", "factor_vae", "sap"}
    assert all(math.isfinite(v) for v in scores.values())
    assert 0.0 <= scores["mig"] <= 1.0
