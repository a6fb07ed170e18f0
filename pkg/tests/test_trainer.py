import math

import numpy as np
import pytest
import torch

from conftest import random_sequence
from stfall.config import ConfigError, load_config
from stfall.ingest import InputError
from stfall.nets import build_family
from stfall.trainer import (EPS, PreconditionError, TrainConfig, adversarial_losses, generator_objective,
                            load_models, reconstruction_loss, train)

TINY = dict(width=0.25, batch_size=5, max_epochs=1, seed=0)


def t(*xs):
    return torch.tensor(xs, dtype=torch.float64)


# -- losses ---------------------------------------------------------------------


def test_reconstruction_identity_is_zero():
    x = torch.randn(3, 4, 5)
    assert reconstruction_loss(x, x.clone()).item() == 0


def test_reconstruction_single_element():
    x = torch.zeros(1, 4, 4)
    y = x.clone()
    y[0, 1, 2] = 0.5
    assert reconstruction_loss(x, y).item() == 0.25


def test_reconstruction_batch_mean():
    x = torch.zeros(2, 3)
    y = torch.tensor([[1.0, 0, 0], [1.0, 1.0, 1.0]])
    assert reconstruction_loss(x, y).item() == 2.0


def test_reconstruction_shape_mismatch():
    with pytest.raises(InputError):
        reconstruction_loss(torch.zeros(2, 3), torch.zeros(2, 4))


def test_perfect_discriminator_limit():
    disc, _ = adversarial_losses(t(1 - EPS), t(EPS))
    assert disc.item() == pytest.approx(0, abs=1e-6)


def test_half_probabilities():
    disc, gen = adversarial_losses(t(0.5, 0.5), t(0.5, 0.5))
    assert disc.item() == pytest.approx(2 * math.log(2), rel=1e-12)
    assert gen.item() == pytest.approx(math.log(2), rel=1e-12)
    assert disc.item() == pytest.approx(1.3863, abs=1e-4)


def test_generator_wins_limit():
    _, gen = adversarial_losses(t(0.5), t(1 - EPS))
    assert gen.item() == pytest.approx(0, abs=1e-6)


def test_clipping_keeps_losses_finite():
    disc, gen = adversarial_losses(t(0.0), t(1.0))
    assert math.isfinite(disc.item()) and math.isfinite(gen.item())


def test_saturating_form():
    _, gen = adversarial_losses(t(0.5), t(0.25), form="saturating")
    assert gen.item() == pytest.approx(math.log(0.75), rel=1e-12)


# -- training bookkeeping -----------------------------------------------------------


def ten_windows():
    return [random_sequence(17, seed=1)]  # 17 - 8 + 1 = 10 windows


def test_one_epoch_two_batches():
    seen = []
    _, _, hist = train(ten_windows(), TrainConfig(**TINY), on_batch=seen.append)
    assert len(hist.records) == 1
    assert hist.disc_steps == 2 and hist.gen_steps == 2
    assert len(seen) == 2


def test_same_config_same_history():
    cfg = TrainConfig(**{**TINY, "max_epochs": 2})
    a = train(ten_windows(), cfg)[2]
    b = train(ten_windows(), cfg)[2]
    for col in ("recon_loss", "gen_adv_loss", "disc_loss", "d_real", "d_fake"):
        assert a.column(col) == b.column(col)


def test_history_csv_is_byte_identical(tmp_path):
    cfg = TrainConfig(**{**TINY, "checkpoint_every": 1})
    train(ten_windows(), cfg, out_dir=tmp_path / "a")
    train(ten_windows(), cfg, out_dir=tmp_path / "b")
    assert (tmp_path / "a/history.csv").read_bytes() == (tmp_path / "b/history.csv").read_bytes()
    header = (tmp_path / "a/history.csv").read_text().splitlines()[0]
    assert header == "epoch,recon_loss,gen_adv_loss,disc_loss,d_real,d_fake"
    assert (tmp_path / "a/checkpoints/epoch_0001.pt").is_file()


def test_saved_models_reload(tmp_path):
    gen, disc, _ = train(ten_windows(), TrainConfig(**TINY), out_dir=tmp_path)
    g2, d2, cfg = load_models(tmp_path)
    x = random_sequence(8, seed=5).frames[None]
    assert np.array_equal(gen.predict(x), g2.predict(x))
    assert np.array_equal(disc.predict(x), d2.predict(x))
    assert cfg == TrainConfig(**TINY)


def test_frame_families_train():
    seqs = [random_sequence(6, seed=2)]
    for family in ("dae-an", "cae-an"):
        _, _, hist = train(seqs, TrainConfig(family=family, **{**TINY, "batch_size": 3}))
        assert hist.gen_steps == 2


# -- guards -------------------------------------------------------------------------


def test_fall_frames_rejected():
    labels = np.zeros(17, dtype=np.int64)
    labels[9] = 1
    with pytest.raises(PreconditionError):
        train([random_sequence(17, labels=labels)], TrainConfig(**TINY))


def test_empty_data_rejected():
    with pytest.raises(InputError):
        train([], TrainConfig(**TINY))


def test_never_consumes_fall_frames():
    # the guard runs before any batch: no step is taken on labelled data
    labels = np.zeros(17, dtype=np.int64)
    labels[-1] = 1
    seen = []
    with pytest.raises(PreconditionError):
        train([random_sequence(17), random_sequence(17, labels=labels)], TrainConfig(**TINY),
              on_batch=seen.append)
    assert seen == []


# -- loss composition ---------------------------------------------------------------


def test_stepped_loss_is_composition_of_logged_terms():
    seen = []
    train(ten_windows(), TrainConfig(**{**TINY, "lam": 0.7, "max_epochs": 2}), on_batch=seen.append)
    assert seen
    for s in seen:
        recomposed = s["recon_loss"] + s["lam"] * s["gen_adv_loss"]
        assert abs(s["gen_loss"] - recomposed) <= 1e-6 * abs(s["gen_loss"])


def test_lambda_zero_gradient_is_plain_autoencoder_gradient():
    gen, disc = build_family("3dcae-an", seed=4, width=0.25)
    gen.module.train()
    x = torch.from_numpy(np.stack([random_sequence(8, seed=s).frames for s in (1, 2)]))
    params = list(gen.module.parameters())
    total, _, _, _ = generator_objective(gen, disc, x, lam=0.0)
    g_adv = torch.autograd.grad(total, params)
    g_ae = torch.autograd.grad(reconstruction_loss(x, gen(x)), params)
    for a, b in zip(g_adv, g_ae):
        scale = b.abs().max().item()
        assert (a - b).abs().max().item() <= 1e-6 * max(scale, 1e-12)


def test_discriminator_only_steps_decrease_loss():
    gen, disc = build_family("3dcae-an", seed=1, width=0.25)
    gen.module.eval()
    disc.module.train()
    x = torch.from_numpy(np.stack([random_sequence(8, seed=s).frames for s in range(4)]))
    with torch.no_grad():
        recon = gen(x)
    opt = torch.optim.SGD(disc.module.parameters(), lr=2e-4)
    losses = []
    for _ in range(20):
        loss, _ = adversarial_losses(disc(x), disc(recon))
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    assert all(b < a for a, b in zip(losses, losses[1:]))


# -- config -------------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(family="gan")
    with pytest.raises(ValueError):
        TrainConfig(lam=-1)
    with pytest.raises(ValueError):
        TrainConfig(adversarial_form="hinge")


def test_config_hash_changes_with_fields():
    assert TrainConfig().config_hash() == TrainConfig().config_hash()
    assert TrainConfig().config_hash() != TrainConfig(seed=1).config_hash()


def test_config_file_parse(tmp_path, monkeypatch):
    monkeypatch.delenv("STFALL_SEED", raising=False)
    p = tmp_path / "run.cfg"
    p.write_text("[train]\nfamily = cae-an\nlambda = 0.5\nmax_epochs = 3\n")
    cfg = load_config(p, "train")
    assert (cfg.family, cfg.lam, cfg.max_epochs) == ("cae-an", 0.5, 3)


def test_config_unknown_key(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("[train]\nlearning_rate = 0.1\n")
    with pytest.raises(ConfigError, match="learning_rate"):
        load_config(p, "train")


def test_config_bad_value(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("[train]\nmax_epochs = many\n")
    with pytest.raises(ConfigError, match="max_epochs"):
        load_config(p, "train")


def test_config_unknown_section(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("[optimizer]\nlr = 1\n")
    with pytest.raises(ConfigError, match="optimizer"):
        load_config(p, "train")


def test_env_seed_overrides(tmp_path, monkeypatch):
    p = tmp_path / "run.cfg"
    p.write_text("[train]\nseed = 3\n")
    monkeypatch.setenv("STFALL_SEED", "11")
    assert load_config(p, "train").seed == 11
