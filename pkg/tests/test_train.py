import numpy as np
import pytest
import torch

from vimpute_seg.augment import AugmentConfig, StraussParams
from vimpute_seg.data_io import generate_phantoms
from vimpute_seg.model import ModelConfig, build, load_checkpoint, loss
from vimpute_seg.train import TrainConfig, fit, train_epoch, validate

MINI_MODEL = ModelConfig(variant="proposed", base_features=2, latent_dim=2,
                         down_factors=(2, 2, 2, 2))
NO_AUG = AugmentConfig(p_aug=0.0, enable_standard=False, enable_block=False,
                       enable_diffuse=False)
LIGHT_AUG = AugmentConfig(
    p_aug=0.5, enable_standard=True, enable_block=True, enable_diffuse=False,
    rotation_max_deg=5.0,
    strauss=StraussParams(beta=4.0 / (32 * 32), interaction_radius_px=8.0, mcmc_steps=100),
    disk_radius_range=(2.0, 6.0), gaussian_sigma_px=2.0,
)


def phantom_ds(n, seed=0):
    return generate_phantoms(n, (32, 32), 0.0, seed)


def adam_step_count(optimizer):
    steps = {int(s["step"]) for s in optimizer.state.values() if "step" in s}
    return steps.pop() if steps else 0


def test_epoch_step_count_matches_batch_arithmetic():
    ds = phantom_ds(24)
    model = build(MINI_MODEL, 0)
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    cfg = TrainConfig(batch_size=12, learning_rate=1e-3, max_epochs=1, patience=1, seed=0)
    train_epoch(model, ds, NO_AUG, cfg, np.random.default_rng(0), optimizer=opt,
                torch_gen=torch.Generator().manual_seed(0))
    assert adam_step_count(opt) == 2


def test_partial_final_batch_is_kept():
    ds = phantom_ds(13)
    model = build(MINI_MODEL, 0)
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    cfg = TrainConfig(batch_size=12, learning_rate=1e-3, max_epochs=1, patience=1, seed=0)
    train_epoch(model, ds, NO_AUG, cfg, np.random.default_rng(0), optimizer=opt,
                torch_gen=torch.Generator().manual_seed(0))
    assert adam_step_count(opt) == 2


def test_zero_learning_rate_leaves_params_bitwise_identical():
    ds = phantom_ds(6)
    model = build(MINI_MODEL, 1)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    cfg = TrainConfig(batch_size=3, learning_rate=0.0, max_epochs=1, patience=1, seed=0)
    train_epoch(model, ds, NO_AUG, cfg, np.random.default_rng(0),
                torch_gen=torch.Generator().manual_seed(0))
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k]), k


def test_train_epoch_deterministic_under_fixed_seed():
    ds = phantom_ds(8)
    cfg = TrainConfig(batch_size=4, learning_rate=1e-3, max_epochs=1, patience=1, seed=0)
    states = []
    for _ in range(2):
        model = build(MINI_MODEL, 3)
        train_epoch(model, ds, LIGHT_AUG, cfg, np.random.default_rng(11),
                    torch_gen=torch.Generator().manual_seed(11))
        states.append(model.state_dict())
    for k in states[0]:
        assert torch.equal(states[0][k], states[1][k]), k


def test_train_epoch_rejects_empty_dataset():
    from vimpute_seg.data_io import Dataset

    model = build(MINI_MODEL, 0)
    cfg = TrainConfig(batch_size=4, learning_rate=1e-3, max_epochs=1, patience=1, seed=0)
    with pytest.raises(ValueError):
        train_epoch(model, Dataset((), "train"), NO_AUG, cfg, np.random.default_rng(0))


def test_validate_is_deterministic_and_pure():
    ds = phantom_ds(5)
    model = build(MINI_MODEL, 0)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    a = validate(model, ds)
    b = validate(model, ds)
    assert a == b
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k])


def test_validate_matches_per_item_oracle():
    ds = phantom_ds(3)
    model = build(MINI_MODEL, 2)
    got = validate(model, ds, batch_size=2)
    per_item = []
    with torch.no_grad():
        model.eval()
        for s in ds:
            x = torch.from_numpy(s.image[None, None].astype(np.float32))
            y = torch.from_numpy(s.mask[None].astype(np.float32))
            per_item.append(float(loss(model(x, sample=False), y, variant="proposed")))
    assert got == pytest.approx(np.mean(per_item), rel=1e-6)


def test_validate_rejects_empty_set():
    from vimpute_seg.data_io import Dataset

    model = build(MINI_MODEL, 0)
    with pytest.raises(ValueError):
        validate(model, Dataset((), "val"))


def _tiny_fit(max_epochs, patience, validate_fn, tmp_path=None, seed=0):
    train_ds, val_ds = phantom_ds(4, seed=1), phantom_ds(2, seed=2)
    tcfg = TrainConfig(batch_size=4, learning_rate=1e-3, max_epochs=max_epochs,
                       patience=patience, seed=seed,
                       checkpoint_dir=str(tmp_path) if tmp_path else None)
    return fit(MINI_MODEL, tcfg, NO_AUG, train_ds, val_ds, validate_fn=validate_fn)


def test_constant_validation_stops_after_patience_plus_one():
    _, state = _tiny_fit(50, 3, validate_fn=lambda: 1.0)
    assert state.epoch == 4
    assert state.epochs_since_improvement == 3


def test_decreasing_validation_runs_all_epochs():
    vals = iter(float(v) for v in np.linspace(1.0, 0.1, 6))
    _, state = _tiny_fit(6, 3, validate_fn=lambda: next(vals))
    assert state.epoch == 6
    assert state.epochs_since_improvement == 0


def test_best_epoch_tracks_minimum_not_last():
    vals = iter([3.0, 2.0, 4.0, 5.0, 1.0])
    _, state = _tiny_fit(5, 20, validate_fn=lambda: next(vals))
    assert state.best_epoch == 5
    assert state.best_val_loss == 1.0
    assert state.best_val_loss == min(v for _, v in state.history)
    assert len(state.history) == state.epoch == 5


def test_fit_writes_history_and_checkpoints(tmp_path):
    best, state = _tiny_fit(3, 3, validate_fn=None, tmp_path=tmp_path)
    lines = (tmp_path / "history.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss"
    assert len(lines) == state.epoch + 1
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()
    reloaded, step = load_checkpoint(tmp_path / "best.ckpt")
    assert step == state.best_epoch
    val_ds = phantom_ds(2, seed=2)
    assert validate(reloaded, val_ds) == pytest.approx(state.best_val_loss, abs=1e-5)


def test_fit_bit_reproducible_with_augmentation():
    train_ds, val_ds = phantom_ds(6, seed=1), phantom_ds(2, seed=2)
    histories = []
    for _ in range(2):
        tcfg = TrainConfig(batch_size=3, learning_rate=1e-3, max_epochs=2, patience=5, seed=9)
        _, state = fit(MINI_MODEL, tcfg, LIGHT_AUG, train_ds, val_ds)
        histories.append(state.history)
    assert histories[0] == histories[1]


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
