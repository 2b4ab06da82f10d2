from dataclasses import replace

import numpy as np
import pytest

from hazeforge import checkpoint
from hazeforge import tensor as T
from hazeforge import trainer as tr
from hazeforge.losses import LossWeights, compose_paired, compose_unpaired, lsgan_g_loss, paired_l1_loss
from hazeforge.matting import LaplacianCache
from hazeforge.networks import ArchConfig, build_nets, image_to_tensor
from _toy import TOY, toy_config


@pytest.fixture(scope="module")
def toy_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("mlap")


@pytest.fixture(scope="module")
def toy_data(toy_cache):
    return tr.TrainingData.load(tr.DatasetLayout(TOY), 32, LaplacianCache(toy_cache))


def scalar_param(value, grad):
    t = T.Tensor(np.array([value], dtype=np.float32), requires_grad=True)
    t.grad = np.array([grad], dtype=np.float32).reshape(t.shape)
    return [("theta", t)]


def test_train_config_validation():
    for kw in ({"lr": 0}, {"adam_beta1": 1.0}, {"adam_beta2": -0.1}, {"batch_size": 0}, {"photorealism_mode": "fwd"}):
        with pytest.raises(tr.ConfigError):
            tr.TrainConfig(**kw)
    assert tr.TrainConfig().lr == 2e-5 and tr.TrainConfig().adam_beta1 == 0.9


def test_adam_first_step_is_lr():
    params = scalar_param(0.0, 1.0)
    state = tr.OptimizerState.for_params(params)
    tr.adam_step(params, state, 1e-3)
    assert abs(params[0][1].data.item() + 1e-3) < 1e-6
    assert state.step == 1
    assert np.all(params[0][1].grad == 0)


def test_adam_zero_grad_leaves_params():
    params = scalar_param(0.7, 0.0)
    state = tr.OptimizerState.for_params(params)
    for _ in range(3):
        tr.adam_step(params, state, 0.1)
    assert params[0][1].data.item() == np.float32(0.7)


def test_adam_descends_quadratic():
    params = scalar_param(1.0, 0.0)
    state = tr.OptimizerState.for_params(params)
    t = params[0][1]
    for _ in range(50):
        T.backward(T.sum(T.square(t)))
        tr.adam_step(params, state, 0.1)
    assert abs(t.data.item()) < 0.5


def test_adam_missing_grad():
    t = T.Tensor(np.zeros(1), requires_grad=True)
    with pytest.raises(T.ContractError):
        tr.adam_step([("w", t)], tr.OptimizerState.for_params([("w", t)]), 0.1)


def test_optimizer_state_shapes():
    nets = build_nets(ArchConfig(4, 1, 8), 0)
    st = tr.OptimizerState.for_params(nets.G_Y)
    assert all(st.m[n].shape == t.shape and st.v[n].shape == t.shape for n, t in nets.G_Y)


def test_lr_schedule():
    cfg = tr.TrainConfig(epochs_constant=200, epochs_decay=200)
    assert tr.lr_schedule(cfg, 0) == 2e-5
    assert tr.lr_schedule(cfg, 199) == 2e-5
    assert tr.lr_schedule(cfg, 300) == pytest.approx(1e-5)
    assert tr.lr_schedule(cfg, 400) == 0.0
    assert tr.lr_schedule(cfg, 1000) == 0.0
    vals = [tr.lr_schedule(cfg, e) for e in range(0, 420)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert tr.lr_schedule(tr.TrainConfig(epochs_constant=2, epochs_decay=0), 2) == 0.0


def _batch(data, k=0):
    x = image_to_tensor(data.unpaired_x[k][1])
    y = image_to_tensor(data.unpaired_y[k][1])
    return x, y, [data.lap_x[k]], [data.lap_y[k]]


def _fresh(seed=0):
    nets = build_nets(ArchConfig(), seed)
    for _, net in nets.items():
        net.zero_grad()
    return nets, tr.new_optimizers(nets, tr.TrainConfig())


def test_adversarial_grads_vanish_at_optimum(rng):
    # D outputs exactly 1 everywhere: zero weights, last bias 1
    nets, _ = _fresh()
    for _, t in nets.D_Y:
        t.data[...] = 0
    nets.D_Y["conv5.bias"].data[...] = 1.0
    x = T.Tensor(rng.uniform(-1, 1, (1, 3, 32, 32)).astype(np.float32))
    with nets.D_Y.frozen():
        loss = lsgan_g_loss(nets.D_Y(nets.G_Y(x)))
        assert loss.item() == 0.0
        T.backward(loss)
    assert all(np.all(t.grad == 0) for t in nets.G_Y.tensors())


def test_paired_joint_optimum_is_zero():
    y = T.Tensor(np.random.default_rng(0).uniform(-1, 1, (1, 3, 8, 8)))
    adv = lsgan_g_loss(T.Tensor(np.ones((1, 1, 2, 2))))
    assert compose_paired(adv, paired_l1_loss(y, y), LossWeights()).item() == 0.0


def _watch_updates(monkeypatch, nets):
    """Record, for every adam_step, which networks changed."""
    calls = []
    orig = tr.adam_step

    def wrapped(params, state, lr_now):
        before = {n: net.digest() for n, net in nets.items()}
        orig(params, state, lr_now)
        after = {n: net.digest() for n, net in nets.items()}
        changed = [n for n in before if before[n] != after[n]]
        calls.append((changed, all(np.all(t.grad == 0) for t in params.tensors())))

    monkeypatch.setattr(tr, "adam_step", wrapped)
    return calls


def test_unpaired_step_update_isolation(toy_data, monkeypatch):
    nets, opt = _fresh()
    calls = _watch_updates(monkeypatch, nets)
    w = LossWeights(lambda2=0.002)
    rep = tr.train_step_unpaired(*_batch(toy_data), nets, opt, w, 2e-4, "both", 1)
    assert [c[0] for c in calls] == [["D_Y"], ["D_X"], ["G_Y"], ["G_X"]]
    assert all(c[1] for c in calls)
    for _, net in nets.items():
        assert all(np.all(t.grad == 0) for t in net.tensors())
    for d in ("fwd", "bwd"):
        total = compose_unpaired(rep[f"{d}.adv_G"], rep[f"{d}.cycle"], rep[f"{d}.photorealism"], w)
        assert abs(rep[f"{d}.total"] - total) < 1e-5
        assert rep[f"{d}.paired_L1"] == 0.0
        assert rep[f"{d}.photorealism"] > 0


def test_paired_step_update_isolation(toy_data, monkeypatch):
    nets, opt = _fresh()
    calls = _watch_updates(monkeypatch, nets)
    _, hazy, clean = toy_data.paired[0]
    w = LossWeights()
    rep = tr.train_step_paired(image_to_tensor(hazy), image_to_tensor(clean), nets, opt, w, 2e-4, True, 2)
    assert [c[0] for c in calls] == [["D_Y"], ["G_Y"], ["D_X"], ["G_X"]]
    assert all(c[1] for c in calls)
    for d in ("fwd", "bwd"):
        assert abs(rep[f"{d}.total"] - compose_paired(rep[f"{d}.adv_G"], rep[f"{d}.paired_L1"], w)) < 1e-5
        assert rep[f"{d}.cycle"] == 0.0


def test_paired_backward_flag(toy_data, monkeypatch):
    nets, opt = _fresh()
    calls = _watch_updates(monkeypatch, nets)
    _, hazy, clean = toy_data.paired[0]
    rep = tr.train_step_paired(image_to_tensor(hazy), image_to_tensor(clean), nets, opt, LossWeights(), 2e-4, False)
    assert [c[0] for c in calls] == [["D_Y"], ["G_Y"]]
    assert rep["bwd.total"] == 0.0 and rep["bwd.adv_D"] == 0.0


def test_lambda4_zero_drops_l1_only(toy_data):
    _, hazy, clean = toy_data.paired[0]
    reps = []
    for l4 in (0.1, 0.0):
        nets, opt = _fresh()
        reps.append(tr.train_step_paired(image_to_tensor(hazy), image_to_tensor(clean), nets, opt,
                                         LossWeights(lambda4=l4), 2e-4, False))
    assert reps[0]["fwd.adv_G"] == reps[1]["fwd.adv_G"]
    assert reps[1]["fwd.total"] == pytest.approx(9.9 * reps[1]["fwd.adv_G"], rel=1e-9)


def test_backward_only_photorealism(toy_data):
    nets, opt = _fresh()
    rep = tr.train_step_unpaired(*_batch(toy_data), nets, opt, LossWeights(), 2e-4, "backward_only")
    assert rep["fwd.photorealism"] == 0.0 and rep["bwd.photorealism"] > 0


def test_unpaired_step_deterministic(toy_data, tmp_path):
    nets, opt = _fresh(3)
    checkpoint.save(tmp_path / "c.scgn", nets, opt, 0, {"arch": {"base_channels": 16, "num_residual_blocks": 2, "image_size": 32}})
    digests = []
    for _ in range(2):
        n2, o2, _, _ = checkpoint.load(tmp_path / "c.scgn")
        for _, net in n2.items():
            net.zero_grad()
        tr.train_step_unpaired(*_batch(toy_data, 2), n2, o2, LossWeights(lambda2=0.002), 2e-4)
        digests.append([net.digest() for _, net in n2.items()])
    assert digests[0] == digests[1]


def test_non_finite_loss_raises(toy_data, monkeypatch):
    nets, opt = _fresh()
    monkeypatch.setattr(tr, "cycle_loss", lambda a, b: T.scalar_mul(T.mean(T.abs(T.sub(a, b))), float("nan")))
    with pytest.raises(tr.NonFiniteLossError) as info:
        tr.train_step_unpaired(*_batch(toy_data), nets, opt, LossWeights(), 2e-4, iteration=7)
    assert info.value.report.iteration == 7
    assert "cycle" in str(info.value)


def test_stream_indices_cover_each_pass():
    idx = tr._stream_indices(5, 1, 8, 0, 16)
    assert sorted(idx[:8]) == list(range(8)) and sorted(idx[8:]) == list(range(8))
    assert tr._stream_indices(5, 1, 8, 3, 6) == idx[3:9]


def _train(tmp_path, name, cache, resume=None, **kw):
    cfg = toy_config(**kw)
    return tr.train(cfg.train_config(), cfg.arch_config(), TOY, tmp_path / name, resume, cache)


def test_train_log_alternates(tmp_path, toy_cache):
    _train(tmp_path, "run", toy_cache, max_iterations=10)
    lines = (tmp_path / "run" / "train_log.tsv").read_text().splitlines()
    assert lines[0].startswith("#") and "D then G" in lines[0]
    rows = tr.read_log(tmp_path / "run" / "train_log.tsv")
    assert [r.phase for r in rows] == ["U", "P"] * 5
    assert [r.iteration for r in rows] == list(range(1, 11))
    assert all(r.is_finite() for r in rows)


def test_resume_matches_uninterrupted(tmp_path, toy_cache):
    full = _train(tmp_path, "full", toy_cache, max_iterations=10, checkpoint_every=5)
    mid = tmp_path / "full" / "checkpoints" / "iter_000005.scgn"
    assert checkpoint.read_raw(mid)["iteration"] == 5
    # resume into a copy of the interrupted run directory
    part = _train(tmp_path, "part", toy_cache, max_iterations=5)
    resumed = _train(tmp_path, "part", toy_cache, resume=part, max_iterations=10)
    assert checkpoint.file_sha256(resumed) == checkpoint.file_sha256(full)
    a = (tmp_path / "full" / "train_log.tsv").read_text()
    assert (tmp_path / "part" / "train_log.tsv").read_text() == a
    again = _train(tmp_path, "again", toy_cache, resume=mid, max_iterations=10)
    assert checkpoint.file_sha256(again) == checkpoint.file_sha256(full)


def test_resume_arch_mismatch(tmp_path, toy_cache):
    ck = _train(tmp_path, "a", toy_cache, max_iterations=2)
    with pytest.raises(tr.ConfigError, match="architecture"):
        _train(tmp_path, "b", toy_cache, resume=ck, max_iterations=4, base_channels=8)


def test_empty_dataset(tmp_path):
    for sub in ("unpaired/trainA", "unpaired/trainB", "paired/hazy", "paired/clean"):
        (tmp_path / "data" / sub).mkdir(parents=True)
    with pytest.raises(tr.ConfigError, match="empty"):
        tr.train(tr.TrainConfig(max_iterations=2), ArchConfig(), tmp_path / "data", tmp_path / "out", cache_dir=tmp_path)
    with pytest.raises(tr.ConfigError, match="missing"):
        tr.train(tr.TrainConfig(max_iterations=2), ArchConfig(), tmp_path / "nowhere", tmp_path / "out")


def test_crash_checkpoint(tmp_path, toy_cache, monkeypatch):
    orig = tr.paired_l1_loss

    def flaky(fake, gt):
        loss = orig(fake, gt)
        return T.scalar_mul(loss, float("inf"))

    monkeypatch.setattr(tr, "paired_l1_loss", flaky)
    with pytest.raises(tr.NonFiniteLossError):
        _train(tmp_path, "crash", toy_cache, max_iterations=4)
    crash = tmp_path / "crash" / "crash_iter_000002.scgn"
    assert crash.exists()
    assert checkpoint.read_raw(crash)["iteration"] == 1
    rows = (tmp_path / "crash" / "train_log.tsv").read_text().splitlines()[2:]
    assert len(rows) == 2 and "inf" in rows[1]


def test_epoch_schedule_drives_lr(toy_data):
    cfg = tr.TrainConfig(epochs_constant=1, epochs_decay=1)
    per = tr.iterations_per_epoch(toy_data, cfg)
    assert per == 32
    assert tr.total_iterations(toy_data, cfg) == 64
    assert tr.total_iterations(toy_data, replace(cfg, max_iterations=7)) == 7


def _toy_lr():
    return toy_config().lr


def test_unpaired_regression_cycle_halves(toy_data):
    # 8-image unpaired subset, 200 unpaired steps with the toy settings
    nets, opt = _fresh()
    w = toy_config().weights()
    vals = []
    for i in range(200):
        k = i % 8
        rep = tr.train_step_unpaired(*_batch(toy_data, k), nets, opt, w, _toy_lr())
        vals.append(rep["fwd.cycle"] + rep["bwd.cycle"])
    assert np.mean(vals[-8:]) <= 0.5 * vals[0]


def test_paired_regression_l1_halves(toy_data):
    nets, opt = _fresh()
    w = toy_config().weights()
    vals = []
    for i in range(300):
        _, hazy, clean = toy_data.paired[i % 8]
        rep = tr.train_step_paired(image_to_tensor(hazy), image_to_tensor(clean), nets, opt, w, _toy_lr())
        vals.append(rep["fwd.paired_L1"] + rep["bwd.paired_L1"])
    assert np.mean(vals[-8:]) <= 0.5 * vals[0]


def _backend_run(tmp_path, flag):
    import os
    import subprocess
    import sys

    env = dict(os.environ, HAZEFORGE_PURE_PYTHON=flag)
    out = tmp_path / f"run_{flag}"
    code = (
        "import sys, hazeforge.kernels as k; from hazeforge.cli import main; print(k.BACKEND);"
        f"sys.exit(main(['train', '--data', {str(TOY)!r}, '--out', {str(out)!r}, '--max-iterations', '4',"
        f" '--cache-dir', {str(out / 'cache')!r}]))"
    )
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    return res.stdout.splitlines()[0], checkpoint.file_sha256(out / "final.scgn")


def test_backends_train_identically(tmp_path):
    from hazeforge import kernels

    fallback, h_py = _backend_run(tmp_path, "1")
    default, h_default = _backend_run(tmp_path, "0")
    assert fallback == "python" and default == kernels.BACKEND
    assert h_py == h_default
