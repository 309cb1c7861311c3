"""Training loop mechanics: optimizer, determinism, checkpoints, ablations."""

import numpy as np
import pytest

from sderec import autodiff as ad
from sderec.config import (
    AblationFlags,
    CurriculumConfig,
    NetConfig,
    TrainConfig,
    parse_config_lines,
)
from sderec.data import SplitDataset
from sderec.graphs import CurriculumState
from sderec.sgm import SdeSpec
from sderec.training import (
    Adam,
    CompatibilityError,
    Model,
    TrainingDivergence,
    _snap_f32,
    build_graph_caches,
    gradcheck_suite,
    gradient_check,
    load_checkpoint,
    sample_batch,
    save_checkpoint,
    train,
    train_epoch,
)


def tiny_cfg(**overrides):
    base = dict(
        dim=8,
        layers=2,
        epochs=3,
        batch_size=8,
        learning_rate=1e-3,
        seed=0,
        eval_every=1,
        patience=0,
        sde=SdeSpec(kind="vp", m_steps=3, n_corrector=1),
        curriculum=CurriculumConfig(n_topk=2, m_random=1, rho=0.8, rho_hat=0.8),
        net=NetConfig(time_embed_dim=8, hidden_dims=(8, 8)),
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_ds() -> SplitDataset:
    """8 users x 20 items; 3 train + 1 val + 1 test rows per user."""
    train, val, test = [], [], []
    for u in range(8):
        train += [(u, u), (u, 8 + u), (u, 16 + u % 4)]
        val.append((u, 8 + (u + 1) % 8))
        test.append((u, (u + 3) % 8))
    social = [(u, (u + 1) % 8) for u in range(8)] + [(0, 4), (2, 6)]
    canon = sorted({(min(a, b), max(a, b)) for a, b in social})

    def arr(pairs):
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    return SplitDataset(
        8, 20, arr(train), arr(val), arr(test), arr(canon),
        [f"u{k}" for k in range(8)], [f"i{k}" for k in range(20)],
    )


class TestSnapAndAdam:
    def test_snap_is_idempotent_float64(self):
        x = np.array([0.1, 1 / 3, 2.0**-40])
        snapped = _snap_f32(x)
        assert snapped.dtype == np.float64
        np.testing.assert_array_equal(snapped, _snap_f32(snapped))
        np.testing.assert_array_equal(snapped, x.astype(np.float32).astype(np.float64))

    def test_zero_gradient_step_keeps_values(self):
        p = ad.param(_snap_f32(np.array([1.5, -0.25])))
        opt = Adam({"p": p}, lr=0.1)
        before = p.value.copy()
        p.grad = np.zeros_like(p.value)
        opt.step()
        np.testing.assert_array_equal(p.value, before)

    def test_quadratic_descent(self):
        p = ad.param(np.array([10.0]))
        opt = Adam({"p": p}, lr=0.1)
        for _ in range(500):
            p.grad = 2.0 * (p.value - 3.0)
            opt.step()
        assert abs(p.value[0] - 3.0) < 1e-3

    def test_values_stay_on_float32_grid(self):
        rng = np.random.default_rng(0)
        p = ad.param(_snap_f32(rng.standard_normal(16)))
        opt = Adam({"p": p}, lr=0.01)
        for _ in range(5):
            p.grad = rng.standard_normal(16)
            opt.step()
        np.testing.assert_array_equal(p.value, _snap_f32(p.value))


class TestSampleBatch:
    def test_negatives_avoid_training_items(self):
        ds = tiny_ds()
        sets = ds.user_train_sets()
        rng = np.random.default_rng(0)
        for _ in range(20):
            users, pos, negs = sample_batch(ds.train, sets, ds.m_items, 16, rng)
            assert users.shape == pos.shape == negs.shape == (16,)
            for u, p, n in zip(users, pos, negs):
                assert int(p) in sets[int(u)]
                assert int(n) not in sets[int(u)]

    def test_degenerate_user_rejected(self):
        pairs = np.array([[0, 0], [0, 1]], dtype=np.int64)
        sets = [{0, 1}]
        with pytest.raises(ValueError, match="degenerate user"):
            sample_batch(pairs, sets, 2, 4, np.random.default_rng(0))

    def test_empty_training_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            sample_batch(np.zeros((0, 2), dtype=np.int64), [], 5, 4,
                         np.random.default_rng(0))


class TestModel:
    def test_parameter_names(self):
        model = Model(tiny_cfg(), 8, 20)
        names = set(model.params)
        assert {"p_s", "p_r", "q", "soc.w0", "soc.w1"} <= names
        assert any(n.startswith("score.") for n in names)
        assert any(n.startswith("head_s.") for n in names)
        assert any(n.startswith("head_c.") for n in names)
        assert not any(n.startswith("fusion.") for n in names)

    def test_fusion_only_under_no_ssl(self):
        cfg = tiny_cfg(ablations=AblationFlags(no_ssl=True))
        model = Model(cfg, 8, 20)
        assert model.fusion is not None
        assert any(n.startswith("fusion.") for n in model.params)

    def test_init_on_float32_grid(self):
        model = Model(tiny_cfg(), 8, 20)
        for name, p in model.params.items():
            np.testing.assert_array_equal(p.value, _snap_f32(p.value), err_msg=name)

    def test_same_seed_same_init(self):
        a = Model(tiny_cfg(), 8, 20)
        b = Model(tiny_cfg(), 8, 20)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].value, b.params[name].value)

    def test_load_shape_mismatch(self):
        model = Model(tiny_cfg(), 8, 20)
        values = model.param_values()
        values["q"] = values["q"][:, :4]
        with pytest.raises(CompatibilityError, match="q"):
            model.load_param_values(values)

    def test_load_missing_parameter(self):
        model = Model(tiny_cfg(), 8, 20)
        values = model.param_values()
        del values["p_s"]
        with pytest.raises(CompatibilityError, match="p_s"):
            model.load_param_values(values)


class TestGradientCheck:
    def test_exact_on_quadratic(self):
        p = ad.param(np.array([1.0, -2.0, 0.5]))
        err = gradient_check(lambda: ad.sum_all(ad.mul(p, p)), {"p": p},
                             probe_count=3)
        assert err < 1e-8

    def test_detects_a_broken_adjoint(self):
        p = ad.param(np.array([1.0, -2.0, 0.5]))

        def broken():
            out = ad.mul(p, p)
            bad = ad.Tensor(out.value.sum(), (out,))
            # wrong upstream routing: doubles the true gradient
            bad.bwd = lambda g: out.bwd(2.0 * np.broadcast_to(g, out.value.shape))
            return bad

        err = gradient_check(broken, {"p": p}, probe_count=3)
        assert err > 1e-2

    def test_suite_within_tolerance(self):
        report = gradcheck_suite(probe_count=40)
        assert set(report) == {"l_diff", "l_bpr", "l_cl", "joint"}
        for name, err in report.items():
            assert err < 1e-4, (name, err)


class TestTrainLoop:
    def test_history_and_csv_shape(self):
        res = train(tiny_cfg(), tiny_ds())
        assert len(res.history) == 3
        assert len(res.epochs_csv) == 4
        assert res.epochs_csv[0] == "epoch,l_diff,l_bpr,l_cl,joint,recall10_val,ndcg10_val"
        assert len(res.runtime_csv) == 4
        assert res.runtime_csv[0] == "epoch,wall_clock_s,peak_alloc_bytes"
        assert res.best_epoch >= 0

    def test_bitwise_deterministic_across_runs(self):
        a = train(tiny_cfg(), tiny_ds())
        b = train(tiny_cfg(), tiny_ds())
        assert a.epochs_csv == b.epochs_csv
        for name in a.best_params:
            np.testing.assert_array_equal(a.best_params[name], b.best_params[name])

    def test_seed_changes_trajectory(self):
        a = train(tiny_cfg(), tiny_ds())
        b = train(tiny_cfg(seed=1), tiny_ds())
        assert a.epochs_csv != b.epochs_csv

    def test_eval_every_skips_epochs(self):
        res = train(tiny_cfg(epochs=4, eval_every=2), tiny_ds())
        assert not np.isnan(res.history[0]["recall10_val"])
        assert np.isnan(res.history[1]["recall10_val"])
        assert not np.isnan(res.history[2]["recall10_val"])

    def test_patience_stops_after_plateau(self, monkeypatch):
        calls = {"n": 0}

        class FakeResult:
            def __init__(self, r):
                self.means = {10: (r, r)}

        def fake_eval(user_vecs, item_vecs, ds, ks, phase):
            calls["n"] += 1
            return FakeResult(1.0 if calls["n"] == 1 else 0.0)

        monkeypatch.setattr("sderec.training.evaluation.evaluate", fake_eval)
        res = train(tiny_cfg(epochs=50, patience=3), tiny_ds())
        assert res.best_epoch == 0
        assert len(res.history) == 4  # stops once epoch - best_epoch reaches 3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_detection(self):
        ds = tiny_ds()
        cfg = tiny_cfg()
        model = Model(cfg, ds.n_users, ds.m_items)
        model.params["p_r"].value[:] = np.nan
        graphs = build_graph_caches(ds)
        curric = CurriculumState(2, 1, 0.8, 0.8, seed=0)
        with pytest.raises(TrainingDivergence) as info:
            train_epoch(model, ds, graphs, curric, 0)
        assert info.value.diagnostics["epoch"] == 0

    def test_no_curriculum_uses_raw_graph(self):
        ds = tiny_ds()
        cfg = tiny_cfg(ablations=AblationFlags(no_curriculum=True))
        model = Model(cfg, ds.n_users, ds.m_items)
        graphs = build_graph_caches(ds)
        curric = CurriculumState(2, 1, 0.8, 0.8, seed=0)
        train_epoch(model, ds, graphs, curric, 0)
        assert graphs["active"] is graphs["raw"]

    def test_curriculum_replaces_active_graph(self):
        ds = tiny_ds()
        model = Model(tiny_cfg(), ds.n_users, ds.m_items)
        graphs = build_graph_caches(ds)
        curric = CurriculumState(2, 1, 0.8, 0.8, seed=0)
        curric, _ = train_epoch(model, ds, graphs, curric, 0)
        assert curric.stage == "topk"
        assert graphs["active"] is not graphs["raw"]
        assert graphs["active"] is not None


class TestAblationColumns:
    def test_no_sgm_zeroes_diffusion_column(self):
        cfg = tiny_cfg(epochs=2, ablations=AblationFlags(no_sgm=True))
        res = train(cfg, tiny_ds())
        assert all(row["l_diff"] == 0.0 for row in res.history)
        assert all(row["l_cl"] != 0.0 for row in res.history)

    def test_no_ssl_zeroes_contrastive_column(self):
        cfg = tiny_cfg(epochs=2, ablations=AblationFlags(no_ssl=True))
        res = train(cfg, tiny_ds())
        assert all(row["l_cl"] == 0.0 for row in res.history)
        assert all(row["l_diff"] != 0.0 for row in res.history)

    def test_double_ablation(self):
        cfg = tiny_cfg(
            epochs=1, ablations=AblationFlags(no_sgm=True, no_ssl=True)
        )
        res = train(cfg, tiny_ds())
        assert res.history[0]["l_diff"] == 0.0
        assert res.history[0]["l_cl"] == 0.0
        assert res.history[0]["l_bpr"] > 0.0

    def test_bpr_use_denoised_changes_ranking(self):
        ds = tiny_ds()
        base = Model(tiny_cfg(), ds.n_users, ds.m_items)
        fused = Model(tiny_cfg(bpr_use_denoised=True), ds.n_users, ds.m_items)
        graphs = build_graph_caches(ds)
        from sderec.training import _rng

        u0, i0 = base.ranking_vectors(graphs["raw"], graphs["bipartite"], _rng(0, 2, 0))
        u1, i1 = fused.ranking_vectors(graphs["raw"], graphs["bipartite"], _rng(0, 2, 0))
        np.testing.assert_array_equal(i0, i1)
        assert not np.allclose(u0, u1)


class TestCheckpoints:
    def test_round_trip_is_bitwise(self, tmp_path):
        cfg = tiny_cfg(epochs=2)
        res = train(cfg, tiny_ds(), out_dir=str(tmp_path))
        data = load_checkpoint(tmp_path / "best")
        assert set(data.params) == set(res.best_params)
        for name, val in res.best_params.items():
            np.testing.assert_array_equal(data.params[name], val, err_msg=name)
        assert data.n_users == 8 and data.m_items == 20
        assert data.epoch == res.best_epoch
        assert parse_config_lines(data.config_lines) == cfg

    def test_reload_reproduces_forward_pass(self, tmp_path):
        ds = tiny_ds()
        cfg = tiny_cfg(epochs=2)
        res = train(cfg, ds, out_dir=str(tmp_path))
        graphs = build_graph_caches(ds)
        model = Model(cfg, ds.n_users, ds.m_items)
        model.load_param_values(res.best_params)
        want_u, want_i = model.collab_forward(graphs["bipartite"])
        data = load_checkpoint(tmp_path / "best")
        model2 = Model(cfg, ds.n_users, ds.m_items)
        model2.load_param_values(data.params)
        got_u, got_i = model2.collab_forward(graphs["bipartite"])
        np.testing.assert_array_equal(got_u.value, want_u.value)
        np.testing.assert_array_equal(got_i.value, want_i.value)

    def test_logs_written(self, tmp_path):
        train(tiny_cfg(epochs=2), tiny_ds(), out_dir=str(tmp_path))
        epochs = (tmp_path / "epochs.csv").read_text().splitlines()
        assert epochs[0].startswith("epoch,l_diff")
        assert len(epochs) == 3
        runtime = (tmp_path / "runtime.csv").read_text().splitlines()
        assert runtime[0] == "epoch,wall_clock_s,peak_alloc_bytes"
        assert (tmp_path / "best" / "manifest.txt").exists()

    def test_version_mismatch(self, tmp_path):
        cfg = tiny_cfg(epochs=1)
        train(cfg, tiny_ds(), out_dir=str(tmp_path))
        mani = tmp_path / "best" / "manifest.txt"
        mani.write_text(mani.read_text().replace("version = 1", "version = 99"))
        with pytest.raises(CompatibilityError) as info:
            load_checkpoint(tmp_path / "best")
        assert "99" in str(info.value) and "1" in str(info.value)

    def test_truncated_parameter_file(self, tmp_path):
        cfg = tiny_cfg(epochs=1)
        train(cfg, tiny_ds(), out_dir=str(tmp_path))
        target = tmp_path / "best" / "q.f32"
        target.write_bytes(target.read_bytes()[:-4])
        with pytest.raises(ValueError, match="bytes"):
            load_checkpoint(tmp_path / "best")

    def test_missing_parameter_file(self, tmp_path):
        cfg = tiny_cfg(epochs=1)
        train(cfg, tiny_ds(), out_dir=str(tmp_path))
        (tmp_path / "best" / "q.f32").unlink()
        with pytest.raises(OSError):
            load_checkpoint(tmp_path / "best")

    def test_save_writes_little_endian_float32(self, tmp_path):
        values = {"w": np.array([[1.0, 2.5]], dtype=np.float64)}
        save_checkpoint(str(tmp_path / "ck"), values, tiny_cfg(), epoch=0,
                        metrics={}, n_users=1, m_items=1)
        blob = (tmp_path / "ck" / "w.f32").read_bytes()
        np.testing.assert_array_equal(
            np.frombuffer(blob, dtype="<f4"), np.array([1.0, 2.5], dtype="<f4")
        )
