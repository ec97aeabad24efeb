"""Adam oracle, training determinism, evaluation semantics, harnesses."""
import numpy as np
import pytest

from hypanom import features as ft
from hypanom import model as mdl
from hypanom import train as tr
from hypanom import toydata
from hypanom.errors import ManifestError, ParameterError


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    manifest_path = toydata.build_toy_dataset(root, seed=0, n_train=6, n_val=4, n_test=10, grid=8)
    return ft.load_manifest(manifest_path)


QUICK = dict(epochs=60, max_steps=60, lr=1e-2, d_out=16)


class TestAdam:
    def test_zero_gradient_is_identity(self):
        params = {"p": np.array([1.0, -2.0, 3.0])}
        opt = tr.OptimState()
        for _ in range(5):
            tr.adam_step(params, {"p": np.zeros(3)}, opt, lr=0.1)
        np.testing.assert_array_equal(params["p"], [1.0, -2.0, 3.0])

    def test_first_step_moves_by_lr(self):
        # bias-corrected first step: m_hat = g, v_hat = g^2 -> delta ~ lr
        params = {"p": np.array(0.0)}
        opt = tr.OptimState()
        tr.adam_step(params, {"p": np.array(1.0)}, opt, lr=0.1)
        assert float(params["p"]) == pytest.approx(-0.1, abs=1e-8)

    def test_two_steps_match_hand_recurrence(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        g1, g2 = 1.0, -0.5
        # hand-evaluated Adam recurrence
        m = (1 - b1) * g1
        v = (1 - b2) * g1 * g1
        x = 0.0 - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
        m = b1 * m + (1 - b1) * g2
        v = b2 * v + (1 - b2) * g2 * g2
        x = x - lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
        params = {"p": np.array(0.0)}
        opt = tr.OptimState()
        tr.adam_step(params, {"p": np.array(g1)}, opt, lr=lr)
        tr.adam_step(params, {"p": np.array(g2)}, opt, lr=lr)
        assert float(params["p"]) == pytest.approx(x, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ParameterError):
            tr.adam_step({"p": np.zeros(3)}, {"p": np.zeros(2)}, tr.OptimState(), 0.1)


class TestTrain:
    def test_toy_loss_drops_below_threshold(self, toy):
        cfg = tr.TrainConfig(epochs=200, max_steps=200, lr=5e-2, d_out=16, val_every=1000)
        result = tr.train(toy, cfg)
        assert result.log[-1]["loss"] < 0.05

    def test_determinism_byte_identical_checkpoints(self, toy, tmp_path):
        cfg = tr.TrainConfig(**QUICK, seed=7)
        a = tr.train(toy, cfg)
        b = tr.train(toy, cfg)
        mdl.save_checkpoint(a.state, tmp_path / "a", step=a.step)
        mdl.save_checkpoint(b.state, tmp_path / "b", step=b.step)
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_zero_epochs_returns_init(self, toy):
        cfg = tr.TrainConfig(epochs=0, d_out=16)
        result = tr.train(toy, cfg)
        assert result.step == 0 and result.log == []
        fresh = mdl.init_state(
            {lvl: result.state.projections[lvl].shape[1] for lvl in result.state.levels},
            16,
            seed=cfg.seed,
        )
        np.testing.assert_array_equal(result.state.hyperplane, fresh.hyperplane)

    def test_empty_manifest_rejected(self):
        with pytest.raises(ManifestError):
            tr.train(ft.Manifest(splits={"train": []}), tr.TrainConfig())

    def test_loss_always_finite_learnable_curvature(self, toy):
        cfg = tr.TrainConfig(**QUICK, seed=3)
        result = tr.train(toy, cfg)
        losses = [e["loss"] for e in result.log if e["loss"] is not None]
        assert np.all(np.isfinite(losses))
        assert all(np.isfinite(e["c"]) and e["c"] > 0 for e in result.log)

    def test_fixed_curvature_not_updated(self, toy):
        cfg = tr.TrainConfig(**QUICK, curvature=2.5)
        result = tr.train(toy, cfg)
        assert result.state.curvature == pytest.approx(2.5)

    def test_max_steps_caps_run(self, toy):
        cfg = tr.TrainConfig(epochs=100, max_steps=7, lr=1e-2, d_out=16)
        result = tr.train(toy, cfg)
        assert result.step == 7


class TestEvaluate:
    def test_perfect_model_scores_one(self, toy):
        cfg = tr.TrainConfig(epochs=200, max_steps=200, lr=1e-2, d_out=16)
        result = tr.train(toy, cfg)
        res = tr.evaluate(result.state, toy.split("test"), cfg)
        assert res.image_auroc == pytest.approx(1.0)
        assert res.pixel_auroc > 0.95

    def test_undefined_metric_surfaced_per_metric(self, toy, tmp_path):
        # all-anomalous image labels: image AUROC undefined, pixel AUROC fine
        records = [r for r in toy.split("test") if r.label == 1]
        state = mdl.init_state({"layer_2": 6, "layer_3": 6}, 8, seed=0)
        res = tr.evaluate(state, records, tr.TrainConfig(d_out=8))
        assert res.image_error is not None and "AUROC undefined" in res.image_error
        assert res.pixel_auroc is not None and res.pixel_error is None

    def test_no_masks_pixel_metric_undefined(self, toy):
        # strip every mask: pixel AUROC has no inputs, image AUROC still works
        records = [
            ft.Record(features=r.features, label=r.label, mask=None, record_id=r.identity())
            for r in toy.split("test")
        ]
        state = mdl.init_state({"layer_2": 6, "layer_3": 6}, 8, seed=0)
        res = tr.evaluate(state, records, tr.TrainConfig(d_out=8))
        assert res.pixel_error is not None and res.image_error is None


class TestFewShot:
    def test_k_exceeding_normals_rejected(self, toy):
        with pytest.raises(ParameterError):
            tr.few_shot_harness(toy, [99], [0], tr.TrainConfig(**QUICK))

    def test_k_equal_full_set_reproduces_train(self, toy):
        cfg = tr.TrainConfig(**QUICK, seed=5, val_every=1000)
        n = len(toy.split("train"))
        reports = tr.few_shot_harness(toy, [n], [5], cfg)
        direct = tr.train(toy, cfg)
        direct_eval = tr.evaluate(direct.state, toy.split("test"), cfg)
        assert reports[n].results[0].image_auroc == pytest.approx(direct_eval.image_auroc, abs=1e-12)

    def test_report_min_leq_mean_leq_max(self, toy):
        cfg = tr.TrainConfig(epochs=20, max_steps=20, lr=1e-2, d_out=8, val_every=1000)
        reports = tr.few_shot_harness(toy, [1, 3], [0, 1, 2], cfg)
        for rep in reports.values():
            s = rep.summary()
            assert s["image_auroc_min"] <= s["image_auroc_mean"] <= s["image_auroc_max"]


class TestAblation:
    def test_single_value_axis(self, toy):
        cfg = tr.TrainConfig(epochs=10, max_steps=10, lr=1e-2, d_out=8, val_every=1000)
        rows = tr.ablation_harness("patch", [1], cfg, toy)
        assert len(rows) == 1 and rows[0]["value"] == "1"

    def test_curvature_axis_includes_learnable_reference(self, toy):
        cfg = tr.TrainConfig(epochs=10, max_steps=10, lr=1e-2, d_out=8, val_every=1000)
        rows = tr.ablation_harness("curvature", [1.0], cfg, toy)
        assert [r["value"] for r in rows] == ["1.0", "learnable"]

    def test_dim_axis_all_rows_finite(self, toy):
        cfg = tr.TrainConfig(epochs=15, max_steps=15, lr=1e-2, val_every=1000)
        rows = tr.ablation_harness("dim", [16, 8, 2], cfg, toy)
        assert len(rows) == 3
        assert all(np.isfinite(r["final_loss"]) for r in rows)

    def test_unknown_axis(self, toy):
        with pytest.raises(ParameterError):
            tr.ablation_harness("nope", [1], tr.TrainConfig(), toy)


class TestWriters:
    def test_csv_schema_and_atomicity(self, tmp_path):
        rows = [{"axis": "patch", "value": "3", "image_auroc": 0.9, "pixel_auroc": None,
                 "final_loss": 0.1, "final_c": 1.0, "runtime_s": 0.5}]
        out = tmp_path / "ablation.csv"
        tr.write_csv(out, tr.ABLATION_COLUMNS, rows)
        lines = out.read_text().splitlines()
        assert lines[0] == ",".join(tr.ABLATION_COLUMNS)
        assert lines[1].startswith("patch,3,0.9,,")
        assert not list(tmp_path.glob("*.tmp"))

    def test_train_log_jsonl(self, tmp_path):
        import json

        log = [{"epoch": 0, "loss": 1.0, "c": 1.0, "step": 1}]
        tr.write_train_log(tmp_path / "log.jsonl", log)
        lines = (tmp_path / "log.jsonl").read_text().splitlines()
        assert json.loads(lines[0])["epoch"] == 0
