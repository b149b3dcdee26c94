import io

import numpy as np
import pytest

from vgsn.corpus import CorpusError, PairedCorpus
from vgsn.model import default_config, init_params
from vgsn.optim import make_optimizer
from vgsn.tensor import Rng
from vgsn.training import (
    LossRecord,
    TrainConfig,
    TrainingDiverged,
    batch_loss,
    fit,
    read_loss_csv,
    train_epoch,
    write_loss_csv,
)


def params(seed=0, **kw):
    return init_params(default_config(32, 4, **kw), seed)


def snapshot(p):
    return [t.data.copy() for _, t in p.state()]


def test_mean_loss_non_negative(few_shot_corpus):
    p = params()
    rec = train_epoch(p, make_optimizer("adam", p.parameters()), few_shot_corpus, TrainConfig(), Rng(0))
    assert rec.mean_loss >= 0 and rec.wall_time_seconds > 0


def test_run_twice_identical(few_shot_corpus):
    cfg = TrainConfig(epochs=3, seed=4)
    (pa, ca), (pb, cb) = fit(params(1), few_shot_corpus, cfg), fit(params(1), few_shot_corpus, cfg)
    assert [r.mean_loss for r in ca] == [r.mean_loss for r in cb]
    assert all(np.array_equal(a, b) for a, b in zip(snapshot(pa), snapshot(pb)))


def test_zero_epochs(few_shot_corpus):
    p = params()
    before = snapshot(p)
    _, curve = fit(p, few_shot_corpus, TrainConfig(epochs=0))
    assert curve == []
    assert all(np.array_equal(a, t.data) for a, (_, t) in zip(before, p.state()))


def test_curve_length_and_callback(few_shot_corpus):
    seen = []
    _, curve = fit(params(), few_shot_corpus, TrainConfig(epochs=4), callback=seen.append)
    assert [r.epoch for r in curve] == [1, 2, 3, 4]
    assert seen == curve


def test_partial_batches_are_trained(few_shot_corpus):
    # 5 pairs in batches of 3 and 2
    _, curve = fit(params(), few_shot_corpus, TrainConfig(epochs=1, batch_size=3))
    assert np.isfinite(curve[0].mean_loss)


def test_single_sample_batch_needs_spatial_extent(few_shot_corpus):
    # at 32px the encoder ends at 1x1, so train-mode batchnorm sees one value per channel
    with pytest.raises(ValueError, match="batchnorm"):
        fit(params(), few_shot_corpus, TrainConfig(epochs=1, batch_size=2))


def test_adam_beats_sgd_on_fixture(few_shot_corpus):
    finals = {}
    for opt in ("adam", "sgd"):
        _, curve = fit(params(7), few_shot_corpus, TrainConfig(epochs=40, seed=7, optimizer=opt))
        finals[opt] = curve[-1].mean_loss
    assert finals["adam"] <= finals["sgd"]


def test_empty_corpus():
    p = params()
    with pytest.raises(CorpusError):
        train_epoch(p, make_optimizer("sgd", p.parameters()), PairedCorpus([], 32), TrainConfig(), Rng(0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(few_shot_corpus):
    p = params()
    with pytest.raises(TrainingDiverged, match=r"epoch \d+, batch 0"):
        fit(p, few_shot_corpus, TrainConfig(epochs=3, optimizer="sgd", learning_rate=1e30))


def test_kl_term_adds_to_loss(few_shot_corpus):
    p = params()
    x, y = few_shot_corpus.inputs().astype(np.float32), few_shot_corpus.targets().astype(np.float32)
    eps = np.zeros((5, p.config.latent_dim))
    plain = batch_loss(p, x, y, eps).item()
    with_kl = batch_loss(p, x, y, eps, kl_weight=1.0).item()
    assert with_kl != plain


@pytest.mark.parametrize("kw", [{"batch_size": 0}, {"epochs": -1}])
def test_bad_train_config(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


class TestLossCsv:
    records = [LossRecord(1, 0.25, 1.5), LossRecord(2, 0.125, 1.25)]

    def test_format(self):
        buf = io.StringIO()
        write_loss_csv(self.records, buf)
        assert buf.getvalue() == "epoch,loss,seconds\n1,0.25,1.5\n2,0.125,1.25\n"

    def test_untimed(self):
        buf = io.StringIO()
        write_loss_csv(self.records, buf, timing=False)
        assert buf.getvalue().splitlines()[1] == "1,0.25,"

    def test_roundtrip(self):
        buf = io.StringIO()
        write_loss_csv(self.records, buf)
        buf.seek(0)
        assert read_loss_csv(buf) == self.records
