import numpy as np
import pytest

from vdlab.audio_io import AudioClip, labels_to_frames
from vdlab.config import ConfigError, ExperimentConfig, apply_override, load_config, write_config
from vdlab.models.cnn import CnnConfig, CnnTrainParams
from vdlab.models.common import PredictionTrack
from vdlab.models.forest import ForestParams
from vdlab.models.rnn import RnnConfig, RnnTrainParams
from vdlab.pipelines import (
    CnnPipelineConfig, FePipelineConfig, RnnPipelineConfig, cnn_input, fe_input, load_detector,
    read_predictions_csv, rnn_input, save_detector, train_detector, write_predictions_csv,
)
from vdlab.stressgen import gen_synthetic_corpus

SR = 22050
TINY = {
    "fe": FePipelineConfig(forest=ForestParams(n_trees=3, max_depth=6)),
    "cnn": CnnPipelineConfig(cnn=CnnConfig(n_mels=40, channels=(4, 4, 4, 4), dense=8),
                             train=CnnTrainParams(epochs=1, per_class_cap=100)),
    "rnn": RnnPipelineConfig(n_mels=8, rnn=RnnConfig(n_inputs=16, hidden=(4, 4, 4), window=40),
                             train=RnnTrainParams(epochs=1, train_hop=20)),
}


def _click(hop, k, n=6 * SR):
    x = np.zeros(n)
    x[hop * k + hop // 2] = 1.0
    return AudioClip(x, SR)


def test_cnn_input_frame_centres():
    x, fps = cnn_input(_click(315, 40), CnnPipelineConfig())
    assert fps == 70.0 and x.shape == (80, 6 * SR // 315)
    assert np.argmax(x.mean(axis=0)) == 40


def test_rnn_input_frame_centres():
    cfg = RnnPipelineConfig()
    x, fps = rnn_input(_click(351, 60), cfg)
    assert fps == pytest.approx(SR / 351)
    assert x.shape == (6 * SR // 351, 80)
    # the click lands in the percussive half, centred on its own frame
    assert np.argmax(x[:, 40:].mean(axis=1)) == 60


def test_rnn_input_separates_tone_from_clicks():
    t = np.arange(4 * SR) / SR
    tone = AudioClip(0.3 * np.sin(2 * np.pi * 440 * t), SR)
    x, _ = rnn_input(tone, RnnPipelineConfig())
    h, p = x[20:-20, :40], x[20:-20, 40:]
    assert np.mean(10 ** (h / 10)) > 10 * np.mean(10 ** (p / 10))


def test_fe_input_width():
    x, fps = fe_input(AudioClip(0.1 * np.random.default_rng(0).standard_normal(3 * SR), SR), FePipelineConfig())
    assert x.shape == (3 * SR // 315, 232) and fps == 70.0


def test_rate_mismatch():
    with pytest.raises(ValueError):
        cnn_input(AudioClip(np.zeros(3 * 16000), 16000), CnnPipelineConfig())


@pytest.fixture(scope="module")
def tracks():
    from vdlab.stressgen import CorpusConfig
    return gen_synthetic_corpus(2, 4, config=CorpusConfig(duration=4.0))


@pytest.mark.parametrize("name", ["fe", "cnn", "rnn"])
def test_train_save_load_predict(name, tracks, tmp_path):
    ex = [(t.mix, t.labels) for t in tracks[:3]]
    det = train_detector(name, ex, TINY[name])
    path = tmp_path / "m.vdm"
    save_detector(path, det)
    back = load_detector(path)
    assert back.pipeline == name and back.config == det.config
    a, b = det(tracks[3].mix), back(tracks[3].mix)
    np.testing.assert_array_equal(a.probabilities, b.probabilities)
    np.testing.assert_array_equal(a.labels, b.labels)
    truth = labels_to_frames(tracks[3].labels, a.frame_rate, len(a))
    assert len(truth) == len(a)
    save_detector(tmp_path / "m2.vdm", back)
    assert (tmp_path / "m2.vdm").read_bytes() == path.read_bytes()


def test_train_unknown_pipeline(tracks):
    with pytest.raises(ValueError):
        train_detector("svm", [(tracks[0].mix, tracks[0].labels)])


def test_predictions_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    for fps in (70.0, SR / 351):
        tr = PredictionTrack(fps, rng.random(300), rng.random(300) < 0.5)
        write_predictions_csv(tmp_path / "p.csv", tr)
        back = read_predictions_csv(tmp_path / "p.csv")
        assert np.isclose(back.frame_rate, fps, rtol=1e-7)
        np.testing.assert_allclose(back.probabilities, tr.probabilities, atol=1e-9)
        np.testing.assert_array_equal(back.labels, tr.labels)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_predictions_csv(tmp_path / "bad.csv")


def test_config_roundtrip_and_overrides(tmp_path):
    cfg = load_config(None, [("cnn.train.epochs", "3"), ("rnn.n_mels", "20"), ("seed", "9")])
    assert cfg.cnn.train.epochs == 3 and cfg.rnn.rnn.n_inputs == 40
    assert cfg.pipeline_config("rnn").train.seed == 9
    assert cfg.pipeline_config("fe").forest.seed == 9
    write_config(cfg, tmp_path / "c.cfg")
    assert load_config(tmp_path / "c.cfg") == cfg
    assert load_config(tmp_path / "c.cfg").digest() == cfg.digest()
    assert cfg.digest() != ExperimentConfig().digest()


@pytest.mark.parametrize("key,value", [
    ("forest.n_trees", "x"), ("nope.key", "1"), ("cnn.train.bogus", "1"), ("pipeline", "svm"),
    ("features.context", "sideways"), ("rnn.model.n_inputs", "7"),
])
def test_config_rejects(key, value):
    with pytest.raises(ConfigError):
        apply_override(ExperimentConfig(), key, value)
