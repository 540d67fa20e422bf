import numpy as np
import pytest

from pressureloop.answer_model import AnswerAgent, TrainingFailure
from pressureloop.questions import QuestionGenerator, all_questions, answer_class

# a tiny bank covering all 17 classes keeps these tests fast;
# full-accuracy training happens in the acceptance suite
def tiny_bank(n=400, seed=1):
    by_class = {}
    for q in all_questions():
        by_class.setdefault(answer_class(q), []).append(q)
    bank = [qs[0] for qs in by_class.values()]
    bank += QuestionGenerator(seed=seed).generate_bank(n - len(bank))
    return bank


def test_fit_validates_bank():
    agent = AnswerAgent(epochs=1)
    with pytest.raises(ValueError):
        agent.fit([])
    one_class = [q for q in all_questions() if answer_class(q) == 8][:50]
    with pytest.raises(ValueError):
        agent.fit(one_class)


def test_predict_requires_fit():
    with pytest.raises(RuntimeError):
        AnswerAgent().predict(tiny_bank(20))


def test_training_failure_carries_report():
    agent = AnswerAgent(epochs=1, accuracy_floor=1.0, lr_schedule={})
    with pytest.raises(TrainingFailure) as exc:
        agent.fit(tiny_bank())
    assert "final_train_accuracy" in exc.value.report
    assert len(exc.value.report["losses"]) == 1


def test_fit_determinism():
    bank = tiny_bank()
    a = AnswerAgent(epochs=2, seed=3, accuracy_floor=0.0, lr_schedule={}).fit(bank)
    b = AnswerAgent(epochs=2, seed=3, accuracy_floor=0.0, lr_schedule={}).fit(bank)
    assert np.array_equal(a.predict(bank), b.predict(bank))
    for k, v in a.state_dict_numpy().items():
        assert np.array_equal(v, b.state_dict_numpy()[k])


def test_predict_proba_shape_and_normalization():
    bank = tiny_bank()
    agent = AnswerAgent(epochs=2, accuracy_floor=0.0, lr_schedule={}).fit(bank)
    proba = agent.predict_proba(bank[:10])
    assert proba.shape == (10, 17)
    assert proba.sum(axis=1) == pytest.approx(np.ones(10), abs=1e-5)
    assert np.array_equal(proba.argmax(axis=1), agent.predict(bank[:10]))


def test_extract_features_shape():
    bank = tiny_bank()
    agent = AnswerAgent(epochs=1, accuracy_floor=0.0, lr_schedule={}).fit(bank)
    feats = agent.extract_features(bank[:7])
    assert feats.shape == (7, agent.hidden)
    assert np.isfinite(feats).all()


def test_save_load_roundtrip(tmp_path):
    bank = tiny_bank()
    agent = AnswerAgent(epochs=2, accuracy_floor=0.0, lr_schedule={}).fit(bank)
    path = tmp_path / "agent.npz"
    agent.save(path)
    loaded = AnswerAgent.load(path)
    assert np.array_equal(agent.predict(bank), loaded.predict(bank))
    assert np.allclose(agent.extract_features(bank[:5]),
                       loaded.extract_features(bank[:5]))


def test_get_params_roundtrip():
    agent = AnswerAgent(epochs=5, seed=9)
    params = agent.get_params()
    assert params["epochs"] == 5 and params["seed"] == 9
