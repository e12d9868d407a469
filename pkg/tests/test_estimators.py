import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gssplat.errors import ContractError
from gssplat.estimators import GSSplatReconstructor, SceneFitter
from gssplat.pipeline import generate_scene, random_scene_spec
from gssplat.validation import check_non_negative, check_positive, check_scenes


@pytest.fixture(scope="module")
def scene():
    return generate_scene(random_scene_spec(7, width=16, height=16))


def test_params_round_trip():
    est = GSSplatReconstructor(steps=3, lambda_offset=0.0)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.set_params(n_source=3).n_source == 3


def test_unfitted_estimators_raise(scene):
    with pytest.raises(NotFittedError):
        GSSplatReconstructor().predict(scene.source)
    with pytest.raises(NotFittedError):
        SceneFitter().predict(scene.novel.cameras)


def test_reconstructor_fit_predict_score(scene):
    est = GSSplatReconstructor(shared_blocks=2, attention_layers=1, encoder_channels=8,
                               decoder_channels=8, steps=2)
    assert est.fit([(scene.source, scene.novel)]) is est
    res = est.predict(scene.source)
    assert res.n_gaussians == sum(scene.source.valid_counts())
    assert 0.0 <= est.score([(scene.source, scene.novel)]) <= 1.0
    assert len(est.history_) == 2


def test_reconstructor_requires_labels(scene):
    bare = scene.source.subset(list(range(len(scene.source))))
    bare.labels = None
    with pytest.raises(ContractError):
        GSSplatReconstructor(steps=1).fit(bare)


def test_scene_fitter(scene):
    fitter = SceneFitter(steps=10, stride=4).fit(scene.source)
    images, labels = fitter.predict(scene.novel.cameras)
    assert images.shape == scene.novel.images.shape
    assert labels.shape == scene.novel.labels.shape
    assert np.isfinite(fitter.score(scene.novel))


def test_validation_helpers(scene):
    assert check_positive(3, "n", integer=True) == 3
    with pytest.raises(ContractError):
        check_positive(0.5, "n", integer=True)
    with pytest.raises(ContractError):
        check_non_negative(-1.0, "x")
    assert len(check_scenes(scene.source)) == 1
    with pytest.raises(ContractError):
        check_scenes([])
