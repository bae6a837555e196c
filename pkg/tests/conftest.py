import numpy as np
import pytest

from actionspace.data import extract_snippets, synth_dataset
from actionspace.models import LossConfig, ModelConfig, build_model, make_batch, scaling_from_snippets


def small_config(architecture="ffw", segments=1, encoder="mlp_on_feature_vector", **kw):
    base = dict(architecture=architecture, feature_size=8, hidden_size=8, layers=1, reconstructor_sizes=(8,),
                encoder=encoder, encoder_hidden=(16,), conv_widths=(2, 2, 2), raster_size=16,
                meters_per_pixel=2.0, history_snapshots=2, segments=segments)
    base.update(kw)
    return ModelConfig(**base)


def snippets_for(segments=1, scenarios=("left_turn", "right_turn", "straight"), count=2, seed=0):
    tracks, maps = synth_dataset(list(scenarios), count, seed=seed)
    return extract_snippets(tracks, segments=segments, maps=maps)


@pytest.fixture(scope="session")
def snippets1():
    return snippets_for(1)


@pytest.fixture(scope="session")
def snippets2():
    return snippets_for(2)


def model_and_batch(snippets, architecture="ffw", segments=1, M=3, mapping="action_to_action", n=4, seed=0,
                    loss_kw=None, **cfg_kw):
    picks = [snippets[i] for i in np.linspace(0, len(snippets) - 1, n).astype(int)]
    cfg = small_config(architecture, segments, scaling=scaling_from_snippets(snippets), **cfg_kw)
    model = build_model(cfg, LossConfig(M=M, mapping=mapping, **(loss_kw or {})), seed=seed)
    intervals = 1 if architecture == "ffw" else segments + 1
    return model, make_batch(picks, cfg, intervals=intervals)
