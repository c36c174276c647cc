import numpy as np
import pytest
from hypothesis import settings

from stca.pipeline import init_model
from stca.proposals import BoundingBox, FrameProposals, Proposal, ProposalSet, StcaConfig, StcaParams

settings.register_profile("stca", max_examples=100, deadline=None, derandomize=True)
settings.load_profile("stca")


def random_boxes(rng, n):
    return np.column_stack([rng.uniform(0, 50, n), rng.uniform(0, 50, n),
                            rng.uniform(2, 20, n), rng.uniform(2, 20, n)])


def random_set(rng, n, d, frames=(0,)):
    return ProposalSet(rng.normal(size=(n, d)), random_boxes(rng, n), rng.choice(frames, n).astype(np.int64))


def random_params(rng, config, scale=None, positive_ws=False):
    d, s = config.d_v, 4 * config.d_phi
    scale = 1.0 / np.sqrt(d) if scale is None else scale
    w_s = rng.normal(0, 0.5, (s, 1))
    if positive_ws:
        w_s = np.abs(w_s)
    w_qt = None if config.share_query else rng.normal(0, scale, (d, d))
    return StcaParams(rng.normal(0, scale, (d, d)), rng.normal(0, scale, (d, d)), w_s,
                      rng.normal(0, scale, (d, d)), w_qt)


def random_video(rng, config, num_frames, video_id="v"):
    frames = []
    for t in range(num_frames):
        boxes = random_boxes(rng, config.n_proposals)
        props = tuple(Proposal(BoundingBox(*b), t, rng.normal(size=config.d_v), float(rng.uniform()),
                               int(rng.integers(0, 3)))
                      for b in boxes)
        frames.append(FrameProposals(t, props, video_id))
    return frames


def random_model(config, seed, std=0.3, num_classes=2):
    return init_model(config, num_classes, seed, std)


@pytest.fixture
def desk():
    return StcaConfig.desk()
