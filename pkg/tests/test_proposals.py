import dataclasses

import numpy as np
import pytest

from stca.proposals import (BoundingBox, CountMismatch, DimensionMismatch, FrameProposals, FrameValidationError,
                            NonFiniteValue, NonPositiveExtent, Proposal, StcaConfig, default_init_params,
                            validate_frame)


def _frame(n=3, d=8, frame_id=0):
    props = tuple(Proposal(BoundingBox(10.0 + i, 5.0, 4.0, 3.0), frame_id, np.ones(d)) for i in range(n))
    return FrameProposals(frame_id, props)


def _with(frame, idx, **changes):
    props = list(frame.proposals)
    props[idx] = dataclasses.replace(props[idx], **changes)
    return FrameProposals(frame.frame_id, tuple(props))


def test_valid_frame_passes():
    validate_frame(_frame(), StcaConfig.desk(d_v=8, n_proposals=3))


@pytest.mark.parametrize("mutate, error", [
    (lambda f: _with(f, 1, feature=np.ones(7)), DimensionMismatch),
    (lambda f: _with(f, 0, box=BoundingBox(1.0, 1.0, 0.0, 2.0)), NonPositiveExtent),
    (lambda f: _with(f, 2, box=BoundingBox(1.0, 1.0, 2.0, -1.0)), NonPositiveExtent),
    (lambda f: FrameProposals(0, f.proposals[:2]), CountMismatch),
    (lambda f: _with(f, 0, feature=np.array([np.nan] + [1.0] * 7)), NonFiniteValue),
    (lambda f: _with(f, 0, box=BoundingBox(np.inf, 1.0, 2.0, 2.0)), NonFiniteValue),
    (lambda f: _with(f, 1, frame_id=4), FrameValidationError),
])
def test_each_violation_is_reported(mutate, error):
    with pytest.raises(error):
        validate_frame(mutate(_frame()), StcaConfig.desk(d_v=8, n_proposals=3))


def test_error_kinds_are_distinct():
    kinds = {cls.kind for cls in (DimensionMismatch, CountMismatch, NonPositiveExtent, NonFiniteValue)}
    assert len(kinds) == 4


@pytest.mark.parametrize("field, value", [
    ("d_phi", 7), ("window", 4), ("eps_geom", 0.0), ("eps_spatial", -1e-6), ("d_v", 0), ("variant", "bogus"),
    ("tau", 1.5), ("d_v", 5),
])
def test_config_rejects_bad_values(field, value):
    with pytest.raises(ValueError):
        StcaConfig(**{field: value})


def test_config_published_defaults():
    cfg = StcaConfig()
    assert (cfg.d_v, cfg.d_phi, cfg.n_proposals, cfg.window, cfg.tau) == (1024, 16, 300, 31, 9)
    assert (cfg.eps_geom, cfg.eps_spatial, cfg.sinusoid_base) == (1e-3, 1e-6, 1000.0)
    desk = StcaConfig.desk()
    assert (desk.d_v, desk.d_phi, desk.n_proposals, desk.window) == (16, 8, 8, 5)


def test_init_is_deterministic():
    cfg = StcaConfig.desk(d_v=4)
    assert default_init_params(cfg, 42) == default_init_params(cfg, 42)
    assert default_init_params(cfg, 42) != default_init_params(cfg, 43)


def test_init_shapes_follow_config():
    cfg = StcaConfig.desk(d_v=6, d_phi=4, share_query=False)
    p = default_init_params(cfg, 0)
    p.check(cfg)
    assert p.w_s.shape == (16, 1) and p.w_qt.shape == (6, 6)


def test_init_statistics():
    # 3 * 580^2 + 64 entries is just over a million
    cfg = StcaConfig.desk(d_v=580)
    entries = np.concatenate([b.ravel() for b in default_init_params(cfg, 0).blocks().values()])
    assert entries.size >= 10 ** 6
    assert abs(entries.mean()) < 1e-3
    assert abs(entries.std() / 0.01 - 1) < 0.05


def test_params_check_rejects_wrong_shape():
    cfg = StcaConfig.desk()
    p = default_init_params(cfg, 0)
    with pytest.raises(ValueError):
        dataclasses.replace(p, w_s=np.zeros((3, 1))).check(cfg)
    with pytest.raises(ValueError):
        p.check(cfg.replace(share_query=False))
