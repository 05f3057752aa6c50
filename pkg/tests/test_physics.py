import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from hetgrasp.collect import place_object, sample_grasp_candidates
from hetgrasp.errors import DegenerateObjectError, InvalidArgumentError
from hetgrasp.objgen import flip_object, generate_letter_object
from hetgrasp.physics import (
    GraspCandidate, PhysicsParams, center_of_mass, contact_analysis, contact_analysis_batch, grasp_outcome,
    grasp_outcomes, mirror_grasp, world_center_of_mass,
)

from conftest import bar, make_grid_object

P40 = PhysicsParams(clamp_force=40.0)
UP = np.pi / 2


def ray_march_lengths(obj, grasp, params, n_s=401, dt=5e-5):
    """Contact lengths by marching rays across the jaw band (independent of the clipping code).

    No contact is reported unless some of the band lies between the open jaws.
    """
    half = params.jaw_face_length / 2
    u = np.array([np.cos(grasp.angle), np.sin(grasp.angle)])
    v = np.array([-np.sin(grasp.angle), np.cos(grasp.angle)])
    s = np.linspace(-half, half, n_s)
    t = np.arange(-0.3, 0.3, dt)
    pts = (np.array(grasp.position)[None, None] + s[:, None, None] * v + t[None, :, None] * u)
    occ = obj.height_at(pts.reshape(-1, 2)).reshape(len(s), len(t)) > 0
    hit = occ.any(axis=1)
    between = occ[:, np.abs(t) < grasp.jaw_opening / 2].any()
    if not between:
        return 0.0, 0.0
    hi = np.where(hit, np.where(occ, t, -np.inf).max(axis=1), -np.inf)
    lo = np.where(hit, np.where(occ, t, np.inf).min(axis=1), np.inf)
    tau1, tau2 = hi.max(), lo.min()
    d = params.contact_depth
    c1 = hit & (hi >= tau1 - d)
    c2 = hit & (lo <= tau2 + d)
    return s[c1].max() - s[c1].min(), s[c2].max() - s[c2].min()


def test_com_examples(hammer_bar):
    sq = make_grid_object(np.ones((2, 2)))
    assert center_of_mass(sq)[:2] == pytest.approx((0.03, 0.03), abs=1e-15)
    x, y, m = center_of_mass(hammer_bar)
    assert x == pytest.approx(0.06, abs=1e-12) and m == pytest.approx(1.0)
    heavier = replace(hammer_bar, mass=hammer_bar.mass * 3.0)
    x3, y3, m3 = center_of_mass(heavier)
    assert x3 == pytest.approx(x, abs=1e-15) and m3 == pytest.approx(3.0)


def test_com_empty_object():
    with pytest.raises(DegenerateObjectError):
        center_of_mass(make_grid_object(np.zeros((2, 2))))


def test_grasp_candidate_validation():
    for kw in ({"angle": np.pi}, {"angle": -0.1}, {"angle": 0.0, "jaw_opening": 0.0}, {"angle": 0.0, "z": -1.0}):
        with pytest.raises(InvalidArgumentError):
            GraspCandidate((0.0, 0.0), **kw)
    with pytest.raises(InvalidArgumentError):
        PhysicsParams(torque_coeff=1.5)


def test_no_contact_far_away(uniform_bar):
    c = contact_analysis(uniform_bar, GraspCandidate((1.0, 1.0), 0.3), P40)
    assert not c.both_jaws_touch and c.jaw1_contact_length == 0 and grasp_outcome(uniform_bar, GraspCandidate((1.0, 1.0), 0.3), P40) == 0


def test_perpendicular_grasp_on_bar(uniform_bar):
    g = GraspCandidate((0.15, 0.015), UP)
    c = contact_analysis(uniform_bar, g, P40)
    assert c.jaw1_contact_length == pytest.approx(0.03, abs=1e-12)
    assert c.jaw2_contact_length == pytest.approx(0.03, abs=1e-12)
    assert c.com_offset == pytest.approx(0.0, abs=1e-12)
    assert c.mean_friction == pytest.approx(0.6)
    l1, l2 = ray_march_lengths(uniform_bar, g, P40)
    assert l1 == pytest.approx(0.03, abs=1e-4) and l2 == pytest.approx(0.03, abs=1e-4)


def test_outcome_examples(uniform_bar, hammer_bar):
    assert grasp_outcome(uniform_bar, GraspCandidate((0.15, 0.015), UP), P40) == 1
    off = contact_analysis(uniform_bar, GraspCandidate((0.27, 0.015), UP), P40)
    assert off.com_offset == pytest.approx(0.12)
    demand = 1.0 * 9.81 * 0.12
    capacity = 0.5 * 0.6 * 40 * (off.jaw1_contact_length + off.jaw2_contact_length)
    assert demand > capacity == pytest.approx(0.72)
    assert grasp_outcome(uniform_bar, GraspCandidate((0.27, 0.015), UP), P40) == 0
    # same silhouette, different mass distribution, different outcome
    centre = GraspCandidate((0.15, 0.015), UP)
    assert contact_analysis(hammer_bar, centre, P40).com_offset == pytest.approx(0.09)
    assert grasp_outcome(hammer_bar, centre, P40) == 0
    assert grasp_outcome(hammer_bar, GraspCandidate((0.06, 0.015), UP), P40) == 1


def test_grasp_along_bar_does_not_fit(uniform_bar):
    # closing along the bar: 0.3 m cross-section, wider than the jaws
    c = contact_analysis(uniform_bar, GraspCandidate((0.15, 0.015), 0.0), P40)
    assert c.both_jaws_touch and not c.object_fits


def test_axis_through_com_has_zero_offset():
    obj = place_object(generate_letter_object(4, 9), 3)
    com = world_center_of_mass(obj)
    for a in np.linspace(0, np.pi, 7, endpoint=False):
        u = np.array([np.cos(a), np.sin(a)])
        g = GraspCandidate(tuple(com + 0.01 * u), float(a))
        assert contact_analysis(obj, g, P40).com_offset < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 9), st.integers(0, 2**31))
def test_contact_lengths_match_ray_march(category, seed):
    obj = place_object(generate_letter_object(category, seed), seed)
    rng = np.random.default_rng(seed)
    g = sample_grasp_candidates(obj, 3, rng)
    batch = contact_analysis_batch(obj, g, P40)
    for i, row in enumerate(g):
        l1, l2 = ray_march_lengths(obj, GraspCandidate.from_row(row), P40)
        assert batch.jaw1_contact_length[i] == pytest.approx(l1, abs=5e-4)
        assert batch.jaw2_contact_length[i] == pytest.approx(l2, abs=5e-4)


def _random_pairs(seed, n_objects=8, per_object=25):
    rng = np.random.default_rng(seed)
    for i in range(n_objects):
        obj = place_object(generate_letter_object(int(rng.integers(10)), int(rng.integers(2**31))), int(rng.integers(2**31)))
        yield obj, sample_grasp_candidates(obj, per_object, rng)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.floats(1.01, 3.0))
def test_friction_and_mass_monotonicity(seed, factor):
    params = PhysicsParams(clamp_force=150.0)
    for obj, g in _random_pairs(seed, 3):
        base = grasp_outcomes(obj, g, params)
        grippier = replace(obj, friction=obj.friction * factor)
        assert not np.any((base == 1) & (grasp_outcomes(grippier, g, params) == 0))
        heavier = replace(obj, mass=obj.mass * factor)
        assert not np.any((base == 0) & (grasp_outcomes(heavier, g, params) == 1))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_mirror_equivariance(seed):
    params = PhysicsParams(clamp_force=150.0)
    for obj, g in _random_pairs(seed, 3):
        flipped = flip_object(obj)
        mirrored = [mirror_grasp(obj, GraspCandidate.from_row(r)) for r in g]
        assert np.array_equal(grasp_outcomes(obj, g, params), grasp_outcomes(flipped, mirrored, params))


def test_labels_deterministic():
    obj, g = next(_random_pairs(5, 1))
    assert np.array_equal(grasp_outcomes(obj, g, P40), grasp_outcomes(obj, g, P40))
