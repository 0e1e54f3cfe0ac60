from __future__ import annotations

import numpy as np
import pytest
from helpers import make_graph, point_count, point_geometry
from hypothesis import given, settings
from hypothesis import strategies as st

from isim_forge.sampler import (
    SamplerConfig,
    SamplerError,
    box_from_geometry,
    iou,
    sample_batch,
    sample_layout,
    split_seed,
)


def _ship_harbor_graph(n: int):
    # Lexicographic ids: harbor=1, ship=2.
    geom = {1: point_geometry(0.5, 0.2, (0.3, 0.3)), 2: point_geometry(3.0, 0.03, (0.6, 0.6))}
    return make_graph(["ship", "harbor"], [0.0, 1.0], point_count(n), geom, [[0.0, 1.0], [1.0, 0.0]])


def test_point_mass_three_identical_boxes():
    g = make_graph(["dam"], [1.0], point_count(3), {1: point_geometry(2.0, 0.05, (0.5, 0.5))}, [[1.0]])
    lay = sample_layout(g, (800, 800), seed=0)
    assert len(lay.objects) == 3
    assert len({o.bbox for o in lay.objects}) == 1
    # side 40 px, w = 40 * sqrt(2) = 56.57; edges round separately: 372 and 428.
    x0, y0, x1, y1 = lay.objects[0].bbox
    assert (x0, x1, x1 - x0, y1 - y0) == (372, 428, 56, 28)


def test_ship_harbor_alternation():
    lay = sample_layout(_ship_harbor_graph(4), (800, 800), seed=123)
    assert [o.class_name for o in lay.objects] == ["ship", "harbor", "ship", "harbor"]


def test_box_from_geometry_hand_arithmetic():
    # side 80 px; w = 80 * 2 = 160, h = 80 / 2 = 40, centered at (400, 400)
    assert box_from_geometry(4.0, 0.1, (0.5, 0.5), (800, 800)) == (320, 380, 480, 420)
    # Clamped at the frame.
    assert box_from_geometry(1.0, 0.1, (0.0, 1.0), (800, 800)) == (0, 760, 40, 800)
    # Grown to the 2 px floor, kept inside the frame.
    assert box_from_geometry(1.0, 1e-6, (0.9999, 0.0), (800, 800)) == (798, 0, 800, 2)


def test_iou():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (10, 0, 20, 10)) == 0.0
    assert iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(50 / 150)


def test_determinism(synth_graph):
    a = sample_layout(synth_graph, (800, 800), seed=42)
    b = sample_layout(synth_graph, (800, 800), seed=42)
    assert a == b
    assert sample_layout(synth_graph, (800, 800), seed=43) != a


def test_count_clamped_to_max_objects():
    g = make_graph(["dam"], [1.0], point_count(150), {1: point_geometry(1.0, 0.01, (0.5, 0.5))}, [[1.0]])
    lay = sample_layout(g, (800, 800), seed=0, cfg=SamplerConfig(max_objects=100, max_iou=0))
    assert len(lay.objects) == 100


def test_invalid_config_and_size(synth_graph):
    with pytest.raises(SamplerError):
        sample_layout(synth_graph, (16, 800), seed=0)
    with pytest.raises(SamplerError):
        sample_layout(synth_graph, (800, 800), seed=0, cfg=SamplerConfig(max_iou=1.5))
    with pytest.raises(SamplerError):
        sample_batch(synth_graph, (800, 800), 0, count=0)


def test_boxes_in_frame_and_min_size(synth_graph):
    for seed in range(200):
        lay = sample_layout(synth_graph, (64, 48), seed=seed)
        W, H = lay.image_size
        assert 1 <= len(lay.objects) <= 100
        for o in lay.objects:
            x0, y0, x1, y1 = o.bbox
            assert 0 <= x0 and x1 <= W and 0 <= y0 and y1 <= H
            assert x1 - x0 >= 2 and y1 - y0 >= 2


def test_split_seed_rule():
    assert split_seed(7, 0) != split_seed(7, 1)
    assert split_seed(7, 3) == split_seed(7, 3)
    assert 0 <= split_seed(2**64 - 1, 10**6) < 2**64
    with pytest.raises(SamplerError):
        split_seed(-1, 0)


def test_batch_members_reproducible_individually(synth_graph):
    batch = sample_batch(synth_graph, (800, 800), base_seed=99, count=2)
    for i, lay in enumerate(batch):
        assert lay.seed == split_seed(99, i)
        assert sample_layout(synth_graph, (800, 800), split_seed(99, i)) == lay


def test_batch_independent_of_workers(synth_graph):
    serial = sample_batch(synth_graph, (800, 800), base_seed=5, count=40, jobs=1)
    parallel = sample_batch(synth_graph, (800, 800), base_seed=5, count=40, jobs=8)
    assert serial == parallel


def test_overlap_retries_reduce_same_class_collisions(synth_graph):
    def collisions(cfg):
        hits = 0
        for seed in range(300):
            lay = sample_layout(synth_graph, (800, 800), seed, cfg)
            objs = lay.objects
            for i in range(len(objs)):
                for j in range(i):
                    if objs[i].class_id == objs[j].class_id and iou(objs[i].bbox, objs[j].bbox) > 0.3:
                        hits += 1
        return hits

    assert collisions(SamplerConfig(max_iou=0.3)) < 0.2 * collisions(SamplerConfig(max_iou=0.0))


def test_retries_exhausted_accepts_as_is():
    g = make_graph(["dam"], [1.0], point_count(5), {1: point_geometry(1.0, 0.1, (0.5, 0.5))}, [[1.0]])
    lay = sample_layout(g, (800, 800), seed=0, cfg=SamplerConfig(max_iou=0.3, max_retries=3))
    assert len(lay.objects) == 5


def oracle_trace(first: int, successor: dict[int, int], n: int) -> list[int]:
    """The sampling loop with deterministic draws, written out by hand."""
    seq, cls = [], first
    for _ in range(n):
        seq.append(cls)
        cls = successor[cls]
    return seq


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_chain_matches_hand_trace(data):
    M = data.draw(st.integers(1, 8))
    succ = {m: data.draw(st.integers(1, M)) for m in range(1, M + 1)}
    first = data.draw(st.integers(1, M))
    n = data.draw(st.integers(1, 40))
    p_id = np.zeros((M, M))
    for a, b in succ.items():
        p_id[a - 1, b - 1] = 1.0
    p_ic = [1.0 if m == first else 0.0 for m in range(1, M + 1)]
    names = [f"c{m:02d}" for m in range(1, M + 1)]
    geom = {m: point_geometry(1.0, 0.05, (0.5, 0.5)) for m in range(1, M + 1)}
    g = make_graph(names, p_ic, point_count(n), geom, p_id)
    lay = sample_layout(g, (800, 800), seed=data.draw(st.integers(0, 2**32)))
    assert [o.class_id for o in lay.objects] == oracle_trace(first, succ, n)
