from __future__ import annotations

import numpy as np
import pytest
from helpers import make_graph, point_count, point_geometry

from isim_forge.fidelity import (
    ABLATION_ROWS,
    FACTORS,
    FidelityError,
    ablate,
    evaluate_fidelity,
    format_ablation_table,
    format_report,
    run_ablation_grid,
)
from isim_forge.sampler import SamplerConfig, sample_batch, sample_layout

NO_OVERLAP_CHECK = SamplerConfig(max_iou=0.0)


def _five_class_graph(p_ic):
    names = ["a", "b", "c", "d", "e"]
    geom = {m: point_geometry(1.0 + m, 0.02 * m, (0.1 * m, 0.5)) for m in range(1, 6)}
    p_id = np.tile(np.asarray(p_ic, dtype=float), (5, 1))
    return make_graph(names, p_ic, point_count(1), geom, p_id)


def test_uniform_vs_point_mass_class_prior():
    uniform = _five_class_graph([0.2] * 5)
    point = _five_class_graph([1.0, 0.0, 0.0, 0.0, 0.0])
    layouts = sample_batch(uniform, (800, 800), 0, 10_000, NO_OVERLAP_CHECK)
    report = evaluate_fidelity(point, layouts)
    assert report.tv_class == pytest.approx(1 - 1 / 5, abs=0.02)


def test_repeated_point_mass_layout_scores_zero():
    g = make_graph(["dam"], [1.0], point_count(3), {1: point_geometry(2.0, 0.05, (0.4, 0.6))}, [[1.0]])
    lay = sample_layout(g, (800, 800), seed=0, cfg=NO_OVERLAP_CHECK)
    r = evaluate_fidelity(g, [lay] * 100)
    assert r.tv_class == pytest.approx(0, abs=1e-9)
    assert r.tv_count == pytest.approx(0, abs=1e-9)
    assert r.cooccurrence_tv == pytest.approx(0, abs=1e-9)
    assert r.per_class_geom[1] == pytest.approx({"tv_aspect": 0, "tv_scale": 0, "tv_location": 0}, abs=1e-9)


def test_too_few_layouts():
    g = _five_class_graph([0.2] * 5)
    layouts = sample_batch(g, (800, 800), 0, 99)
    with pytest.raises(FidelityError, match="at least 100"):
        evaluate_fidelity(g, layouts)


def test_self_consistency_and_determinism(synth_graph):
    layouts = sample_batch(synth_graph, (800, 800), 17, 3000, NO_OVERLAP_CHECK)
    a, b = evaluate_fidelity(synth_graph, layouts), evaluate_fidelity(synth_graph, layouts)
    assert a.to_dict() == b.to_dict()
    values = [a.tv_class, a.tv_count, a.cooccurrence_tv] + [v for d in a.per_class_geom.values() for v in d.values()]
    assert all(0.0 <= v <= 1.0 for v in values)
    assert a.tv_class <= 0.04 and max(a.axis(f) for f in FACTORS) <= 0.08


def test_ablate_none_returns_same_graph(synth_graph):
    assert ablate(synth_graph, []) is synth_graph


def test_ablate_all(synth_graph):
    g = ablate(synth_graph, FACTORS)
    prior = np.array([synth_graph.p_ic.prob(c) for c in range(1, synth_graph.M + 1)])
    assert np.allclose(g.p_id, np.tile(prior, (g.M, 1)))
    for geom in g.geometry.values():
        assert geom.aspect_ratio is synth_graph.geometry_all.aspect_ratio
        assert geom.scale is synth_graph.geometry_all.scale
        assert geom.location is synth_graph.geometry_all.location
    assert set(g.ablated) == set(FACTORS)
    # The source graph is untouched.
    assert not synth_graph.ablated


def test_ablate_unknown_factor(synth_graph):
    with pytest.raises(FidelityError, match="unknown"):
        ablate(synth_graph, ["colour"])


def test_grid_shape_and_monotone_evidence(synth_graph):
    assert len(ABLATION_ROWS) == 9 and ABLATION_ROWS[-1] == frozenset(FACTORS)
    rows = run_ablation_grid(synth_graph, n_layouts=1000, base_seed=3)
    by_enabled = {r.enabled: r.report for r in rows}
    pairs = 0
    for enabled, report in by_enabled.items():
        for f in enabled:
            without = by_enabled.get(enabled - {f})
            if without is not None:
                pairs += 1
                assert report.axis(f) <= without.axis(f) + 0.01
    assert pairs >= 8
    table = format_ablation_table(rows)
    assert len(table.splitlines()) == 11
    assert "summed_tv" in format_report(rows[-1].report)
