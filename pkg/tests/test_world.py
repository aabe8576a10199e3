import json
import math

import pytest

from forestexplore.world import (
    DensityRegion,
    TreeObstacle,
    World,
    WorldError,
    WorldGenerationError,
    generate_forest,
    generate_tiled_forest,
    load_world,
    quadrant_regions,
    query_occupancy,
    save_world,
)


def test_generate_forest_tree_count_is_round_density_times_area():
    w = generate_forest(seed=1, extent=(50.0, 50.0, 2.0), density=0.05)
    assert len(w.trees) == 125  # round(0.05 * 2500)
    w = generate_forest(seed=1, extent=(30.0, 30.0, 2.0), density=0.15)
    assert len(w.trees) == 135  # round(0.15 * 900)


def test_generate_forest_zero_density_gives_empty_forest():
    w = generate_forest(seed=3, extent=(10.0, 10.0, 2.0), density=0.0)
    assert w.trees == ()
    assert len(w.spawn_points) == 1


def test_same_seed_same_world_different_seed_different_world():
    a = generate_forest(seed=42, extent=(20.0, 20.0, 2.0), density=0.1, n_spawns=2)
    b = generate_forest(seed=42, extent=(20.0, 20.0, 2.0), density=0.1, n_spawns=2)
    c = generate_forest(seed=43, extent=(20.0, 20.0, 2.0), density=0.1, n_spawns=2)
    assert a == b
    assert a != c


def test_trees_fit_inside_extent_and_span_full_height():
    w = generate_forest(seed=9, extent=(15.0, 25.0, 2.0), density=0.2)
    for t in w.trees:
        assert t.x - t.radius >= 0 and t.x + t.radius <= 15.0
        assert t.y - t.radius >= 0 and t.y + t.radius <= 25.0
        assert t.height == 2.0


def test_spawn_clearance_holds_against_every_tree():
    for seed in range(5):
        w = generate_forest(seed=seed, extent=(20.0, 20.0, 2.0), density=0.2,
                            spawn_clearance=1.0, n_spawns=3)
        for s in w.spawn_points:
            for t in w.trees:
                surface = math.hypot(s[0] - t.x, s[1] - t.y) - t.radius
                assert surface >= 1.0 - 1e-12


def test_spawn_points_pairwise_separated():
    w = generate_forest(seed=5, extent=(30.0, 30.0, 2.0), density=0.05, n_spawns=4)
    pts = w.spawn_points
    assert len(pts) == 4
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            assert math.hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]) >= 2.0


def test_overdense_request_raises_generation_error():
    with pytest.raises(WorldGenerationError):
        # 3x3 m with 1 m clearance around the centered spawn leaves almost no room
        generate_forest(seed=1, extent=(3.0, 3.0, 2.0), density=20.0,
                        radius_range=(0.4, 0.4), spawn_clearance=1.4)


def test_quadrant_regions_tile_and_counts_per_region():
    ext = (100.0, 200.0, 2.0)
    regions = quadrant_regions(ext, densities=(0.05, 0.10, 0.15, 0.20))
    w = generate_tiled_forest(seed=11, extent=ext, regions=regions)
    assert len(w.trees) == 2500  # (0.05+0.10+0.15+0.20) * 50*100
    # count trees whose center falls in each quadrant; inset sampling keeps
    # centers inside their own region
    counts = [0, 0, 0, 0]
    for t in w.trees:
        for i, r in enumerate(regions):
            if r.rect_min[0] <= t.x <= r.rect_max[0] and r.rect_min[1] <= t.y <= r.rect_max[1]:
                counts[i] += 1
                break
    assert counts == [250, 500, 750, 1000]


def test_single_region_tiling_matches_homogeneous_generation():
    ext = (20.0, 20.0, 2.0)
    region = DensityRegion(rect_min=(0.0, 0.0), rect_max=(20.0, 20.0), density=0.1)
    a = generate_forest(seed=4, extent=ext, density=0.1)
    b = generate_tiled_forest(seed=4, extent=ext, regions=(region,))
    assert a.trees == b.trees
    assert a.spawn_points == b.spawn_points


def test_tiling_validation_rejects_gaps_and_overlaps():
    ext = (10.0, 10.0, 2.0)
    gap = (DensityRegion((0.0, 0.0), (5.0, 10.0), 0.1),)
    with pytest.raises(WorldError):
        generate_tiled_forest(seed=1, extent=ext, regions=gap)
    overlap = (DensityRegion((0.0, 0.0), (6.0, 10.0), 0.1),
               DensityRegion((4.0, 0.0), (10.0, 10.0), 0.1))
    with pytest.raises(WorldError):
        generate_tiled_forest(seed=1, extent=ext, regions=overlap)


def test_query_occupancy_inside_tree_outside_box_and_free_space():
    tree = TreeObstacle(x=5.0, y=5.0, radius=0.5, height=2.0)
    w = World(extent=(10.0, 10.0, 2.0), trees=(tree,), spawn_points=((1.0, 1.0, 1.0),), seed=0)
    assert query_occupancy(w, (5.0, 5.0, 1.0))
    assert query_occupancy(w, (5.5, 5.0, 1.0))      # on the cylinder surface
    assert not query_occupancy(w, (5.6, 5.0, 1.0))
    assert not query_occupancy(w, (1.0, 1.0, 0.0))  # floor itself is inside the box
    assert query_occupancy(w, (-0.1, 1.0, 1.0))
    assert query_occupancy(w, (1.0, 1.0, 2.1))


def test_save_load_round_trip_is_exact(tmp_path):
    w = generate_forest(seed=21, extent=(12.0, 8.0, 2.0), density=0.3, n_spawns=2)
    p = tmp_path / "world.json"
    save_world(w, p)
    assert load_world(p) == w
    wt = generate_tiled_forest(seed=2, extent=(10.0, 10.0, 2.0),
                               regions=quadrant_regions((10.0, 10.0, 2.0)))
    save_world(wt, p)
    assert load_world(p) == wt


def test_load_reports_missing_and_unknown_fields(tmp_path):
    p = tmp_path / "bad.json"
    doc = {"format": 1, "seed": 0, "extent": [5, 5, 2], "trees": [], "spawns": [[1, 1, 1]]}
    for key in ("format", "seed", "extent", "trees", "spawns"):
        broken = {k: v for k, v in doc.items() if k != key}
        p.write_text(json.dumps(broken))
        with pytest.raises(WorldError, match=f"missing field {key}"):
            load_world(p)
    p.write_text(json.dumps({**doc, "weather": "rain"}))
    with pytest.raises(WorldError, match="unknown field weather"):
        load_world(p)
    p.write_text("{not json")
    with pytest.raises(WorldError, match="malformed"):
        load_world(p)


def test_load_rejects_tree_outside_extent(tmp_path):
    p = tmp_path / "bad.json"
    doc = {"format": 1, "seed": 0, "extent": [5.0, 5.0, 2.0],
           "trees": [{"x": 4.9, "y": 2.0, "radius": 0.3, "height": 2.0}],
           "spawns": [[1.0, 1.0, 1.0]]}
    p.write_text(json.dumps(doc))
    with pytest.raises(WorldError, match="outside extent"):
        load_world(p)
