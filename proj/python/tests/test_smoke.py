import json
import math

import numpy as np
import pytest

import availnet


def blobs(seed, per_blob=40, sigma_deg=0.03):
    rng = np.random.default_rng(seed)
    centers = np.array([[40.0, -3.0], [45.5, -3.0], [42.75, 4.5]])
    pts = np.concatenate([c + rng.normal(0.0, sigma_deg, size=(per_blob, 2)) for c in centers])
    labels = np.repeat(np.arange(3), per_blob)
    return pts, labels


def test_haversine():
    r = availnet.EARTH_RADIUS_KM
    assert availnet.haversine(0, 0, 0, 180) == pytest.approx(math.pi * r, rel=1e-12)
    assert availnet.haversine(10, 20, 10, 20) == 0.0
    with pytest.raises(availnet.ValidationError):
        availnet.haversine(91, 0, 0, 0)


def test_kmeans_and_gap():
    pts, labels = blobs(1)
    fit = availnet.kmeans_haversine(pts, 3, seed=2)
    assert fit["centroids"].shape == (3, 2)
    assignments = np.asarray(fit["assignments"])
    # each generating blob lands in exactly one cluster
    for c in range(3):
        assert len(set(assignments[labels == c])) == 1
    costs = fit["cost_history"]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    gap = availnet.gap_statistic(pts, list(range(1, 7)), seed=3, references=5)
    assert gap["chosen_k"] == 3
    with pytest.raises(availnet.ShapeError):
        availnet.kmeans_haversine(np.zeros((4, 3)), 2)


def test_gaf_fields():
    x = availnet.rescale_to_unit(np.array([0.0, 2.0, 1.0, 4.0]))
    assert x.min() == -1.0 and x.max() == 1.0
    s, d = availnet.gasf(x), availnet.gadf(x)
    assert s.shape == (4, 4)
    np.testing.assert_array_equal(s, s.T)
    np.testing.assert_array_equal(d, -d.T)
    phi = np.arccos(x)
    np.testing.assert_allclose(s, np.cos(phi[:, None] + phi[None, :]), atol=1e-12)
    np.testing.assert_allclose(d, np.sin(phi[:, None] - phi[None, :]), atol=1e-12)
    gs, gd = availnet.encode_gaf_pair(np.zeros(8), paa_size=4)
    assert gs.shape == gd.shape == (4, 4)
    assert availnet.paa(np.arange(6.0), 3).tolist() == [0.5, 2.5, 4.5]
    assert availnet.perturb_zero_series(np.zeros(3)).tolist() == [1e-3] * 3
    with pytest.raises(availnet.ValidationError):
        availnet.gadf(x, form="product")


def test_labels_and_scheduler():
    listed = ["000", "100", "010", "110", "001", "101", "011", "111"]
    for c, bits in enumerate(listed):
        decoded = availnet.decode_label(c, 3)
        assert "".join(map(str, decoded)) == bits
        assert availnet.encode_label(decoded) == c
    assert [availnet.scheduler_rate(e) for e in (0, 10, 25)] == [0.1, 0.05, 0.025]


def write_trace(path):
    rng = np.random.default_rng(4)
    rows = ["service_id,lat,lon,timestamp"]
    places = {"a": (41.15, -8.61), "b": (38.72, -9.14), "c": (40.42, -3.70)}
    for day in range(7, 10):
        for hour in range(24):
            for sid, (lat, lon) in places.items():
                jitter = rng.normal(0.0, 0.003, size=2)
                rows.append(f"{sid},{lat + jitter[0]:.6f},{lon + jitter[1]:.6f},2014-04-{day:02d}T{hour:02d}:00:00")
    path.write_text("\n".join(rows) + "\n")


def test_cli_cluster_and_container(tmp_path):
    write_trace(tmp_path / "trace.csv")
    config = {
        "data": {"trace": "trace.csv", "min_count": 10},
        "clustering": {"k_max": 5, "references": 4},
        "seeds": {"clustering": 1, "split": 2, "stage1": 3, "stage2": 4},
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    status, out, err = availnet.run_cli(["cluster", "--config", str(tmp_path / "config.json")])
    assert status == 0, err
    manifest = json.loads((tmp_path / "out" / "manifests" / "cluster.json").read_text())
    assert manifest["results"]["chosen_k"] == 3

    model = availnet.load_container(tmp_path / "out" / "clusters.avm")
    assert model["type"] == "cluster"
    assert model["tensors"]["centroids"].shape == (3, 2)
    assert model["config"]["k"] == 3

    (tmp_path / "bad.avm").write_bytes(b"AVMC\x01\0\0\0" + b"\0" * 20)
    with pytest.raises(availnet.CorruptionError):
        availnet.load_container(tmp_path / "bad.avm")
    with pytest.raises(availnet.Error):
        availnet.load_container(tmp_path / "missing.avm")


def test_cli_usage_errors():
    status, _, err = availnet.run_cli(["frobnicate"])
    assert status == 2
    assert err.startswith("error: usage: unknown subcommand 'frobnicate'")
