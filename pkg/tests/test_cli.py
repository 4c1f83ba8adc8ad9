import json
import math

import numpy as np
import pytest

from chimera_basins import cli
from chimera_basins.basinmap import read_label_grid
from chimera_basins.cli import (
    ConfigError,
    RunArtifacts,
    StageError,
    bundled_configs,
    derive_seed,
    main,
    read_ppm,
    render_basin,
    run_pipeline,
    run_stage,
    validate_config,
)
from chimera_basins.vps import read_vps_matrix

MINIMAL = {"network": {"source": "two-population"}, "model": {"kind": "kuramoto"}}


def quick(tmp_path, name="run", n=12, **extra):
    doc = {
        "network": {"source": "two-population"},
        "model": {"kind": "kuramoto", "params": {"sigma": 1.0}},
        "integration": {"dt": 0.05, "transient_time": 10.0, "window_time": 10.0, "sample_stride": 2},
        "vps": {"max_lag": 20},
        "slice": {"axis1": [0, 0], "axis2": [5, 0], "resolution": [n, n]},
        "clustering": {"k": 3, "restarts": 3},
        "output_dir": str(tmp_path / name),
        "seed": 7,
    }
    doc.update(extra)
    return doc


def diag_paths(exc):
    return [p for p, _ in exc.value.diagnostics]


# ---------------------------------------------------------------- validation

def test_minimal_config_echoes_defaults():
    cfg = validate_config(MINIMAL, env={})
    for key in ("network", "model", "integration", "vps", "slice", "clustering", "fractal",
                "render", "output_dir", "seed", "workers", "chunk_size"):
        assert key in cfg
    assert cfg["integration"]["dt"] == 0.01
    assert cfg["model"]["params"] == {"sigma": 1.0, "gamma": 0.025}
    assert cfg["vps"]["corr_mode"] == "linear-valid" and cfg["vps"]["observable"] == "sin-phase"
    assert cfg["clustering"] == {"k": None, "elbow": {"k_max": 10}, "restarts": 10, "max_iter": 300}
    assert cfg["slice"]["base_state"] == "random"
    assert cfg["slice"]["random_range"] == [0.0, 2 * math.pi]
    assert cfg["network"]["drop_edge"] is True
    # normalization is idempotent
    again = validate_config(cfg, env={})
    assert json.dumps(again, sort_keys=True) == json.dumps(cfg, sort_keys=True)


def test_negative_dt_names_path():
    doc = dict(MINIMAL, integration={"dt": -0.1})
    with pytest.raises(ConfigError) as exc:
        validate_config(doc, env={})
    assert "integration.dt" in diag_paths(exc)


def test_k_and_elbow_conflict():
    doc = dict(MINIMAL, clustering={"k": 4, "elbow": {"k_max": 8}})
    with pytest.raises(ConfigError) as exc:
        validate_config(doc, env={})
    assert "conflict" in str(exc.value)


def test_unknown_keys_and_params():
    with pytest.raises(ConfigError) as exc:
        validate_config(dict(MINIMAL, vps={"betta": 1}), env={})
    assert diag_paths(exc) == ["vps"] and "betta" in str(exc.value)
    with pytest.raises(ConfigError) as exc:
        validate_config({"network": {"source": "two-population"},
                         "model": {"kind": "henon", "params": {"gamma": 1}}}, env={})
    assert "model.params.gamma" in diag_paths(exc)


def test_semantic_checks():
    bad = [
        ({"slice": {"axis1": [0, 0], "axis2": [0, 0]}}, "slice.axis2"),
        ({"slice": {"axis1": [10, 0]}}, "slice.axis1"),
        ({"slice": {"range1": [1.0, 0.0]}}, "slice.range1"),
        ({"vps": {"max_lag": 10**6}}, "vps.max_lag"),
        ({"integration": {"window_time": 200.05}}, "integration"),
        ({"fractal": {"scales": [64]}, "slice": {"resolution": [20, 20]}}, "fractal.scales"),
        ({"network": {"source": "bundled", "name": "nope"}}, "network.name"),
        ({"network": {"source": "file", "path": "/no/such/file"}}, "network.path"),
    ]
    for extra, path in bad:
        with pytest.raises(ConfigError) as exc:
            validate_config({**MINIMAL, **extra}, env={})
        assert path in diag_paths(exc), (extra, exc.value.diagnostics)


def test_one_indexed_axes():
    doc = {"network": {"source": "bundled", "name": "surrogate83"},
           "model": {"kind": "henon"},
           "slice": {"axis1": [83, 0], "axis2": [1, 0], "node_index_base": 1}}
    cfg = validate_config(doc, env={})
    model = cli.build_model(cfg["model"], cli.build_network(cfg["network"]))
    spec = cli.build_slice(cfg, model)
    assert spec.axis1 == (82, 0) and spec.axis2 == (0, 0)
    with pytest.raises(ConfigError):
        validate_config({**doc, "slice": {"axis1": [0, 0], "node_index_base": 1}}, env={})


def test_overrides_and_env():
    cfg = validate_config(MINIMAL, ["integration.dt=0.02", "slice.resolution=[5,7]", "output_dir=x"],
                          env={cli.WORKERS_ENV: "3"})
    assert cfg["integration"]["dt"] == 0.02
    assert cfg["slice"]["resolution"] == [5, 7]
    assert cfg["output_dir"] == "x"
    assert cfg["workers"] == 3
    with pytest.raises(ConfigError) as exc:
        validate_config(MINIMAL, env={cli.WORKERS_ENV: "zero"})
    assert diag_paths(exc) == [f"env:{cli.WORKERS_ENV}"]


def test_bundled_configs_validate():
    names = bundled_configs()
    assert {"hr6-smallnet", "hr-dti-full", "kuramoto-2pop", "henon-dti"} <= set(names)
    for name in names:
        cfg = validate_config(name, env={})
        assert cfg["description"]


def test_bundled_parameters():
    hr = validate_config("hr-dti-full", env={})
    assert hr["model"]["params"]["r"] == 0.005 and hr["model"]["chemical"]["alpha"] == 0.03
    assert hr["slice"]["resolution"] == [750, 750]
    assert "LONG" in hr["description"]
    he = validate_config("henon-dti", env={})
    assert he["model"]["params"] == {"p": 1.44, "b_map": 0.164, "sigma": 0.8}
    assert validate_config("kuramoto-2pop", env={})["model"]["params"]["gamma"] == 0.025
    small = validate_config("hr6-smallnet", env={})
    assert small["model"]["params"]["I"] == 3.27
    assert small["slice"]["base_state"] == -0.5


def test_derive_seed_streams():
    assert derive_seed(0, "kmeans") == derive_seed(0, "kmeans")
    assert len({derive_seed(s, k) for s in (0, 1) for k in ("kmeans", "palette", "base_state")}) == 6


# ---------------------------------------------------------------- rendering

def test_render_checkerboard(tmp_path):
    p = render_basin(np.array([[0, 1], [1, 0]]), 0, tmp_path / "c.ppm")
    img = read_ppm(p)
    assert img.shape == (2, 2, 3)
    assert np.array_equal(img[0, 0], img[1, 1]) and np.array_equal(img[0, 1], img[1, 0])
    assert not np.array_equal(img[0, 0], img[0, 1])


def test_render_monochrome_and_sentinel(tmp_path):
    img = read_ppm(render_basin(np.full((3, 4), 2), 5, tmp_path / "m.ppm"))
    assert img.shape == (3, 4, 3) and len(np.unique(img.reshape(-1, 3), axis=0)) == 1
    g = np.zeros((2, 2), int)
    g[0, 1] = -1
    img = read_ppm(render_basin(g, 5, tmp_path / "s.ppm"))
    # grid row 0 is drawn on the bottom image row
    assert img[1, 1].tolist() == [0, 0, 0] and img[0, 1].sum() > 0


def test_render_size_and_header(tmp_path):
    p = render_basin(np.zeros((750, 750), int), 0, tmp_path / "big.ppm")
    raw = p.read_bytes()
    assert raw.startswith(b"P6\n750 750\n255\n")
    assert len(raw) == len(b"P6\n750 750\n255\n") + 750 * 750 * 3


def test_render_rejects_bad_labels(tmp_path):
    with pytest.raises(ValueError):
        render_basin(np.array([[0, -2]]), 0, tmp_path / "x.ppm")


def test_palette_deterministic_distinct():
    a = cli.palette(12, 3)
    assert np.array_equal(a, cli.palette(12, 3))
    assert len(np.unique(a, axis=0)) == 12


# ---------------------------------------------------------------- pipeline

def test_pipeline_artifacts_and_provenance(tmp_path):
    cfg = validate_config(quick(tmp_path), env={})
    art = run_pipeline(cfg, log=lambda m: None)
    assert art.missing() == []
    assert read_vps_matrix(art.vps_matrix).shape == (144, 90)
    grid = read_label_grid(art.label_grid)
    assert grid.shape == (12, 12) and set(np.unique(grid)) <= {0, 1, 2}
    prov = json.loads(art.provenance.read_text())
    assert prov["config"] == json.loads(json.dumps(cfg))
    assert set(prov["stages"]) == set(cli.STAGES)
    assert "code_version" in prov and "seeds" in prov
    frac = json.loads(art.dimension_report.read_text())
    assert "box_counting" in frac
    assert read_ppm(art.basin_image).shape == (12, 12, 3)


def test_pipeline_deterministic_and_resumes(tmp_path):
    logs = []
    a = run_pipeline(validate_config(quick(tmp_path, "a"), env={}), log=lambda m: None)
    b = run_pipeline(validate_config(quick(tmp_path, "b"), env={}), log=lambda m: None)
    for name in ("vps_matrix", "label_grid", "dimension_report", "basin_image", "boundary_image",
                 "clustering"):
        assert getattr(a, name).read_bytes() == getattr(b, name).read_bytes(), name
    before = a.label_grid.stat().st_mtime_ns
    run_pipeline(validate_config(quick(tmp_path, "a"), env={}), log=logs.append)
    assert all("skipped" in m for m in logs) and len(logs) == len(cli.STAGES)
    assert a.label_grid.stat().st_mtime_ns == before


def test_changed_config_reruns_later_stages(tmp_path):
    run_pipeline(validate_config(quick(tmp_path), env={}), log=lambda m: None)
    logs = []
    cfg = validate_config(quick(tmp_path, clustering={"k": 2, "restarts": 3}), env={})
    art = run_pipeline(cfg, log=logs.append)
    assert any("sweep: up to date" in m for m in logs)
    assert not any("cluster: up to date" in m for m in logs)
    assert set(np.unique(read_label_grid(art.label_grid))) <= {0, 1}


def test_elbow_clustering_recorded(tmp_path):
    cfg = validate_config(quick(tmp_path, clustering={"elbow": {"k_max": 5}, "restarts": 3}), env={})
    art = run_pipeline(cfg, log=lambda m: None)
    doc = json.loads(art.clustering.read_text())
    assert doc["k_source"] == "elbow" and len(doc["elbow_curve"]) == 5


def test_stage_needs_previous_artifacts(tmp_path):
    cfg = validate_config(quick(tmp_path), env={})
    with pytest.raises(StageError):
        run_stage(cfg, "cluster", log=lambda m: None)


def test_sweep_resume_matches_uninterrupted(tmp_path):
    ref = run_stage(validate_config(quick(tmp_path, "ref", chunk_size=32), env={}), "sweep",
                    log=lambda m: None)
    cfg = validate_config(quick(tmp_path, "cut", chunk_size=32), env={})
    art = run_stage(cfg, "sweep", log=lambda m: None)
    chunks = sorted(art.checkpoints.rglob("chunk_*.npz"))
    assert len(chunks) == 5
    chunks[2].unlink()
    art.vps_matrix.unlink()
    run_stage(cfg, "sweep", log=lambda m: None)
    assert art.vps_matrix.read_bytes() == ref.vps_matrix.read_bytes()


# ---------------------------------------------------------------- command line

def test_main_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(dict(MINIMAL, integration={"dt": -1})))
    assert main(["validate", str(bad)]) == 2
    assert "integration.dt" in capsys.readouterr().err
    assert main(["validate", "no-such-config"]) == 2
    good = tmp_path / "good.json"
    good.write_text(json.dumps(quick(tmp_path)))
    assert main(["validate", str(good)]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 7
    assert main(["cluster", str(good)]) == 1
    assert main(["validate", "--list"]) == 0
    assert "kuramoto-2pop" in capsys.readouterr().out


def test_main_run_and_render(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(quick(tmp_path, n=6)))
    out = tmp_path / "cli-out"
    assert main(["run", str(good), "--out", str(out), "--set", "clustering.k=2"]) == 0
    art = RunArtifacts.in_dir(out)
    assert art.missing() == []
    img = tmp_path / "img.ppm"
    assert main(["render", str(art.label_grid), "--palette-seed", "3", "--boundary-overlay",
                 "-o", str(img)]) == 0
    assert read_ppm(img).shape == (6, 6, 3)
    assert main(["render", str(tmp_path / "missing.csv"), "-o", str(img)]) == 1


def test_main_net_commands(tmp_path, capsys):
    assert main(["net", "info", "bundled:six-node"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n_nodes"] == 6 and info["edge_count"] == 6
    p = tmp_path / "two.txt"
    assert main(["net", "generate", "-o", str(p)]) == 0
    assert main(["net", "info", str(p), "--format", "edge-list"]) == 0
    assert json.loads(capsys.readouterr().out)["n_nodes"] == 10
    dense = tmp_path / "two_dense.txt"
    assert main(["net", "convert", str(p), str(dense), "--from", "edge-list", "--to", "dense"]) == 0
    assert main(["net", "info", str(tmp_path / "nope.txt")]) == 1
