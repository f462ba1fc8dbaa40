import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from sidewalk_snow.classify import query_from_model
from sidewalk_snow.cli import main
from sidewalk_snow.manifest import parse_manifest
from sidewalk_snow.sidewalk import BuildParams, build_sidewalk_model
from sidewalk_snow.synthetic import DEFAULT_QUERIES, QuerySpec, SceneSpec, SnowScenario, generate, write_bundle

settings.register_profile("suite", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")

SESSION_START = time.monotonic()

COVERAGE_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)

RICH_QUERIES = (
    DEFAULT_QUERIES
    + tuple(
        QuerySpec(f"cov_{int(round(f * 100)):03d}.png", 5.0 + 4.0 * f, 0.1, 0.3, SnowScenario("covers", f))
        for f in COVERAGE_FRACTIONS
    )
    + (
        QuerySpec("fixture_covered.png", 6.5, 0.0, 0.0, SnowScenario("covers", 0.91), "snow_covered"),
        QuerySpec("fixture_cleared.png", 6.5, 0.0, 0.0, SnowScenario("covers", 0.36), "cleared"),
        QuerySpec("far_away.png", 6.0, 0.0, 0.0, SnowScenario("covers", 1.0), None, gps_shift_m=500.0),
    )
)


def small_spec(seed=7, **kw):
    """Cheap scene for unit tests: two short runs, low resolution."""
    base = dict(
        seed=seed,
        runs=2,
        images_per_run=3,
        point_count=400,
        width=320,
        height=180,
        focal=250.0,
        queries=(QuerySpec("q.png", 2.0, 0.0, 0.0, SnowScenario("covers", 0.5), "snow_covered"),),
    )
    base.update(kw)
    return SceneSpec(**base)


def scene_of(bundle):
    return parse_manifest(bundle.manifest, Path("."), check_files=False)


def query_input(bundle, name):
    entry = scene_of(bundle).entry(name)
    return query_from_model(bundle.augmented_model, name, entry.gps, bundle.rasters[name])


def build(bundle, **params):
    return build_sidewalk_model(
        bundle.reference_model, bundle.rasters, scene_of(bundle).scene, BuildParams(**params)
    )


@pytest.fixture(scope="session")
def noisy_bundle():
    return generate(SceneSpec(queries=RICH_QUERIES))


@pytest.fixture(scope="session")
def noisy_model(noisy_bundle):
    return build(noisy_bundle)


@pytest.fixture(scope="session")
def clean_bundle():
    return generate(SceneSpec(queries=RICH_QUERIES, pixel_noise=0.0))


@pytest.fixture(scope="session")
def clean_model(clean_bundle):
    return build(clean_bundle)


@pytest.fixture(scope="session")
def small_bundle():
    return generate(small_spec())


def pytest_collection_modifyitems(config, items):
    # the wall-clock criterion has to observe the whole run
    last = [it for it in items if it.name == "test_criterion_9_suite_runtime"]
    items[:] = [it for it in items if it not in last] + last


@pytest.fixture(scope="session")
def noisy_dir(noisy_bundle, tmp_path_factory):
    return write_bundle(noisy_bundle, tmp_path_factory.mktemp("noisy"))


@pytest.fixture(scope="session")
def noisy_model_file(noisy_dir):
    """Sidewalk model built through the command line."""
    out = noisy_dir / "sidewalk_model.txt"
    assert main(["build", "--model-dir", str(noisy_dir / "sparse"), "--manifest", str(noisy_dir / "manifest.json"), "--out", str(out)]) == 0
    return out
