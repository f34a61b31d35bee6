import json
from types import SimpleNamespace

import pytest

from citypulse.config import PipelineConfig
from citypulse.ingest import write_events_ndjson
from citypulse.pipeline import run_pipeline
from citypulse.synth import SynthConfig, city_geojson, generate_city, generate_events

# Acceptance-scale city: 100 zones, 2000 users, ~100k events on three workdays.
BIG_CITY_CONFIG = SynthConfig(
    seed=42,
    n_zones=100,
    n_users=2000,
    events_per_user_per_day=17.0,
    n_days=3,
    home_bias=0.3,
    centre_decay_per_km=0.12,
    class_mix={
        "residential": 0.40,
        "mixed": 0.25,
        "activity:education": 0.15,
        "activity:retail": 0.10,
        "activity:office": 0.10,
    },
)


def materialize(config: SynthConfig, root):
    """Generate a city, write its input files, and run the full pipeline."""
    city = generate_city(config)
    events, truth = generate_events(city)
    zones_path = root / "zones.geojson"
    events_path = root / "events.ndjson"
    zones_path.write_text(json.dumps(city_geojson(city)), encoding="utf-8")
    write_events_ndjson(events, events_path)
    pipe_config = PipelineConfig(
        events_path=events_path,
        zones_path=zones_path,
        output_dir=root / "out",
        timezone=config.timezone,
        centre_lon=city.centre.lon,
        centre_lat=city.centre.lat,
    )
    result = run_pipeline(pipe_config)
    return SimpleNamespace(city=city, events=events, truth=truth,
                           zones_path=zones_path, events_path=events_path,
                           config=pipe_config, result=result, out=result.output_dir)


@pytest.fixture(scope="session")
def big_city(tmp_path_factory):
    return materialize(BIG_CITY_CONFIG, tmp_path_factory.mktemp("bigcity"))


@pytest.fixture(scope="session")
def small_city(tmp_path_factory):
    config = SynthConfig(seed=5, n_zones=36, n_users=150,
                         events_per_user_per_day=6.0, n_days=3,
                         home_bias=0.5, centre_decay_per_km=0.1)
    return materialize(config, tmp_path_factory.mktemp("smallcity"))
