import random
import string
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from nlpgrid.registry import MetadataRecord, Registry
from nlpgrid.speclang import (
    ApplicationDescription,
    ComponentDescription,
    DataSourceDescription,
    PipelineStep,
    RequirementSet,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

SPH2PIPE_COMPONENT = ComponentDescription(
    identifier_uri="http://mywebserver.com/sph2pipe",
    identifier_name="sph2pipe",
    functionality_type="media_conversion",
    input_type="audio/wav",
    output_type="audio/sph",
    requires=RequirementSet(cpu="x86", os="unix", sourcestatus="compiled", license="ldc"),
)


@pytest.fixture
def sph2pipe_text():
    return (FIXTURES / "component_sph2pipe.xml").read_text()


@pytest.fixture
def sample_app_text():
    return (FIXTURES / "app_sample.xml").read_text()


@pytest.fixture
def app4_text():
    return (FIXTURES / "app_pipeline4.xml").read_text()


class TickingClock:
    """Deterministic clock advancing one minute per call."""

    def __init__(self, start="2024-01-01T00:00:00Z"):
        self.now = datetime.strptime(start, "%Y-%m-%dT%H:%M:%SZ").replace(
            tzinfo=timezone.utc
        )

    def __call__(self):
        current = self.now
        self.now = self.now + timedelta(minutes=1)
        return current


def fresh_registry(root=None, name="test-registry"):
    return Registry(root=root, name=name, clock=TickingClock())


# ---------------------------------------------------------------------------
# Random generators (shared by property tests and acceptance)
# ---------------------------------------------------------------------------

MEDIA_TYPES = [
    "audio/wav", "audio/sph", "audio/flac", "audio/mp3",
    "text/plain", "text/transcript", "text/annotations", "video/mpeg",
]
FUNCTIONALITIES = [
    "media_conversion", "speech_recognition", "forced_alignment",
    "text_annotation", "packaging",
]


def _word(rng, length=6):
    return "".join(rng.choice(string.ascii_lowercase) for _ in range(length))


def random_requirements(rng):
    return RequirementSet(
        cpu=rng.choice([None, "x86", "sparc", "ppc"]),
        os=rng.choice([None, "unix", "win32"]),
        proglang=rng.choice([None, "c", "java", "python"]),
        sourcestatus=rng.choice([None, "source", "compiled"]),
        license=rng.choice([None, "ldc", "gpl", "bsd"]),
        memory_mb=rng.choice([None, 0, 512, 4096]),
        storage_mb=rng.choice([None, 100, 10000]),
        deadline_s=rng.choice([None, 1.0, 3.5]),
    )


def random_component(rng, name=None, input_type=None, output_type=None):
    return ComponentDescription(
        identifier_uri=f"http://components.example.org/{_word(rng)}",
        identifier_name=name or _word(rng),
        functionality_type=rng.choice(FUNCTIONALITIES),
        input_type=input_type or rng.choice(MEDIA_TYPES),
        output_type=output_type or rng.choice(MEDIA_TYPES),
        requires=random_requirements(rng),
        work_units_per_mb=rng.choice([None, 0.5, 2.0]),
    )


def random_application(rng, max_steps=5):
    n_steps = rng.randint(1, max_steps)
    components = []
    names = []
    for i in range(n_steps):
        name = f"comp{i}_{_word(rng, 4)}"
        names.append(name)
        components.append(random_component(rng, name=name))
    # Chain with optional extra 'after' edges from earlier steps.
    steps = []
    use_after = rng.random() < 0.5
    for i in range(n_steps):
        after = None
        if use_after and i > 0:
            preds = {i}  # chain edge (ids are 1-based: i is predecessor of i+1)
            for j in range(1, i):
                if rng.random() < 0.3:
                    preds.add(j)
            after = frozenset(preds)
        elif use_after:
            after = frozenset()
        steps.append(
            PipelineStep(
                process_id=i + 1,
                component_name=names[i],
                after=after,
                bandwidth_hint_mbps=rng.choice([None, 10.0, 100.0]),
            )
        )
    datasources = (
        DataSourceDescription(
            uri=f"http://data.example.org/{_word(rng)}.bin",
            format=rng.choice(MEDIA_TYPES),
            language=rng.choice(["EN", "de", "fra"]),
            size_bytes=rng.choice([None, 1000, 25 * 1000 * 1000]),
        ),
    )
    variables = tuple(
        (f"var{_word(rng, 3)}", rng.choice([None, "value", "http://x"]))
        for _ in range(rng.randint(0, 2))
    )
    return ApplicationDescription(
        datasources=datasources,
        components=tuple(components),
        pipeline=tuple(steps),
        variables=variables,
    )


def random_record(rng, record_id=None):
    kind = rng.choice(["data", "component", "application", "node", "result"])
    extensions = {}
    if rng.random() < 0.8:
        extensions["functionality"] = rng.choice(FUNCTIONALITIES)
    for axis in ("cpu", "os", "license"):
        if rng.random() < 0.5:
            extensions[axis] = _word(rng, 4)
    if rng.random() < 0.7:
        extensions["input"] = rng.choice(MEDIA_TYPES)
        extensions["output"] = rng.choice(MEDIA_TYPES)
    dc = {
        "identifier": (f"urn:{_word(rng)}",),
        "title": (_word(rng).capitalize() + " " + _word(rng),),
    }
    if rng.random() < 0.5:
        dc["format"] = tuple(rng.sample(MEDIA_TYPES, rng.randint(1, 2)))
    return MetadataRecord(
        record_id=record_id or "",
        resource_kind=kind,
        dc=dc,
        extensions=extensions,
        payload_ref=rng.choice([None, "file:///tmp/x.xml"]),
    )


def make_converter(name, input_type, output_type):
    return ComponentDescription(
        identifier_uri=f"http://conv.example.org/{name}",
        identifier_name=name,
        functionality_type="media_conversion",
        input_type=input_type,
        output_type=output_type,
    )
