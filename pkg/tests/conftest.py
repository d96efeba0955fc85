import pytest

from txlift import fixtures
from txlift.cefg import build_cefg
from txlift.ingest import parse_trace


@pytest.fixture(scope="session")
def webkey_fx():
    return fixtures.webkey()


@pytest.fixture(scope="session")
def webkey_stream(webkey_fx):
    return parse_trace(webkey_fx.native())


@pytest.fixture(scope="session")
def webkey_cefg(webkey_stream):
    return build_cefg(webkey_stream)


def scoped_traces(fx):
    """Parse a fixture and return ``(stream, in-scope function traces)``."""
    from txlift.scope import build_call_graph, extract_instructions, localize_scope

    stream = parse_trace(fx.native())
    cefg = build_cefg(stream)
    scope = localize_scope(build_call_graph(cefg), stream.initial_recipient)
    return stream, extract_instructions(scope, cefg)


@pytest.fixture
def traces_of():
    return scoped_traces


@pytest.fixture(scope="session")
def webkey_traces(webkey_cefg, webkey_stream):
    from txlift.scope import build_call_graph, extract_instructions, localize_scope

    scope = localize_scope(build_call_graph(webkey_cefg), webkey_stream.initial_recipient)
    return extract_instructions(scope, webkey_cefg)
