import warnings

import numpy as np
import pytest

from biplink import netdata
from biplink.netdata import ObservedTensor, SpeciesIndex, StudyMeta


def make_data(triples, dims, kinds=None, sites=None, tiers="default75", **kw):
    """Small in-memory dataset; every study defaults to network kind at its own site."""
    n_F, n_P, n_S = dims
    kinds = kinds or ["network"] * n_S
    sites = sites or [f"site{s}" for s in range(n_S)]
    index = SpeciesIndex(tuple(f"a{i}" for i in range(n_F)), tuple(f"p{j}" for j in range(n_P)),
                         tuple(f"s{s}" for s in range(n_S)))
    A = ObservedTensor.from_triples(triples, dims)
    meta = [StudyMeta(f"s{s}", kinds[s], sites[s], "c0", "z0") for s in range(n_S)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return netdata.assemble(index, A, meta, tiers=tiers, **kw)


@pytest.fixture
def tiny_data():
    return make_data([(0, 0, 0), (1, 1, 1)], (2, 2, 2))


@pytest.fixture(scope="session")
def reference():
    from biplink import synth
    return synth.generate(synth.SynthConfig())


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
