import pytest

from leb.deloc.ensembles import DistributionSpec, Field, draw, stream


@pytest.fixture(params=list(Field))
def gaussian_matrix(request):
    """A 64 x 64 gaussian matrix, real or complex."""
    return draw(DistributionSpec(field=request.param), stream(5), (64, 64))
