from ._test_projection import *
