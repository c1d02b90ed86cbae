from ._ensembles import *
