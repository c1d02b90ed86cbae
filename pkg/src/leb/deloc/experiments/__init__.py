from ._balancing import *
from ._localization import *
from ._experiments import *
