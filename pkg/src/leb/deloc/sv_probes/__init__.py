from ._sv_probes import *
from ._calibration import *
