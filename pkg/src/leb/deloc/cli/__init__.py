from ._config import *
from ._reports import *
from ._cli import *
