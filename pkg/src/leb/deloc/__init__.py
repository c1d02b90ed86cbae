from ._models import *
from ._validation import *
