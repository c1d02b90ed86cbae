from ._trials import *
