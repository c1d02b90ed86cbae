from ._linalg import *
