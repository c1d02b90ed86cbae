from ._spectral_window import *
