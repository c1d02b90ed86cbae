from ._distances import *
