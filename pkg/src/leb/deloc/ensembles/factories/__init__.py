from ._shift_factories import *
