from .public import *
from .pytorch import *
from .logging import *
from .ckpt_utils import *
from .pretty_printing import *
from .ram import *
from .program_args import *
from .registry import *
