from .__version__ import __version__
from .model import *
from .util import *
from .imgproc import *
from .distort import *
from .features import *
from .scorer import *
from .losses import *
from .prompts import *
from .dataset import *
from .evaluation import *
from .training import *
from .config import *
