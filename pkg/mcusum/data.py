from typing import Any, Dict, Mapping

import numpy as np
import numpy.typing as npt

Data = Mapping[str, Any]
DictData = Dict[str, Any]

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]
IntArray = npt.NDArray[np.int64]
