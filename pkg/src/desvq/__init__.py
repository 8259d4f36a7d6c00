"""Post-training quantization with learned singular-value band increments.

Set ``DSVQ_THREADS`` before import to cap the BLAS thread pools.
"""

import os as _os

if _os.environ.get("DSVQ_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ[_var] = _os.environ["DSVQ_THREADS"]

from . import _backend
from .analyze import compare_curves, disturbance_magnitude, expressiveness_curve
from .calibrate import (Block, CalibRecord, LinearLayer, QuantizedBlock, QuantizedLayer,
                        TrainConfig, calibrate_block, calibrate_layer, calibrate_model,
                        rtn_block)
from .container import read_container, write_container
from .desv import (BandIncrement, build_d, error_matrix, feasibility_check, grad_band,
                   lsi_reconstruct, map_band, reconstruct_weight)
from .errors import (CalibrationError, DesvqError, FormatError, InvalidInputError,
                     InvalidParamError, NumericalFailure, ShapeError, UnsupportedShapeError)
from .numerics import SvdFactors, reconstruct, svd
from .quantizer import (ClipParams, IntCodes, QuantConfig, QuantParams, compute_params,
                        dequantize, fake_quant, quantize)
from .transform import SmoothParams, apply_smooth, init_smooth, invert_smooth

backend = _backend.name
__version__ = "0.1.0"
