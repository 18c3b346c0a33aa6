"""Feed-forward adversarial video perturbations against a toy vision-language surrogate."""

import os

# Bit-exact reproducibility across runs needs a fixed BLAS reduction layout.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
