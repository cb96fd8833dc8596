import os

# pin BLAS to one thread before numpy loads: keeps trainer timings honest
# and removes the only source of cross-run thread-count variation
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
