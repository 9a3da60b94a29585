"""rmnp: uncertainty-aware multi-modal bot classification.

Three per-modality attentive neural processes (metadata, text, graph) are
fused through an evidential, reliability-weighted generalized product of
experts, trained with confidence-distillation and conflict-regularization
terms on top of the usual cross-entropy.
"""

import os

# Must happen before numpy is first imported anywhere in this process for
# the BLAS thread caps to take effect; setdefault keeps explicit user
# settings authoritative.
if "RMNP_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["RMNP_THREADS"])

__version__ = "0.1.0"
