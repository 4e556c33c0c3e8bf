import hashlib
import logging
import os
import random

import numpy as np
import torch

logger = logging.getLogger(__name__)


def derive_seed(*parts) -> int:
    """Fold arbitrary parts (global seed, image id, epoch, repeat index) into a 63-bit seed"""
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << 63) - 1)


def set_seed(seed: int):
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def configure_determinism(strict: bool):
    """Strict mode: single thread, deterministic kernels. Used for scratch models and tests."""
    if strict:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.set_num_threads(1)
        # some CUDA kernels have no deterministic variant; warn instead of failing there
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False
        logger.debug("🔒 Strict deterministic mode enabled")
    else:
        torch.use_deterministic_algorithms(False)
