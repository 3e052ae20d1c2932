"""Keep freed array memory inside the process heap.

Training allocates and frees hundreds of multi-megabyte buffers per step.
With glibc defaults each one is an mmap/munmap pair, so every step pays a
fresh page fault per 4 KiB page; on virtualized hosts that costs more than
the arithmetic.  Disabling mmap-backed allocations and heap trimming lets
the allocator recycle the same pages instead.
"""

import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_MMAP_MAX = -4
_done = False


def retain_freed_memory():
    global _done
    if _done:
        return True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        ok = libc.mallopt(_M_MMAP_MAX, 0) == 1
        ok = libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30) == 1 and ok
    except (OSError, AttributeError):
        return False
    _done = ok
    return ok
