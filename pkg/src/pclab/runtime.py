"""Process-wide run mode flags.

DETERMINISTIC forces sequential reductions / single-threaded BLAS where we can
and zeroes wall-clock fields in serialized outputs so repeated runs with the
same seed are bitwise identical.
"""

DETERMINISTIC = False


def set_deterministic(flag: bool):
    global DETERMINISTIC
    DETERMINISTIC = bool(flag)
    if flag:
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(1)
        except ImportError:
            pass
