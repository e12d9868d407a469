import os

ENV_VAR = "GSSPLAT_THREADS"


def resolve_threads(n_threads=None):
    """Worker thread count: explicit value, else $GSSPLAT_THREADS, else cpu count (0 = auto)."""
    if n_threads is None:
        raw = os.environ.get(ENV_VAR, "0")
        try:
            n_threads = int(raw)
        except ValueError:
            n_threads = 0
    if n_threads <= 0:
        n_threads = os.cpu_count() or 1
    return int(n_threads)
