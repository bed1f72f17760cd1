import functools
import logging
import time

logger = logging.getLogger(__name__)


def timing_decorator(func):
    """Wrap func so it returns (result, elapsed milliseconds)"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        started = time.perf_counter()
        result = func(*args, **kwargs)
        elapsed_ms = (time.perf_counter() - started) * 1000
        logger.debug("%s took %.1f ms", func.__name__, elapsed_ms)
        return result, elapsed_ms
    return wrapper


class PerformanceTracker:
    """Wall time of optimizer sweeps and commands; the numbers are logged, never stored in records"""

    @staticmethod
    def track_execution(step_func):
        """Run step_func and return (result, seconds)"""
        started = time.perf_counter()
        result = step_func()
        return result, time.perf_counter() - started

    @staticmethod
    def create_metrics(wall_times, label):
        """Summary of per-step wall times in seconds"""
        if not wall_times:
            return {'label': label, 'steps': 0, 'total_s': 0.0, 'mean_s': 0.0, 'max_s': 0.0}
        total = sum(wall_times)
        return {
            'label': label,
            'steps': len(wall_times),
            'total_s': round(total, 3),
            'mean_s': round(total / len(wall_times), 4),
            'max_s': round(max(wall_times), 4),
        }
