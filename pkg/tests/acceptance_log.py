"""One summary line per acceptance criterion, printed at the end of the run."""
import time

LINES = []


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        return False


def record(label, ok, detail, elapsed, budget):
    over = "" if elapsed <= budget else " [over time budget]"
    LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail} "
                 f"({elapsed:.1f} s, budget {budget:g} s){over}")
