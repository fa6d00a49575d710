import subprocess
import sys
from pathlib import Path

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


def test_benchmark_runs_and_backends_agree():
    res = subprocess.run([sys.executable, str(BENCH), "--users", "30", "--items", "20", "--repeat", "1"],
                         capture_output=True, text=True, check=True)
    assert "mf_sgd_epoch" in res.stdout and "knn_topk" in res.stdout
    assert "DIFFER" not in res.stdout
