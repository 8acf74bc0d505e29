#!/usr/bin/env python3
"""
Quick system check: configuration, thread cap and one small run of each
verifier. Runs under pytest, or directly as a printed checklist.
"""
import math
import os
import sys

from dotenv import load_dotenv

# Add parent directory to path
sys.path.insert(0, os.path.dirname(__file__))

load_dotenv()

import config
from core import coordinate_complex_subspace, wirtinger_check
from linear import coupling_shear, linear_nonsqueezing_verify
from maps import bump_profile, disjointness_bounds_verify, first_crossing, gaussian_rho, identity
from volume import estimate_projected_volume


def check_config():
    cfg = config.load_config()
    return cfg["dim"] % 2 == 0 and cfg["trials"] >= 0, f"dim={cfg['dim']} k={cfg['k']} trials={cfg['trials']}"


def check_threads():
    workers = config.worker_count()
    cap = config.get_thread_cap()
    return workers >= 1, f"{workers} worker(s)" + (f" (capped by {config.THREADS_ENV}={cap})" if cap else "")


def check_linear():
    report = linear_nonsqueezing_verify(coupling_shear(4), coordinate_complex_subspace(4, 1))
    return report.passed and abs(report.volume_ratio - math.sqrt(2.0)) < 1e-12, \
        f"coupling shear ratio {report.volume_ratio:.12f}"


def check_wirtinger():
    result = wirtinger_check([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
    return abs(result["gap"]) < 1e-14, f"gap {result['gap']:.1e} on a complex line"


def check_bump():
    report = disjointness_bounds_verify(bump_profile(1.0, 0.3), samples=10_000)
    return report["passed"], f"margins a={report['worst_margin_a']:.4f} b={report['worst_margin_b']:.4f}"


def check_rho():
    crossing = first_crossing(gaussian_rho())
    return 1.0 < crossing < 1.5, f"J2 drops below 1 at r={crossing:.6f}"


def check_estimator():
    estimate = estimate_projected_volume(identity(4), 1.0, coordinate_complex_subspace(4, 1),
                                         samples=200_000, seed=1)
    return abs(estimate.value - math.pi) / math.pi < 0.05, f"disc area {estimate.value:.5f} (pi = {math.pi:.5f})"


CHECKS = [
    ("CONFIGURATION", check_config),
    ("WORKER POOL", check_threads),
    ("LINEAR NONSQUEEZING", check_linear),
    ("WIRTINGER", check_wirtinger),
    ("BUMP PROFILE", check_bump),
    ("RHO-TWIST", check_rho),
    ("VOLUME ESTIMATOR", check_estimator),
]


def test_config():
    assert check_config()[0]


def test_threads():
    assert check_threads()[0]


def test_linear():
    assert check_linear()[0]


def test_wirtinger():
    assert check_wirtinger()[0]


def test_bump():
    assert check_bump()[0]


def test_rho():
    assert check_rho()[0]


def test_estimator():
    assert check_estimator()[0]


if __name__ == "__main__":
    print("=" * 60)
    print("🔍 SQUEEZE LAB - SYSTEM CHECK")
    print("=" * 60)

    failures = 0
    for number, (title, check) in enumerate(CHECKS, start=1):
        print(f"\n{number}. {title}")
        try:
            ok, detail = check()
        except Exception as e:
            ok, detail = False, f"Error: {e}"
        failures += not ok
        print(f"   {'✅' if ok else '❌'} {detail}")

    print("\n" + "=" * 60)
    print("✅ SYSTEM CHECK COMPLETE" if not failures else f"❌ {failures} CHECK(S) FAILED")
    print("=" * 60)
    print("\n💡 Next steps:")
    print("   1. Run an experiment: python cli.py linear --trials 1000")
    print("   2. Cap threads with SQUEEZE_LAB_THREADS in .env")
    print()
    sys.exit(1 if failures else 0)
