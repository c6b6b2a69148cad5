"""
Simple runner script for the PPGAN toolkit.

Usage:
    python run_ppgan.py train --config configs/desk_digits.conf --out-dir runs/digits
    python run_ppgan.py calibrate --epsilon 10 --delta 1e-5 --q 0.01 --n-d 5
"""
import sys
import os

# Fix Windows console encoding for Unicode characters
if sys.platform == 'win32':
    try:
        sys.stdout.reconfigure(encoding='utf-8')
        sys.stderr.reconfigure(encoding='utf-8')
    except Exception:
        pass

# Add parent directory to path to import ppgan
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from ppgan import main

if __name__ == "__main__":
    sys.exit(main())
