# This makes src a Python package
