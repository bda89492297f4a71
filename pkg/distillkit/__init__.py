"""distillkit synthesizes a small learnable dataset from a large real one.

Installation
------------

.. highlight:: sh
.. code-block:: sh

    pip install distillkit

Usage
-----

Distill a toy dataset with a preset:

.. highlight:: py
.. code-block:: py

    from distillkit.data import make_blobs
    from distillkit.engine import distill, preset

    real = make_blobs(classes=3, per_class=100, dim=16, separation=5.0, seed=0)
    run = distill(real, preset("dc")._replace(iterations=200))

Command line:

.. highlight:: sh
.. code-block:: sh

    distillkit distill --dataset blobs --preset dc --ipc 1 --iters 200 --seed 0 --out runs/a

"""
import sys

if sys.version_info < (3, 8):
    raise EnvironmentError("Python 3.8 or above is required.")

# *IMPORTANT*: Don't manually change the version here. Use the 'bumpversion' utility.
__version__ = "0.1.0"
