"""Cross-modal training of 4D point-cloud video models with an image teacher branch.

The image branch and the joint transformer are used only during training;
the deployed model consumes point-cloud videos alone.
"""

__version__ = "0.1.0"
