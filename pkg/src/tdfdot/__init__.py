"""Time-domain fluorescence diffuse optical tomography with approximate peak times."""

from .model import OpticalMedium, PointTarget, Roi, SdPair, TargetSet

__all__ = ["OpticalMedium", "PointTarget", "Roi", "SdPair", "TargetSet"]
__version__ = "0.1.0"
