"""Body-channel-aware federated learning simulator (BodyFed-HBC)."""

__version__ = "0.1.0"
BUILD_ID = f"bodyfed {__version__}"
