from .io import read_dataset, write_dataset, write_frame

__all__ = ["read_dataset", "write_dataset", "write_frame"]
