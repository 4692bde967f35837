"""Data-space connector: federated metadata store, DCAT facade, ODRL policies
and contract negotiation / transfer processes."""

__version__ = "0.1.0"
