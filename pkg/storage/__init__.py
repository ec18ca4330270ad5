"""On-disk formats and run manifests."""
