"""FastAPI service exposing runs, sweeps and dataset tools over HTTP."""
