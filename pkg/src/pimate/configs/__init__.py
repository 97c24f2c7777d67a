"""Bundled experiment configs, one per reproduced figure panel."""
