"""
Test package for upscaled-ch.

Covers the homogenization engine, configuration, artifacts, the pipeline
stages and the command-line front end.
"""
