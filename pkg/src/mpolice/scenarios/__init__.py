"""Bundled scenario files (*.scn), loadable by bare name."""
