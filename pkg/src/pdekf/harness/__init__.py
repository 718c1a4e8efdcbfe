"""CLI front end: experiment configs, batch runs, CSV/SVG emission, verification."""
