"""Run the flad_sim CLI."""

from flad_sim.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
