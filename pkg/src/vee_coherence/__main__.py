"""Module entry point."""

from vee_coherence.cli import main


if __name__ == "__main__":
    main()
