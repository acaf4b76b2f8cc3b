import sys

from feeder_analyzer.cli import main


def __getattr__(name):
    # `uvicorn main:app` : FastAPI n'est importé qu'à la demande
    if name == "app":
        from feeder_analyzer.api.app import app
        return app
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


if __name__ == "__main__":
    sys.exit(main())
