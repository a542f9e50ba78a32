"""
Django settings used by the ``flowmap`` command-line entry point.

Projects embedding flowmap can point ``DJANGO_SETTINGS_MODULE`` at their own settings instead, adding
``flowmap`` to ``INSTALLED_APPS`` and, optionally, ``FLOWMAP_PIPELINES_CONFIG`` and ``FLOWMAP_PROFILES_DIR``.
"""

SECRET_KEY = "flowmap-cli"

INSTALLED_APPS = (
    "flowmap",
)

USE_TZ = True

# Pipeline type -> list of step paths, a single step path, or {"pipeline": [...], "fail_silently": bool}.
FLOWMAP_PIPELINES_CONFIG = {}

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "console": {
            "format": "%(asctime)s %(levelname)s %(name)s %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "console",
        },
    },
    "loggers": {
        "flowmap": {
            "handlers": ["console"],
            "level": "INFO",
            "propagate": False,
        },
    },
}
