"""
Runner for flowmap extension pipelines.

A pipeline type names a point where flowmap hands its data to a configurable list of steps. The list is
read from ``FLOWMAP_PIPELINES_CONFIG`` in Django settings, or from the pipeline class default.
"""
from logging import getLogger

from django.conf import settings
from django.utils.module_loading import import_string

from flowmap.exceptions import FlowMapException

log = getLogger(__name__)

# Returned by _run_step when a step asks to stop the pipeline.
_STOP = object()


class FlowMapPipeline:
    """
    Base class of flowmap extension pipelines.

    Subclasses set ``pipeline_type`` and may set ``default_pipeline_config``; they expose a domain
    specific classmethod that calls ``run_pipeline`` and checks its output.
    """

    pipeline_type = ""
    default_pipeline_config = {}

    def __repr__(self):
        return f"<FlowMapPipeline: {self.pipeline_type}>"

    @classmethod
    def get_steps_for_pipeline(cls, pipeline, fail_silently):
        """
        Import the step classes named by dotted path in ``pipeline``.

        A path that cannot be imported is logged, then skipped when ``fail_silently`` is set and
        re-raised otherwise.

        Returns:
            list: step classes, in pipeline order.
        """
        imported = []
        for path in pipeline:
            try:
                step_class = import_string(path)
            except ImportError:
                log.exception("Cannot import pipeline step '%s'", path)
                if not fail_silently:
                    raise
            else:
                imported.append(step_class)
        return imported

    @classmethod
    def get_pipeline_configuration(cls):
        """
        Normalize this pipeline's configuration into ``(pipeline, fail_silently, extra_config)``.

        Accepted shapes are a dictionary (``pipeline`` and ``fail_silently`` keys, every other key is
        extra configuration for the steps), a list of step paths and a single step path.
        """
        config = cls.get_pipeline_config()

        if isinstance(config, dict):
            extra_config = dict(config)
            return extra_config.pop("pipeline", []), extra_config.pop("fail_silently", False), extra_config
        if isinstance(config, list):
            return config, False, {}
        if isinstance(config, str) and config:
            return [config], False, {}
        return [], False, {}

    @classmethod
    def get_pipeline_config(cls):
        """
        Raw configuration of this pipeline type: the settings entry when present, else the class default.
        """
        configured = getattr(settings, "FLOWMAP_PIPELINES_CONFIG", {})
        return configured.get(cls.pipeline_type, cls.default_pipeline_config)

    @classmethod
    def run_pipeline(cls, **kwargs):
        """
        Run the configured steps over ``kwargs`` and return the accumulated output.

        Each step is called with everything accumulated so far. A dictionary result is merged into the
        accumulated output; any other result stops the pipeline. ``FlowMapException`` is always
        re-raised, other exceptions only when the pipeline does not fail silently.
        """
        pipeline, fail_silently, extra_config = cls.get_pipeline_configuration()
        if not pipeline:
            return kwargs

        step_kwargs = {"pipeline_type": cls.pipeline_type, "running_pipeline": pipeline, **extra_config}
        output = dict(kwargs)
        for step_class in cls.get_steps_for_pipeline(pipeline, fail_silently):
            result = cls._run_step(step_class, step_kwargs, output, fail_silently)
            if result is _STOP:
                break
            output.update(result)
        return output

    @classmethod
    def _run_step(cls, step_class, step_kwargs, output, fail_silently):
        name = step_class.__name__
        try:
            result = step_class(**step_kwargs).run_filter(**output)
        except FlowMapException:
            log.exception("Step '%s' of %s raised a flowmap error", name, cls.pipeline_type)
            raise
        except Exception:  # pylint: disable=broad-except
            log.exception("Step '%s' of %s failed", name, cls.pipeline_type)
            if not fail_silently:
                raise
            return {}

        if not isinstance(result, dict):
            log.info("Step '%s' stopped %s by returning %s", name, cls.pipeline_type, type(result).__name__)
            return _STOP
        return result
