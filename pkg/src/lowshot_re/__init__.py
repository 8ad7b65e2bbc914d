"""Low-shot relation extraction with multi-choice matching."""

__version__ = "0.1.0"

from .relation_core import Episode, LabeledCorpus, RelationInstance, RelationType, sample_episode  # noqa: E402,F401
__all__ = ["Episode", "LabeledCorpus", "RelationInstance", "RelationType", "sample_episode"]
