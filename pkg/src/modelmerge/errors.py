"""Exception hierarchy shared by all modelmerge components."""


class ModelMergeError(Exception):
    """Base class for every error raised by this package."""


class FormatError(ModelMergeError):
    """Malformed archive: bad header, bad offsets, bad dtype tag, truncation."""


class MissingShardError(FormatError):
    """A shard listed in the index file is absent on disk."""


class ShardConflictError(FormatError):
    """The same tensor name appears in more than one shard."""


class DtypeError(ModelMergeError):
    """Unsupported or mismatched element type."""


class CompatibilityError(ModelMergeError):
    """Checkpoints disagree on tensor names or shapes."""


class ParameterError(ModelMergeError):
    """A merge hyperparameter is outside its documented range."""


class LayoutError(ModelMergeError):
    """A projection tensor does not factor into the configured head layout."""


class RecipeError(ModelMergeError):
    """A recipe file is syntactically or semantically invalid."""
