"""Out-of-core storage, pre-shuffling and shuffled minibatch loading for observation matrices."""

__version__ = "0.1.0"
