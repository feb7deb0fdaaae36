# Unit tests for conelab.
