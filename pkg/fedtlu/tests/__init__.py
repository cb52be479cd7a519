# Tests for fedtlu.
