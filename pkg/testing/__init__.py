"""Reference oracles and hypothesis strategies shared by the test-suite."""
