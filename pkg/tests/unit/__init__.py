# Unit tests for IS-hallucination-detection
