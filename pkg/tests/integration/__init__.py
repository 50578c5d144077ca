# Integration tests for IS-hallucination-detection
