"""VHS-to-HDTV frame translation: multi-task adversarial training and no-reference IQA."""

__version__ = "0.1.0"
