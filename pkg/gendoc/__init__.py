"""GenDoc - Desk-scale multimodal encoder-decoder for document understanding"""

__version__ = "0.1.0"
