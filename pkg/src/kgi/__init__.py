"""KGI: retrieve, rerank, generate over a passage corpus for four
knowledge-intensive tasks (slot filling, question answering, fact checking,
dialog), with QA-assisted dialog routing and KILT-style evaluation."""

__version__ = "0.1.0"
