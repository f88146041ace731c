"""corpusmill: recycle a pool of web documents into a pre-training-ready dataset.

Stages: ingest and deduplicate raw shards, apply rule-based quality
filters, score with a hashed n-gram classifier, rewrite every document
through an LLM endpoint, select the top-k% of both streams, and mix them
under an explicit token/epoch budget. An analysis suite quantifies rewrite
quality, stream overlap, and n-gram diversity.
"""

__version__ = "0.1.0"
