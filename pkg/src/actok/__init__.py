"""Action tokenization toolkit.

Tokenizers for continuous robot actions (a per-dimension quantile binning
baseline and a compressed normalize/DCT/quantize/BPE chunk codec), a
deterministic toy manipulation simulator with a scripted expert, retrieval
policies emitting token sequences, chunked-action executors, and a
success-rate evaluation harness.
"""

__version__ = "0.1.0"
