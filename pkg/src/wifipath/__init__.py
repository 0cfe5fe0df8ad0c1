"""WiFi noise-pathology detection pipeline: I/Q synthesis, prompt datasets,
and desk-scale encoder/decoder transformer fine-tuning (with LoRA)."""

__version__ = "0.1.0"
