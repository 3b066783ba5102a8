"""Raw-waveform speech recognition with a learnable sinc filterbank frontend,
a plain CNN path, a bidirectional LSTM backbone, and CTC training, built on
numpy with explicit analytic gradients for every operation."""

__version__ = "0.1.0"
