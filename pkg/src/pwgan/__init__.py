"""GAN waveform vocoder (dilated-conv generator, multi-resolution STFT loss) on a small numpy autodiff engine."""

__version__ = "0.1.0"
