from .layers import FrameLayout, SPADE, initialize, sinusoidal_embedding, spade_inject
from .unet import INJECTION_MODES, Encoder, UNet3D, UNetConfig, appearnet_input, tsr_appearnet_input
