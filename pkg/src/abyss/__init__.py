"""Sender/receiver toolkit for image transmission over ultra-low-bandwidth links.

The sender shrinks an image to a byte-budgeted JPEG thumbnail, a simulated
acoustic channel carries it, and the receiver reconstructs the full-resolution
image with a GAN-trained super-resolution network.
"""

__version__ = "0.1.0"
