"""Convolutional code quantization for 2 to 2.75 bit weight storage."""
