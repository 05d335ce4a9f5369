"""Core module"""
from .tensor import Tensor, backward, no_grad
from .image_io import Image, load_image, save_image
from .metrics import YImage, psnr, rgb_to_y, ssim

__all__ = ['Tensor', 'backward', 'no_grad', 'Image', 'load_image', 'save_image',
           'YImage', 'psnr', 'rgb_to_y', 'ssim']
