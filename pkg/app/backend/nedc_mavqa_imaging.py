#!/usr/bin/env python
#
# file: app/backend/nedc_mavqa_imaging.py
#
# revision history:
#
# 20241019 (MV): initial version
#
# usage:
#  import nedc_mavqa_imaging as mvi
#
# This file contains the image helpers: decoding PNG/JPEG into 8-bit RGB,
# cropping detections with a relative margin, sanitizing detector boxes and
# the canonical PNG encoding used for transport and request fingerprints.
#------------------------------------------------------------------------------

# import system modules
#
import io
import math
import os
from decimal import Decimal, ROUND_CEILING, ROUND_FLOOR

# import computational modules
#
import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

# import logging modules
#
from loguru import logger

# import NEDC modules
#
import nedc_debug_tools as ndt
import nedc_mavqa_types as mvt
from nedc_mavqa_errors import (ImageFormatError, InvalidInputError,
                               UnsalvageableBoxError)

#------------------------------------------------------------------------------
#
# global variables are listed here
#
#------------------------------------------------------------------------------

# pixel layout
#
MODE_RGB = "RGB"
NCHANNELS = int(3)

# default relative margin added around a crop
#
DEF_PAD_FRAC = 0.1

# fixed PNG encoder settings
#
PNG_FORMAT = "PNG"
PNG_COMPRESS_LEVEL = int(6)

# set the debug level for this module
#
dbgl = ndt.Dbgl()

#------------------------------------------------------------------------------
#
# classes are listed here
#
#------------------------------------------------------------------------------

class Image:
    """
    Class: Image

    arguments:
     pixels: a uint8 array of shape (height, width, 3)

    description:
     an immutable 8-bit RGB image. the array is copied and marked
     read-only.
    """

    def __init__(self, pixels):
        arr = np.array(pixels, dtype=np.uint8, copy=True)
        if arr.ndim != 3 or arr.shape[2] != NCHANNELS or \
                arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError("not an RGB pixel array (%s)" %
                                    (arr.shape,))
        arr.setflags(write=False)
        self._pixels = arr

    @property
    def pixels(self):
        return self._pixels

    @property
    def width(self):
        return int(self._pixels.shape[1])

    @property
    def height(self):
        return int(self._pixels.shape[0])

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self._pixels, other._pixels)

    def __hash__(self):
        return hash((self.width, self.height, self._pixels.tobytes()))

    def __repr__(self):
        return "Image(%d, %d)" % (self.width, self.height)
#
# end of class

#------------------------------------------------------------------------------
#
# functions listed here
#
#------------------------------------------------------------------------------

def decode_image(data):
    """
    function: decode_image

    arguments:
     data: PNG or JPEG bytes

    return:
     an Image

    description:
     alpha is dropped and grayscale is expanded to RGB. truncated or
     unrecognized data raises ImageFormatError.
    """
    try:
        with PILImage.open(io.BytesIO(data)) as img:
            img.load()
            rgb = img.convert(MODE_RGB)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise ImageFormatError("cannot decode image (%s)" % e) from e
    return Image(np.asarray(rgb))
#
# end of function

def load_image(path):
    """
    function: load_image

    arguments:
     path: a PNG or JPEG file

    return:
     an Image

    description:
     a missing file raises FileNotFoundError; bad contents raise
     ImageFormatError.
    """

    # display informational message
    #
    if dbgl == ndt.FULL:
        logger.debug("loading image ({})", path)

    if not os.path.isfile(path):
        raise FileNotFoundError("image not found (%s)" % path)
    with open(path, "rb") as fp:
        data = fp.read()
    try:
        return decode_image(data)
    except ImageFormatError as e:
        raise ImageFormatError("%s: %s" % (path, e)) from e
#
# end of function

def resolve_image(ref):
    """loads an image_ref: a file path or encoded bytes"""
    if isinstance(ref, (bytes, bytearray)):
        return decode_image(bytes(ref))
    return load_image(ref)
#
# end of function

def encode_canonical(image):
    """
    function: encode_canonical

    arguments:
     image: an Image

    return:
     PNG bytes written with fixed settings and no metadata
    """
    buf = io.BytesIO()
    PILImage.fromarray(np.ascontiguousarray(image.pixels), MODE_RGB).save(
        buf, format=PNG_FORMAT, optimize=False,
        compress_level=PNG_COMPRESS_LEVEL)
    return buf.getvalue()
#
# end of function

def padded_region(box, pad_frac, width, height):
    """
    function: padded_region

    arguments:
     box: a BoundingBox
     pad_frac: the margin as a fraction of the box size (>= 0)
     width, height: the image size

    return:
     (x0, y0, x1, y1): the box grown by pad_frac of its width on the left
     and right and of its height on the top and bottom, rounded outward
     and clamped to the image

    description:
     the arithmetic is done in decimal so that 10% of 10 is exactly 1.
    """
    pad = Decimal(repr(float(pad_frac)))
    if pad < 0:
        raise InvalidInputError("negative padding (%s)" % pad_frac)
    dx = pad * box.width
    dy = pad * box.height

    def _out(value, rounding):
        return int(value.to_integral_value(rounding=rounding))

    x0 = max(0, _out(box.x_min - dx, ROUND_FLOOR))
    y0 = max(0, _out(box.y_min - dy, ROUND_FLOOR))
    x1 = min(width, _out(box.x_max + dx, ROUND_CEILING))
    y1 = min(height, _out(box.y_max + dy, ROUND_CEILING))
    return x0, y0, x1, y1
#
# end of function

def crop(image, box, pad_frac=DEF_PAD_FRAC):
    """
    function: crop

    arguments:
     image: an Image
     box: a BoundingBox inside the image
     pad_frac: the relative margin (>= 0)

    return:
     the pixel-exact sub-image of the padded, clamped region
    """
    if not box.fits(image.width, image.height):
        raise InvalidInputError("box %s outside %dx%d image" %
                                (box.as_tuple(), image.width, image.height))
    x0, y0, x1, y1 = padded_region(box, pad_frac, image.width, image.height)
    return Image(image.pixels[y0:y1, x0:x1])
#
# end of function

def _clamp_axis(lo, hi, size, raw):
    lo, hi = min(lo, hi), max(lo, hi)

    # a box with no overlap cannot be saved
    #
    if hi < 0 or lo > size or (lo < hi and (hi <= 0 or lo >= size)):
        raise UnsalvageableBoxError("box outside the image (%s)" % (raw,))

    lo, hi = max(0, lo), min(size, hi)

    # widen a degenerate box by one pixel on whichever side has room
    #
    if lo == hi:
        if hi < size:
            hi += 1
        else:
            lo -= 1
    return lo, hi
#
# end of function

def clamp_box(raw, width, height):
    """
    function: clamp_box

    arguments:
     raw: a quadruple (x_min, y_min, x_max, y_max) from a detector
     width, height: the image size

    return:
     a BoundingBox inside the image

    description:
     fractional coordinates are rounded outward and swapped corners are
     reordered. a box with no overlap raises UnsalvageableBoxError; a
     non-finite coordinate raises InvalidInputError.
    """
    if width < 1 or height < 1:
        raise InvalidInputError("empty image (%dx%d)" % (width, height))
    if len(raw) != 4:
        raise InvalidInputError("a box needs 4 coordinates (%s)" % (raw,))
    coords = [float(v) for v in raw]
    if not all(math.isfinite(v) for v in coords):
        raise InvalidInputError("non-finite box coordinate (%s)" % (raw,))
    x0, y0 = (math.floor(v) for v in coords[:2])
    x1, y1 = (math.ceil(v) for v in coords[2:])
    x0, x1 = _clamp_axis(x0, x1, width, raw)
    y0, y1 = _clamp_axis(y0, y1, height, raw)
    return mvt.BoundingBox(x0, y0, x1, y1)
#
# end of function

#
# end of file
