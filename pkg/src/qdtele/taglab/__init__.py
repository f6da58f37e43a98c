"""Time-tag I/O, coincidence counting, synthetic streams and peak fitting."""

from .coincidences import ChannelMap, CoincidenceConfig, Histogram, pair_histogram, threefold_coincidences
from .fitting import FitError, estimate_g2, fit_hom, fit_lifetime
from .io import TagFormatError, TagStream, parse_tags, read_tag_file, write_tag_file, write_tags

__all__ = [
    "ChannelMap", "CoincidenceConfig", "FitError", "Histogram", "TagFormatError", "TagStream",
    "estimate_g2", "fit_hom", "fit_lifetime", "pair_histogram", "parse_tags", "read_tag_file",
    "threefold_coincidences", "write_tag_file", "write_tags",
]
