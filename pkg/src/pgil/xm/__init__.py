"""Explainable models producing scattering-label maps."""

from .polar import (HALPHA_ZONES, HAlphaResult, WishartCenters, h_alpha_decompose, h_alpha_zone,
                    class_centers, halpha_labels, halpha_wishart, jacobi_eigh, wishart_assign, wishart_classify,
                    wishart_distance)
from .tfa import (TFA_CLASSES, FilterBank, build_filter_bank, subband_energies, subband_pattern,
                  subband_patterns, tfa_label_map, tfa_label_maps)

__all__ = [
    "HALPHA_ZONES", "HAlphaResult", "WishartCenters", "h_alpha_decompose", "h_alpha_zone",
    "class_centers", "halpha_labels", "halpha_wishart", "jacobi_eigh", "wishart_assign",
    "wishart_classify", "wishart_distance",
    "TFA_CLASSES", "FilterBank", "build_filter_bank", "subband_energies", "subband_pattern",
    "subband_patterns", "tfa_label_map", "tfa_label_maps",
]
