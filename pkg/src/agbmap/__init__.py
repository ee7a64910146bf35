"""agbmap: sparse lidar footprints + SAR/optical rasters -> biomass maps.

Pipeline stages: footprint quality screening, backscatter-consistency
filtering, local height-to-biomass calibration, a 24-layer co-registered
feature stack, two native tree-ensemble learners, and a k-fold ensemble
producing mean and uncertainty maps. See the README for a tour and the
``agbmap`` CLI for the batch entry points.
"""

__version__ = "0.1.0"
