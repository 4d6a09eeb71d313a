from .polar import N_SEGMENTS, PolarMap, polar_map_17, segment_of
from .stats import ape, correlation_stats, paired_t, paired_ttest
from .voxel import MetricError, nmse, psnr, ssim
