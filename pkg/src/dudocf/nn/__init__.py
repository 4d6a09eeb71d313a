from .blocks import CDF, SBE, AttenRDB, AttenRDBParams, SelfAttention
from .module import BatchNorm3d, Conv3d, ConvTranspose3d, Linear, Module, Parameter, kaiming
