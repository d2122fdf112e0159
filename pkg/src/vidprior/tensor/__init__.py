from .core import (
    Graph,
    Record,
    Tensor,
    as_tensor,
    backward,
    current_graph,
    default_dtype,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_debug_checks,
    set_default_dtype,
)
from .module import Module, Parameter
from .ops import (
    GROUP_NORM_EPS,
    ShapeError,
    add,
    attention,
    concat,
    concat_channels,
    conv1d_temporal,
    conv2d,
    embedding_lookup,
    group_norm,
    linear,
    mean,
    mse,
    mul,
    nearest_downsample,
    nearest_upsample,
    permute,
    reshape,
    scalar_mul,
    silu,
    softmax,
    sub,
)
from .ops import sum as sum_all
