"""v2vprop: V2V propagation model extraction from packet RSSI traces.

Pipeline: ingest per-packet RSSI traces (``trace``), fit the composite
median path-loss model with censoring-aware mode fitting (``pathloss``),
separate multipath from shadowing on clean signal runs (``fading``), and
replay the fitted model in a Monte-Carlo link simulator to compare PER and
inter-packet-gap statistics (``simulate``).
"""

from .fading import (
    FadeSignature,
    FadingModel,
    NormalizedBlock,
    extract_signatures,
    fit_fading,
    normalize_block,
    select_window,
    split_sigma,
)
from .pathloss import (
    FitConfig,
    FitError,
    LinearSegParams,
    MedianPoint,
    PathLossModel,
    TwoRayParams,
    dip_distances,
    fit_linear_segment,
    fit_model,
    fit_two_ray,
    load_model,
    mode_fit_medians,
    save_model,
    search_breakpoint,
    static_link_modes,
    two_ray_predict,
)
from .simulate import (
    BinnedMetric,
    LinkFadingState,
    MobilityTrace,
    PacketLog,
    PhyConfig,
    abs_error,
    initial_fading_state,
    ipg95_by_bin,
    log_to_dataset,
    per_by_bin,
    sample_link_gain,
    simulate_run,
)
from .stats import (
    DistributionFit,
    Histogram,
    autocorr,
    fit_nakagami_power,
    histogram_mode,
    ks_test,
    lsq_fit,
    qq_gaussian,
)
from .trace import (
    PathLossSample,
    RssiRecord,
    StreamError,
    TraceDataset,
    TraceFormatError,
    loss_census,
    parse_trace,
    to_pathloss,
)

__version__ = "0.1.0"
