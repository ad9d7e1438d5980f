"""streamstyle: illustrative streamline rendering.

Traces streamlines through regular-grid 3D vector fields and renders them
as view-oriented ribbons split into styleable bands: attribute-mapped
colors and widths, repeating shape patterns, directional color patterns,
depth-dependent halos, and transfer functions that switch whole styles
along a line.
"""

from .field import (
    FieldSample,
    SFGError,
    VectorFieldGrid,
    gen_analytic_field,
    load_grid,
    normalize_attribute,
    sample,
    save_grid,
)
from .tracer import (
    SeedSpec,
    Streamline,
    TraceParams,
    TraceResult,
    seed_points,
    trace,
    trace_all,
)
from .style import (
    COLORMAPS,
    SHAPE_PRESETS,
    BandSpec,
    BandWidth,
    ColorMap,
    ColormapColor,
    ConstantColor,
    DirectionalColorPattern,
    LineStyle,
    LineStyleTransferFunction,
    PatternColor,
    ShapeMappingFunction,
    ShapePattern,
    TransferEntry,
    eval_band_width,
    eval_directional_pattern,
    eval_shape_attribute,
    resolve_color,
    select_style,
    style_total_width,
)
from .geometry import Camera, RibbonStrip, attribute_ranges, build_strips
from .styleprog import StyleProgram, compile_program
from .raster import (
    FragmentContext,
    Frame,
    rasterize,
    save_image,
    shade_fragment,
)

__version__ = "0.1.0"
