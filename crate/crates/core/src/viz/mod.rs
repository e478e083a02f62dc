//! Figure artifacts: transition heatmaps, Sankey flows, t-SNE projections
//! and the position curve. Everything is written as CSV, JSON or SVG text.

mod curve;
mod heatmap;
mod sankey;
pub mod svg;
mod tsne;

pub use curve::{curve_emit, curve_svg, curve_table_text, parse_curve_table, polyline_points, CurveFiles};
pub use heatmap::{cell_fills, heatmap_emit, heatmap_grid_text, heatmap_svg, parse_grid, HeatmapFiles};
pub use sankey::{build_sankey, sankey_emit, sankey_svg, SankeyFiles, SankeyLink, SankeyNode, SankeySpec};
pub use tsne::{
    conditional_affinities, initial_layout, joint_affinities, kl_divergence, projection_emit, projection_svg, row_perplexity,
    squared_distances, tsne_project, Projection2D, TsneFiles, TsneParams,
};
