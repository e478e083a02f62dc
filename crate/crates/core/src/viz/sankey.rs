//! Layered flow diagrams of state sequences.
//!
//! Layer `l` (1-based) holds the state at position `l` of every sequence
//! that long; a link joins `(l, a)` to `(l + 1, b)` with weight equal to the
//! number of sequences making that move.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg::{category, Svg};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyNode {
    pub id: usize,
    /// 1-based position layer.
    pub layer: usize,
    pub cluster: usize,
    pub label: String,
    /// Sequences occupying this cluster at this layer.
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyLink {
    pub source: usize,
    pub target: usize,
    pub weight: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeySpec {
    pub layers: usize,
    pub min_count: u64,
    pub nodes: Vec<SankeyNode>,
    pub links: Vec<SankeyLink>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// `(layer, cluster)`.
type Node = (usize, usize);

/// Builds the flow graph over the first `layers` positions, dropping links
/// with weight below `min_count`. Nodes that end up unlinked are dropped.
pub fn build_sankey<I, S, T>(sequences: I, layers: usize, min_count: u64) -> Result<SankeySpec>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[T]>,
    T: Copy + Into<usize>,
{
    if layers < 2 {
        return Err(Error::Config(format!("sankey needs at least 2 layers, got {layers}")));
    }
    let mut occupancy: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut flows: BTreeMap<(Node, Node), u64> = BTreeMap::new();
    for seq in sequences {
        let seq = seq.as_ref();
        let upto = seq.len().min(layers);
        for (p, &s) in seq[..upto].iter().enumerate() {
            *occupancy.entry((p + 1, s.into())).or_default() += 1;
        }
        for (p, w) in seq[..upto].windows(2).enumerate() {
            let from = (p + 1, w[0].into());
            let to = (p + 2, w[1].into());
            *flows.entry((from, to)).or_default() += 1;
        }
    }
    let kept: Vec<_> = flows.into_iter().filter(|&(_, w)| w >= min_count.max(1)).collect();
    let mut ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for ((a, b), _) in &kept {
        ids.insert(*a, 0);
        ids.insert(*b, 0);
    }
    let mut nodes = Vec::with_capacity(ids.len());
    for (i, (key, id)) in ids.iter_mut().enumerate() {
        *id = i;
        nodes.push(SankeyNode {
            id: i,
            layer: key.0,
            cluster: key.1,
            label: format!("Step {} C{}", key.0, key.1),
            count: occupancy[key],
        });
    }
    let links: Vec<SankeyLink> = kept
        .iter()
        .map(|((a, b), w)| SankeyLink {
            source: ids[a],
            target: ids[b],
            weight: *w,
        })
        .collect();
    let warning = links.is_empty().then(|| {
        tracing::warn!(min_count, layers, "every sankey link was pruned; emitting an empty spec");
        format!("all links pruned (min_count {min_count})")
    });
    Ok(SankeySpec {
        layers,
        min_count,
        nodes,
        links,
        warning,
    })
}

const COL_GAP: f64 = 180.0;
const NODE_W: f64 = 14.0;
const PLOT_H: f64 = 420.0;
const TOP: f64 = 50.0;
const LEFT: f64 = 60.0;
const NODE_GAP: f64 = 12.0;

pub fn sankey_svg(spec: &SankeySpec) -> String {
    let width = LEFT * 2.0 + COL_GAP * (spec.layers.saturating_sub(1)) as f64 + NODE_W + 60.0;
    let mut svg = Svg::new(width, TOP + PLOT_H + 40.0);
    svg.text(width / 2.0, 24.0, "middle", 14.0, "Latent state flow by step");
    if spec.links.is_empty() {
        svg.text(width / 2.0, TOP + PLOT_H / 2.0, "middle", 12.0, "no links above threshold");
        return svg.finish();
    }
    // node size = max(in, out) of kept links
    let mut inflow = vec![0u64; spec.nodes.len()];
    let mut outflow = vec![0u64; spec.nodes.len()];
    for l in &spec.links {
        outflow[l.source] += l.weight;
        inflow[l.target] += l.weight;
    }
    let size: Vec<u64> = inflow.iter().zip(&outflow).map(|(a, b)| *a.max(b)).collect();
    let mut per_layer: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for n in &spec.nodes {
        per_layer.entry(n.layer).or_default().push(n.id);
    }
    let scale = per_layer
        .values()
        .map(|ids| {
            let total: u64 = ids.iter().map(|&i| size[i]).sum();
            let gaps = NODE_GAP * (ids.len().saturating_sub(1)) as f64;
            (PLOT_H - gaps) / total.max(1) as f64
        })
        .fold(f64::INFINITY, f64::min);
    let mut y0 = vec![0.0; spec.nodes.len()];
    for ids in per_layer.values() {
        let mut y = TOP;
        for &i in ids {
            y0[i] = y;
            y += size[i] as f64 * scale + NODE_GAP;
        }
    }
    let x_of = |layer: usize| LEFT + COL_GAP * (layer - 1) as f64;
    let mut out_off = y0.clone();
    let mut in_off = y0.clone();
    for l in &spec.links {
        let h = l.weight as f64 * scale;
        let src = &spec.nodes[l.source];
        let x1 = x_of(src.layer) + NODE_W;
        let x2 = x_of(spec.nodes[l.target].layer);
        let ya = out_off[l.source] + h / 2.0;
        let yb = in_off[l.target] + h / 2.0;
        out_off[l.source] += h;
        in_off[l.target] += h;
        let mx = (x1 + x2) / 2.0;
        svg.raw(&format!(
            r#"<path d="M {x1:.2} {ya:.2} C {mx:.2} {ya:.2}, {mx:.2} {yb:.2}, {x2:.2} {yb:.2}" fill="none" stroke="{}" stroke-opacity="0.45" stroke-width="{:.2}" data-weight="{}"/>"#,
            category(src.cluster),
            h.max(0.5),
            l.weight
        ));
    }
    for n in &spec.nodes {
        let x = x_of(n.layer);
        let h = (size[n.id] as f64 * scale).max(1.0);
        svg.rect(x, y0[n.id], NODE_W, h, category(n.cluster), "");
        svg.text(x + NODE_W + 4.0, y0[n.id] + h / 2.0 + 4.0, "start", 10.0, &format!("C{}", n.cluster));
    }
    for layer in 1..=spec.layers {
        svg.text(x_of(layer) + NODE_W / 2.0, TOP + PLOT_H + 24.0, "middle", 11.0, &format!("Step {layer}"));
    }
    svg.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SankeyFiles {
    pub json: PathBuf,
    pub svg: PathBuf,
}

/// Builds the spec and writes `<base>.json` and `<base>.svg`.
pub fn sankey_emit<I, S, T>(sequences: I, layers: usize, min_count: u64, base: &Path) -> Result<(SankeySpec, SankeyFiles)>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[T]>,
    T: Copy + Into<usize>,
{
    let spec = build_sankey(sequences, layers, min_count)?;
    let json = base.with_extension("json");
    let svg = base.with_extension("svg");
    let text = serde_json::to_string_pretty(&spec).expect("sankey serializes") + "\n";
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    fs::write(&svg, sankey_svg(&spec)).map_err(|e| Error::io(&svg, e))?;
    Ok((spec, SankeyFiles { json, svg }))
}
