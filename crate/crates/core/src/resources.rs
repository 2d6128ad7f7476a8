//! MACC, RAM and ROM accounting and the expected system cost of the
//! two-stage pipeline.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph};
use crate::kernels::{conv2d_macc, dsc_macc, eca_macc, lstm_macc, maxpool2d_macc};
use crate::modelio::to_bytes;
use crate::quant::quantize_model;

pub const BYTES_PER_ELEMENT: usize = 8;
pub const KIB: f64 = 1024.0;

/// MACC of node `i` from its input and output shapes.
pub fn layer_macc(graph: &ModelGraph, i: usize) -> u64 {
    let node = &graph.nodes()[i];
    let out = &graph.shapes()[i];
    let input = node.inputs.first().map(|&j| graph.shapes()[j].as_slice()).unwrap_or(&[]);
    let len = |s: &[usize]| s.iter().product::<usize>() as u64;
    match node.kind {
        LayerKind::Conv2d { kernel, cin, cout, .. } => conv2d_macc(kernel, cin, cout, out[0], out[1]),
        LayerKind::Dsc { kernel, cin, cout } => dsc_macc(kernel, cin, cout, out[0], out[1]),
        LayerKind::BatchNorm { .. } => 2 * len(out),
        LayerKind::MaxPool2d { pool } => maxpool2d_macc(out[0], out[1], out[2], pool),
        LayerKind::FramePool | LayerKind::GlobalAvgPool => len(input),
        LayerKind::Lstm { input: f, hidden } => lstm_macc(input[0], f, hidden),
        LayerKind::Eca { kernel } => eca_macc(kernel, out[0]),
        LayerKind::Dense { inputs, outputs } => (inputs * outputs) as u64,
        LayerKind::Input { .. }
        | LayerKind::Relu
        | LayerKind::Concat
        | LayerKind::Reshape { .. }
        | LayerKind::Softmax => 0,
    }
}

pub fn macc_of(graph: &ModelGraph) -> u64 {
    (0..graph.nodes().len()).map(|i| layer_macc(graph, i)).sum()
}

/// Sum of [`layer_macc`] over the named layers.
pub fn stage_macc(graph: &ModelGraph, layers: &[&str]) -> Result<u64> {
    layers
        .iter()
        .map(|name| {
            graph
                .node_index(name)
                .map(|i| layer_macc(graph, i))
                .ok_or_else(|| Error::InvalidArgument(format!("no layer `{name}`")))
        })
        .sum()
}

/// Working buffer a layer needs beyond its input and output, in elements.
fn scratch_elements(graph: &ModelGraph, i: usize) -> usize {
    let node = &graph.nodes()[i];
    match node.kind {
        // gate pre-activations (4H) plus cell and hidden state
        LayerKind::Lstm { hidden, .. } => 6 * hidden,
        // depthwise output feeding the pointwise step
        LayerKind::Dsc { cin, .. } => {
            let s = &graph.shapes()[node.inputs[0]];
            s[0] * s[1] * cin
        }
        // pooled descriptor and attention weights
        LayerKind::Eca { .. } => 2 * graph.shapes()[i][0],
        _ => 0,
    }
}

/// Peak live activation bytes over the graph's execution order. An
/// activation is live from the step producing it to its last consumer (the
/// final output stays live to the end); each step also holds its scratch.
pub fn ram_bytes(graph: &ModelGraph) -> usize {
    let n = graph.nodes().len();
    let mut last_use: Vec<usize> = (0..n).collect();
    for (i, node) in graph.nodes().iter().enumerate() {
        for &j in &node.inputs {
            last_use[j] = last_use[j].max(i);
        }
    }
    last_use[n - 1] = n - 1;
    let size = |j: usize| graph.shapes()[j].iter().product::<usize>();
    (0..n)
        .map(|step| {
            let live: usize = (0..=step).filter(|&j| last_use[j] >= step).map(size).sum();
            (live + scratch_elements(graph, step)) * BYTES_PER_ELEMENT
        })
        .max()
        .unwrap_or(0)
}

pub fn ram_of(graph: &ModelGraph) -> f64 {
    ram_bytes(graph) as f64 / KIB
}

/// Serialized size of the graph as a standalone file (aliased parameters
/// included), with weights in int8 when `quantized`.
pub fn rom_bytes(graph: &ModelGraph, quantized: bool) -> Result<usize> {
    let standalone = graph.deep_copy();
    bundle_rom_bytes(&[&standalone], quantized)
}

pub fn rom_of(graph: &ModelGraph, quantized: bool) -> Result<f64> {
    Ok(rom_bytes(graph, quantized)? as f64 / KIB)
}

/// Total serialized size of graphs deployed together; parameters a graph
/// aliases from another are stored once.
pub fn bundle_rom_bytes(graphs: &[&ModelGraph], quantized: bool) -> Result<usize> {
    graphs
        .iter()
        .map(|g| {
            if quantized {
                let q = quantize_model(g)?;
                Ok(to_bytes(&q.graph, Some(&q.tensors))?.len())
            } else {
                Ok(to_bytes(g, None)?.len())
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModuleMetrics {
    pub acc: f64,
    pub ram_kib: f64,
    pub rom_kib: f64,
    pub macc: u64,
}

impl ModuleMetrics {
    pub fn new(acc: f64, ram_kib: f64, rom_kib: f64, macc: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::InvalidArgument(format!("accuracy {acc} outside [0, 1]")));
        }
        if !(ram_kib >= 0.0) || !(rom_kib >= 0.0) {
            return Err(Error::InvalidArgument("memory figures must be non-negative".into()));
        }
        Ok(Self { acc, ram_kib, rom_kib, macc })
    }

    /// Measures RAM, ROM and MACC of `graph` and attaches `acc`.
    pub fn measure(graph: &ModelGraph, acc: f64, quantized: bool) -> Result<Self> {
        Self::new(acc, ram_of(graph), rom_of(graph, quantized)?, macc_of(graph))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemMetrics {
    pub expected_acc: f64,
    pub expected_ram_kib: f64,
    pub total_rom_kib: f64,
    pub total_macc: u64,
    pub p: f64,
}

/// Expected accuracy and RAM when a fraction `p` of first-stage outputs go
/// to the moving-activity network and the rest to the stationary one. ROM
/// and MACC add up over the three modules.
pub fn expected_system_metrics(
    fl: &ModuleMetrics,
    plmn: &ModuleMetrics,
    s: &ModuleMetrics,
    p: f64,
) -> Result<SystemMetrics> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("branch probability {p} outside [0, 1]")));
    }
    Ok(SystemMetrics {
        expected_acc: fl.acc * (p * plmn.acc + (1.0 - p) * s.acc),
        expected_ram_kib: fl.ram_kib + p * plmn.ram_kib + (1.0 - p) * s.ram_kib,
        total_rom_kib: fl.rom_kib + plmn.rom_kib + s.rom_kib,
        total_macc: fl.macc + plmn.macc + s.macc,
        p,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceReport {
    pub modules: Vec<(String, ModuleMetrics)>,
    pub system: SystemMetrics,
}

impl ResourceReport {
    pub fn new(fl: ModuleMetrics, plmn: ModuleMetrics, s: ModuleMetrics, p: f64) -> Result<Self> {
        let system = expected_system_metrics(&fl, &plmn, &s, p)?;
        Ok(Self {
            modules: vec![("First_Layer".into(), fl), ("PLMN".into(), plmn), ("Stationary".into(), s)],
            system,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16}{:>10}{:>12}{:>12}{:>12}", "Network", "Accuracy", "ROM (KiB)", "RAM (KiB)", "MACC");
        for (name, m) in &self.modules {
            let _ = writeln!(
                out,
                "{:<16}{:>9.2}%{:>12.1}{:>12.1}{:>12}",
                name,
                100.0 * m.acc,
                m.rom_kib,
                m.ram_kib,
                m.macc
            );
        }
        let s = &self.system;
        let _ = writeln!(
            out,
            "{:<16}{:>9.2}%{:>12.1}{:>12.2}{:>12}",
            "System",
            100.0 * s.expected_acc,
            s.total_rom_kib,
            s.expected_ram_kib,
            s.total_macc
        );
        let _ = writeln!(out, "branch probability p = {}", s.p);
        out
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "module,acc,ram_kib,rom_kib,macc")?;
        for (name, m) in &self.modules {
            writeln!(w, "{name},{},{},{},{}", m.acc, m.ram_kib, m.rom_kib, m.macc)?;
        }
        let s = &self.system;
        writeln!(w, "system,{},{},{},{}", s.expected_acc, s.expected_ram_kib, s.total_rom_kib, s.total_macc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, InputKind};

    fn table() -> [ModuleMetrics; 3] {
        [
            ModuleMetrics::new(0.9935, 87.2, 210.9, 142_048).unwrap(),
            ModuleMetrics::new(0.9517, 25.9, 890.6, 889_377).unwrap(),
            ModuleMetrics::new(0.9950, 87.2, 210.9, 142_000).unwrap(),
        ]
    }

    #[test]
    fn degenerate_probabilities() {
        let [fl, pl, s] = table();
        let m0 = expected_system_metrics(&fl, &pl, &s, 0.0).unwrap();
        assert!((m0.expected_acc - fl.acc * s.acc).abs() < 1e-15);
        assert!((m0.expected_ram_kib - (fl.ram_kib + s.ram_kib)).abs() < 1e-12);
        let m1 = expected_system_metrics(&fl, &pl, &s, 1.0).unwrap();
        assert!((m1.expected_acc - fl.acc * pl.acc).abs() < 1e-15);
        assert!(expected_system_metrics(&fl, &pl, &s, 1.5).is_err());
        assert!(expected_system_metrics(&fl, &pl, &s, -0.1).is_err());
    }

    #[test]
    fn dense_and_dsc_macc() {
        let mut b = GraphBuilder::new(0);
        let x = b.input("x", InputKind::Vector, &[6]);
        b.layer("d", LayerKind::Dense { inputs: 6, outputs: 3 }, &[x]).unwrap();
        let g = b.finish().unwrap();
        assert_eq!(macc_of(&g), 18);
        assert_eq!(ram_bytes(&g), (6 + 3) * 8);

        let mut b = GraphBuilder::new(0);
        let x = b.input("x", InputKind::Vector, &[1, 1, 8]);
        b.layer("d", LayerKind::Dsc { kernel: 3, cin: 8, cout: 16 }, &[x]).unwrap();
        assert_eq!(macc_of(&b.finish().unwrap()), 200);
    }

    #[test]
    fn chain_liveness_is_max_adjacent_pair() {
        let mut b = GraphBuilder::new(0);
        let x = b.input("x", InputKind::Vector, &[10]);
        let y = b.layer("a", LayerKind::Dense { inputs: 10, outputs: 40 }, &[x]).unwrap();
        let z = b.layer("b", LayerKind::Dense { inputs: 40, outputs: 5 }, &[y]).unwrap();
        b.layer("c", LayerKind::Dense { inputs: 5, outputs: 2 }, &[z]).unwrap();
        assert_eq!(ram_bytes(&b.finish().unwrap()), 50 * 8);
    }

    #[test]
    fn parameter_bytes_in_rom() {
        let mut b = GraphBuilder::new(0);
        let x = b.input("x", InputKind::Vector, &[9]);
        b.layer("d", LayerKind::Dense { inputs: 9, outputs: 10 }, &[x]).unwrap();
        let g = b.finish().unwrap();
        let f = rom_bytes(&g, false).unwrap();
        assert!(f >= 100 * 8 && f < 100 * 8 + 200);
        assert!(rom_bytes(&g, true).unwrap() < f);
    }
}
