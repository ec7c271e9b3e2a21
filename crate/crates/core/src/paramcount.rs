//! Static shape and parameter arithmetic over architecture graphs, with
//! Table-style text reports, CSV rows, and comparison against golden tables.

use std::fmt::Write as _;

use crate::arch::spec::{ArchitectureSpec, FeatureShape, NodeKind};
use crate::error::{Error, Result};

/// Output extent `M = (N + 2P − F)/S + 1` of a convolution along one axis.
pub fn output_dim(n: usize, f: usize, s: usize, p: usize) -> Result<usize> {
    if s == 0 {
        return Err(Error::InvalidConfig("stride must be positive".into()));
    }
    let padded = n + 2 * p;
    if f > padded {
        return Err(Error::KernelTooLarge { kernel: f, padded });
    }
    let span = padded - f;
    if span % s != 0 {
        return Err(Error::Indivisible { span, stride: s });
    }
    Ok(span / s + 1)
}

/// `(F·F·FM_prev)·FM_l`: weights of a bias-free convolution.
pub fn params_nobias(f: usize, fm_prev: usize, fm: usize) -> usize {
    f * f * fm_prev * fm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasRule {
    /// One bias per output map: `(F·F·FM_prev + 1)·FM_l`.
    Standard,
    /// `F·(F + 1)·FM_prev·FM_l`, the alternative closed form some references print.
    FTimesFPlusOne,
}

pub fn params_bias(f: usize, fm_prev: usize, fm: usize, rule: BiasRule) -> usize {
    match rule {
        BiasRule::Standard => (f * f * fm_prev + 1) * fm,
        BiasRule::FTimesFPlusOne => f * (f + 1) * fm_prev * fm,
    }
}

/// `M·M·(F·F + 1)·FM_l`: links from each output position to its kernel taps and bias.
pub fn connections(m: usize, f: usize, fm: usize) -> usize {
    m * m * (f * f + 1) * fm
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerReport {
    pub id: String,
    pub kind: String,
    /// Output feature maps (channels).
    pub maps: usize,
    /// Output spatial extent (height, width).
    pub size: (usize, usize),
    /// Square window extent, for convolution and pooling nodes.
    pub kernel: Option<(usize, usize)>,
    pub params: usize,
    pub connections: usize,
}

impl LayerReport {
    fn size_str(&self) -> String {
        format!("{}x{}", self.size.0, self.size.1)
    }

    fn kernel_str(&self) -> String {
        self.kernel.map_or("-".to_string(), |(a, b)| format!("{a}x{b}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub name: String,
    pub rows: Vec<LayerReport>,
    pub total_params: usize,
}

pub const CSV_HEADER: &str = "id,kind,maps,size,kernel,params,connections";

impl Summary {
    /// Total in millions, rounded to two decimals.
    pub fn millions(&self) -> String {
        format!("{:.2}", self.total_params as f64 / 1e6)
    }

    pub fn row(&self, id: &str) -> Option<&LayerReport> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.id,
                r.kind,
                r.maps,
                r.size_str(),
                r.kernel_str(),
                r.params,
                r.connections
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let headers = ["layer", "operation", "maps", "size", "kernel", "params", "connections"];
        let cells: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.id.clone(),
                    r.kind.clone(),
                    r.maps.to_string(),
                    r.size_str(),
                    r.kernel_str(),
                    r.params.to_string(),
                    r.connections.to_string(),
                ]
            })
            .collect();
        let mut widths = headers.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "architecture: {}", self.name);
        let line = |out: &mut String, row: &[String]| {
            let mut parts = Vec::with_capacity(row.len());
            for (i, c) in row.iter().enumerate() {
                // text columns left-aligned, numbers right-aligned
                if i < 2 {
                    parts.push(format!("{:<w$}", c, w = widths[i]));
                } else {
                    parts.push(format!("{:>w$}", c, w = widths[i]));
                }
            }
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &headers.map(String::from));
        let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        let _ = writeln!(out, "{}", "-".repeat(rule));
        for row in &cells {
            line(&mut out, row);
        }
        let _ = writeln!(out, "{}", "-".repeat(rule));
        let _ = writeln!(out, "total parameters: {} (~{} M)", self.total_params, self.millions());
        let _ = writeln!(
            out,
            "note: biased counts use (F*F*FM_prev + 1)*FM; the closed form F*(F+1)*FM_prev*FM \
             and ((F*F + 1)*FM_prev)*FM disagree with it (F=5, 3->6 maps: 456 vs 540 vs 468)"
        );
        out
    }
}

fn report_row(id: &str, kind: &NodeKind, input: FeatureShape, out: FeatureShape) -> LayerReport {
    let (kernel, connections) = match *kind {
        NodeKind::Conv { kernel, bias, .. } => {
            let conns = if bias && out.h == out.w {
                connections(out.h, kernel, out.c)
            } else {
                out.h * out.w * (kernel * kernel + bias as usize) * out.c
            };
            (Some((kernel, kernel)), conns)
        }
        NodeKind::MaxPool | NodeKind::AvgPool => (Some((2, 2)), out.len() * 4),
        NodeKind::Gap => (Some((input.h, input.w)), input.len()),
        NodeKind::Dense { out: k, bias } => (None, k * (input.len() + bias as usize)),
        _ => (None, 0),
    };
    LayerReport {
        id: id.to_string(),
        kind: kind.name().to_string(),
        maps: out.c,
        size: (out.h, out.w),
        kernel,
        params: kind.param_count(input),
        connections,
    }
}

/// One report row per node, in order. Shape failures carry the node id.
pub fn summarize(spec: &ArchitectureSpec) -> Result<Summary> {
    let shapes = spec.infer_shapes()?;
    let slots = spec.resolve()?;
    let input: FeatureShape = spec.input_shape.into();
    let rows: Vec<LayerReport> = spec
        .nodes
        .iter()
        .zip(&slots)
        .zip(&shapes)
        .map(|((node, ins), &out)| {
            let x = if ins[0] == 0 { input } else { shapes[ins[0] - 1] };
            report_row(&node.id, &node.kind, x, out)
        })
        .collect();
    let total_params = rows.iter().map(|r| r.params).sum();
    Ok(Summary {
        name: spec.name.clone(),
        rows,
        total_params,
    })
}

/// Signed relative deviation of `total` from `target`.
pub fn budget_deviation(total: usize, target: f64) -> f64 {
    (total as f64 - target) / target
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenRow {
    pub id: String,
    pub kind: String,
    pub maps: String,
    pub size: String,
    pub kernel: String,
    pub params: String,
    pub connections: String,
    pub waiver: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDiff {
    pub id: String,
    pub field: &'static str,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldenComparison {
    pub checked: usize,
    pub mismatches: Vec<FieldDiff>,
    /// Mismatches on rows the golden table marks as known deviations.
    pub waived: Vec<(FieldDiff, String)>,
}

impl GoldenComparison {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Parses a golden table: the report CSV, optionally with a trailing
/// `waiver` column. Empty cells are not compared.
pub fn parse_golden(text: &str) -> Result<Vec<GoldenRow>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 0,
        msg: "empty golden table".into(),
    })?;
    let header = header.trim();
    let has_waiver = match header {
        h if h == CSV_HEADER => false,
        h if h == format!("{CSV_HEADER},waiver") => true,
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected golden header `{other}`"),
            })
        }
    };
    let expected_cols = if has_waiver { 8 } else { 7 };
    let mut rows = Vec::new();
    for (i, line) in lines {
        let cols: Vec<&str> = line.trim().splitn(expected_cols, ',').collect();
        if cols.len() < 7 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {expected_cols} columns"),
            });
        }
        rows.push(GoldenRow {
            id: cols[0].to_string(),
            kind: cols[1].to_string(),
            maps: cols[2].to_string(),
            size: cols[3].to_string(),
            kernel: cols[4].to_string(),
            params: cols[5].to_string(),
            connections: cols[6].to_string(),
            waiver: cols
                .get(7)
                .map(|w| w.trim().to_string())
                .filter(|w| !w.is_empty()),
        });
    }
    Ok(rows)
}

pub fn compare_golden(summary: &Summary, golden: &[GoldenRow]) -> GoldenComparison {
    let mut cmp = GoldenComparison::default();
    for g in golden {
        cmp.checked += 1;
        let Some(r) = summary.row(&g.id) else {
            cmp.mismatches.push(FieldDiff {
                id: g.id.clone(),
                field: "row",
                expected: "present".into(),
                actual: "missing".into(),
            });
            continue;
        };
        let fields: [(&'static str, &str, String); 6] = [
            ("kind", &g.kind, r.kind.clone()),
            ("maps", &g.maps, r.maps.to_string()),
            ("size", &g.size, r.size_str()),
            ("kernel", &g.kernel, r.kernel_str()),
            ("params", &g.params, r.params.to_string()),
            ("connections", &g.connections, r.connections.to_string()),
        ];
        for (field, expected, actual) in fields {
            if expected.is_empty() || expected == actual {
                continue;
            }
            let diff = FieldDiff {
                id: g.id.clone(),
                field,
                expected: expected.to_string(),
                actual,
            };
            match &g.waiver {
                Some(w) => cmp.waived.push((diff, w.clone())),
                None => cmp.mismatches.push(diff),
            }
        }
    }
    cmp
}
