//! Logit-space diagnostics: L2-norm histograms of ID vs OOD logits, a
//! two-component PCA projection of pooled logits, and per-sample logit
//! responses for ID, OOD, input-mixed, and logit-mixed samples.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mixing::mix_logits;
use crate::model::MlpParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramData {
    pub bin_edges: Vec<f64>,
    pub id_counts: Vec<usize>,
    pub ood_counts: Vec<usize>,
}

fn row_norms(logits: &[Vec<f64>]) -> Vec<f64> {
    logits
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Shared uniform bins over [0, max norm of either set]; the final bin is
/// right-closed so the maximum lands inside.
pub fn logit_norm_histogram(
    id_logits: &[Vec<f64>],
    ood_logits: &[Vec<f64>],
    num_bins: usize,
) -> Result<HistogramData> {
    if num_bins == 0 {
        return Err(Error::invalid("num_bins must be >= 1"));
    }
    if id_logits.is_empty() || ood_logits.is_empty() {
        return Err(Error::invalid("histogram requires non-empty ID and OOD sets"));
    }
    let id_norms = row_norms(id_logits);
    let ood_norms = row_norms(ood_logits);
    let max = id_norms
        .iter()
        .chain(&ood_norms)
        .cloned()
        .fold(0.0_f64, f64::max);
    let width = max / num_bins as f64;
    let bin_edges: Vec<f64> = (0..=num_bins).map(|i| i as f64 * width).collect();
    let bin_of = |v: f64| -> usize {
        if width == 0.0 {
            0
        } else {
            ((v / width) as usize).min(num_bins - 1)
        }
    };
    let mut id_counts = vec![0usize; num_bins];
    let mut ood_counts = vec![0usize; num_bins];
    for v in id_norms {
        id_counts[bin_of(v)] += 1;
    }
    for v in ood_norms {
        ood_counts[bin_of(v)] += 1;
    }
    Ok(HistogramData {
        bin_edges,
        id_counts,
        ood_counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// Two orthonormal direction vectors of length K.
    pub components: [Vec<f64>; 2],
    /// Descending; the second is 0 when the pooled logits are rank deficient.
    pub explained_variance: [f64; 2],
    /// (pc1, pc2, is_id) per input sample, ID rows first.
    pub projected_points: Vec<(f64, f64, bool)>,
}

/// Fit on the pooled ID + OOD logits: center by the pooled mean, take the
/// top-2 right singular vectors. Sign convention: the largest-magnitude
/// entry of each component is positive.
pub fn pca_project(id_logits: &[Vec<f64>], ood_logits: &[Vec<f64>]) -> Result<PcaProjection> {
    let n = id_logits.len() + ood_logits.len();
    let k = id_logits
        .first()
        .or(ood_logits.first())
        .map(|r| r.len())
        .unwrap_or(0);
    if n < 3 || k < 2 {
        return Err(Error::invalid(format!(
            "pca needs >= 3 samples and >= 2 classes, got n={n}, k={k}"
        )));
    }
    let pooled: Vec<&Vec<f64>> = id_logits.iter().chain(ood_logits).collect();
    let mut mean = vec![0.0; k];
    for row in &pooled {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, k, |i, j| pooled[i][j] - mean[j]);
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("v_t requested");

    let mut components: [Vec<f64>; 2] = [vec![0.0; k], vec![0.0; k]];
    let mut explained = [0.0; 2];
    for c in 0..2 {
        let mut comp: Vec<f64> = (0..k).map(|j| v_t[(c, j)]).collect();
        // flip so the largest-magnitude entry is positive
        let lead = comp
            .iter()
            .cloned()
            .fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            for v in &mut comp {
                *v = -*v;
            }
        }
        let sigma = svd.singular_values.get(c).copied().unwrap_or(0.0);
        let var = sigma * sigma / (n as f64 - 1.0);
        // variance at numerical-noise level flags rank deficiency
        explained[c] = if var < 1e-18 { 0.0 } else { var };
        components[c] = comp;
    }

    let project = |row: &[f64], comp: &[f64]| -> f64 {
        row.iter()
            .zip(&mean)
            .zip(comp)
            .map(|((x, m), c)| (x - m) * c)
            .sum()
    };
    let projected_points = id_logits
        .iter()
        .map(|r| (r, true))
        .chain(ood_logits.iter().map(|r| (r, false)))
        .map(|(r, is_id)| {
            (
                project(r, &components[0]),
                project(r, &components[1]),
                is_id,
            )
        })
        .collect();
    Ok(PcaProjection {
        components,
        explained_variance: explained,
        projected_points,
    })
}

/// The four logit vectors behind the per-sample response plots.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitResponses {
    pub f_in: Vec<f64>,
    pub f_out: Vec<f64>,
    pub f_of_mixed_input: Vec<f64>,
    pub mixed_logits: Vec<f64>,
}

pub fn sample_logit_responses(
    params: &MlpParams,
    x_in: &[f64],
    x_out: &[f64],
    lambda: f64,
) -> Result<LogitResponses> {
    let f_in = params.forward_one(x_in)?;
    let f_out = params.forward_one(x_out)?;
    let mixed_input: Vec<f64> = x_in
        .iter()
        .zip(x_out)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    let f_of_mixed_input = params.forward_one(&mixed_input)?;
    let mixed_logits = mix_logits(
        &Tensor::vector(f_in.clone()),
        &Tensor::vector(f_out.clone()),
        lambda,
    )?
    .values()
    .to_vec();
    Ok(LogitResponses {
        f_in,
        f_out,
        f_of_mixed_input,
        mixed_logits,
    })
}

// ---- CSV and SVG emission ----

pub fn hist_to_csv(h: &HistogramData) -> String {
    let mut out = String::from("bin_lo,bin_hi,id_count,ood_count\n");
    for i in 0..h.id_counts.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            h.bin_edges[i],
            h.bin_edges[i + 1],
            h.id_counts[i],
            h.ood_counts[i]
        ));
    }
    out
}

pub fn pca_to_csv(p: &PcaProjection) -> String {
    let mut out = String::from("tag,pc1,pc2\n");
    for &(pc1, pc2, is_id) in &p.projected_points {
        out.push_str(&format!("{},{pc1},{pc2}\n", if is_id { "id" } else { "ood" }));
    }
    out
}

pub fn responses_to_csv(r: &LogitResponses) -> String {
    let mut out = String::from("role,class_index,logit_value\n");
    let roles: [(&str, &[f64]); 4] = [
        ("id", &r.f_in),
        ("ood", &r.f_out),
        ("input_mixed", &r.f_of_mixed_input),
        ("logit_mixed", &r.mixed_logits),
    ];
    for (role, values) in roles {
        for (i, v) in values.iter().enumerate() {
            out.push_str(&format!("{role},{i},{v}\n"));
        }
    }
    out
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 40.0;

fn svg_open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

pub fn hist_to_svg(h: &HistogramData) -> String {
    let n = h.id_counts.len();
    let max_count = h
        .id_counts
        .iter()
        .chain(&h.ood_counts)
        .cloned()
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let plot_w = SVG_W - 2.0 * MARGIN;
    let plot_h = SVG_H - 2.0 * MARGIN;
    let bw = plot_w / n as f64;
    let mut out = svg_open();
    for i in 0..n {
        let x = MARGIN + i as f64 * bw;
        let hi = h.id_counts[i] as f64 / max_count * plot_h;
        let ho = h.ood_counts[i] as f64 / max_count * plot_h;
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n",
            x, SVG_H - MARGIN - hi, bw * 0.45, hi
        ));
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"indianred\" fill-opacity=\"0.6\"/>\n",
            x + bw * 0.45, SVG_H - MARGIN - ho, bw * 0.45, ho
        ));
    }
    out.push_str("</svg>\n");
    out
}

pub fn pca_to_svg(p: &PcaProjection) -> String {
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y, _) in &p.projected_points {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = (span(lo_x, hi_x), span(lo_y, hi_y));
    let mut out = svg_open();
    for &(x, y, is_id) in &p.projected_points {
        let px = MARGIN + (x - lo_x) / sx * (SVG_W - 2.0 * MARGIN);
        let py = SVG_H - MARGIN - (y - lo_y) / sy * (SVG_H - 2.0 * MARGIN);
        let color = if is_id { "steelblue" } else { "indianred" };
        out.push_str(&format!(
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.5\" fill=\"{color}\" fill-opacity=\"0.7\"/>\n"
        ));
    }
    out.push_str("</svg>\n");
    out
}

pub fn responses_to_svg(r: &LogitResponses) -> String {
    let roles: [(&str, &[f64]); 4] = [
        ("steelblue", &r.f_in),
        ("indianred", &r.f_out),
        ("seagreen", &r.f_of_mixed_input),
        ("goldenrod", &r.mixed_logits),
    ];
    let max_abs = roles
        .iter()
        .flat_map(|(_, v)| v.iter())
        .map(|v| v.abs())
        .fold(1e-9_f64, f64::max);
    let k = r.f_in.len();
    let plot_w = SVG_W - 2.0 * MARGIN;
    let half_h = (SVG_H - 2.0 * MARGIN) / 2.0;
    let mid_y = MARGIN + half_h;
    let group_w = plot_w / k as f64;
    let bar_w = group_w / 5.0;
    let mut out = svg_open();
    out.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{mid_y}\" x2=\"{:.2}\" y2=\"{mid_y}\" stroke=\"black\"/>\n",
        SVG_W - MARGIN
    ));
    for (ri, (color, values)) in roles.iter().enumerate() {
        for (ci, &v) in values.iter().enumerate() {
            let h = v / max_abs * half_h;
            let x = MARGIN + ci as f64 * group_w + ri as f64 * bar_w;
            let (y, height) = if h >= 0.0 { (mid_y - h, h) } else { (mid_y, -h) };
            out.push_str(&format!(
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{height:.2}\" fill=\"{color}\"/>\n"
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}
