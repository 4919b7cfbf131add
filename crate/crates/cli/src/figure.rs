//! Renders a figure from the results store: a grouped bar chart PNG with 95%
//! confidence whiskers and a companion plain-text table. Output depends only
//! on the records, so re-emission is byte identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};

use pvrbench_core::env::EnvId;
use pvrbench_core::evalharness::{aggregate_seeds, AggregateResult};
use pvrbench_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::runner::ResultRecord;

/// Aggregated scores for one experiment config.
#[derive(Debug, Clone)]
pub struct FigureEntry {
    pub experiment_id: String,
    pub env_id: EnvId,
    pub label: String,
    pub aggregate: AggregateResult,
}

/// Collects one aggregate per config; errors if any (config, seed) pair has
/// no record yet.
pub fn collect_entries(
    configs: &[ExperimentConfig],
    records: &[ResultRecord],
) -> Result<Vec<FigureEntry>> {
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for cfg in configs {
        let hash = cfg.hash();
        let mut per_seed = Vec::new();
        for &seed in &cfg.seeds {
            match records.iter().find(|r| r.config_hash == hash && r.seed == seed) {
                Some(r) => per_seed.push(r.report.score),
                None => missing.push(format!("{} seed {seed}", cfg.experiment_id)),
            }
        }
        if missing.is_empty() {
            let label = cfg
                .experiment_id
                .strip_suffix(&format!("-{}", cfg.env_id.as_str()))
                .unwrap_or(&cfg.experiment_id)
                .to_string();
            out.push(FigureEntry {
                experiment_id: cfg.experiment_id.clone(),
                env_id: cfg.env_id,
                label,
                aggregate: aggregate_seeds(&per_seed)?,
            });
        }
    }
    if !missing.is_empty() {
        return Err(Error::InvalidInput(format!(
            "missing results for: {}",
            missing.join(", ")
        )));
    }
    Ok(out)
}

/// Writes `<name>.png` and `<name>.txt` under `out_dir`.
pub fn emit_figure(name: &str, entries: &[FigureEntry], out_dir: &Path) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::InvalidInput("nothing to plot".into()));
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(format!("{name}.txt")), render_table(name, entries))?;
    let img = render_chart(name, entries);
    img.save(out_dir.join(format!("{name}.png")))
        .map_err(|e| Error::InvalidInput(format!("png encode failed: {e}")))?;
    Ok(())
}

pub fn render_table(name: &str, entries: &[FigureEntry]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{name}: mean score with 95% CI half-width over seeds");
    let wid = entries.iter().map(|e| e.label.len()).max().unwrap_or(4).max(10);
    let _ = writeln!(s, "{:<10} {:<wid$} {:>8} {:>8} {:>3}", "env", "experiment", "mean", "ci95", "n");
    for e in entries {
        let ci = match e.aggregate.ci_half_width {
            Some(c) => format!("{c:.2}"),
            None => "-".into(),
        };
        let _ = writeln!(
            s,
            "{:<10} {:<wid$} {:>8.2} {:>8} {:>3}",
            e.env_id.as_str(),
            e.label,
            e.aggregate.mean,
            ci,
            e.aggregate.n_seeds
        );
    }
    s
}

const BAR_W: u32 = 26;
const BAR_GAP: u32 = 8;
const GROUP_GAP: u32 = 46;
const MARGIN_L: u32 = 44;
const MARGIN_R: u32 = 16;
const MARGIN_T: u32 = 28;
const PLOT_H: u32 = 220;
const MARGIN_B: u32 = 90;

const PALETTE: [[u8; 3]; 8] = [
    [66, 133, 244],
    [219, 68, 55],
    [244, 180, 0],
    [15, 157, 88],
    [171, 71, 188],
    [0, 172, 193],
    [255, 112, 67],
    [120, 144, 156],
];

fn render_chart(name: &str, entries: &[FigureEntry]) -> RgbImage {
    // group entries by environment, preserving insertion order per env
    let mut groups: BTreeMap<&str, Vec<&FigureEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry(e.env_id.as_str()).or_default().push(e);
    }
    let group_widths: Vec<u32> = groups
        .values()
        .map(|v| v.len() as u32 * (BAR_W + BAR_GAP) - BAR_GAP)
        .collect();
    let plot_w: u32 = group_widths.iter().sum::<u32>()
        + GROUP_GAP * (groups.len() as u32 - 1).max(0);
    let width = MARGIN_L + plot_w + MARGIN_R;
    let height = MARGIN_T + PLOT_H + MARGIN_B;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));

    let y_of = |score: f64| -> u32 {
        let clamped = score.clamp(0.0, 100.0);
        MARGIN_T + PLOT_H - (clamped / 100.0 * PLOT_H as f64).round() as u32
    };
    let axis = Rgb([40, 40, 40]);
    let grid = Rgb([225, 225, 225]);
    // horizontal grid lines every 20 points, with axis tick labels
    for v in (0..=100).step_by(20) {
        let y = y_of(v as f64);
        for x in MARGIN_L..width - MARGIN_R {
            img.put_pixel(x, y, grid);
        }
        draw_text(&mut img, 4, y.saturating_sub(3), &format!("{v}"), axis);
    }
    // axes
    for y in MARGIN_T..=MARGIN_T + PLOT_H {
        img.put_pixel(MARGIN_L, y, axis);
    }
    for x in MARGIN_L..width - MARGIN_R {
        img.put_pixel(x, MARGIN_T + PLOT_H, axis);
    }
    draw_text(&mut img, MARGIN_L, 8, name, axis);

    let mut x = MARGIN_L + 1;
    let mut bar_index = 0usize;
    for (env, group) in &groups {
        let group_x0 = x;
        for e in group {
            let color = PALETTE[bar_index % PALETTE.len()];
            let top = y_of(e.aggregate.mean);
            for bx in x..x + BAR_W {
                for by in top..MARGIN_T + PLOT_H {
                    img.put_pixel(bx, by, Rgb(color));
                }
            }
            if let Some(ci) = e.aggregate.ci_half_width {
                let cx = x + BAR_W / 2;
                let hi = y_of(e.aggregate.mean + ci);
                let lo = y_of(e.aggregate.mean - ci);
                for by in hi..=lo {
                    img.put_pixel(cx, by, axis);
                }
                for bx in cx.saturating_sub(3)..=cx + 3 {
                    img.put_pixel(bx, hi, axis);
                    img.put_pixel(bx, lo, axis);
                }
            }
            draw_text(
                &mut img,
                x,
                top.saturating_sub(10).max(MARGIN_T.saturating_sub(12)),
                &format!("{:.0}", e.aggregate.mean),
                axis,
            );
            // vertical-ish label: one line below the axis per bar
            let label_y = MARGIN_T + PLOT_H + 6 + (bar_index as u32 % 7) * 10;
            draw_text(&mut img, x, label_y, &e.label, Rgb(color));
            x += BAR_W + BAR_GAP;
            bar_index += 1;
        }
        x -= BAR_GAP;
        draw_text(&mut img, group_x0, MARGIN_T + PLOT_H + 78, env, axis);
        x += GROUP_GAP;
    }
    img
}

/// 5x7 bitmap glyphs; rows are 5-bit masks, most significant bit leftmost.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        '%' => [0x19, 0x1A, 0x02, 0x04, 0x08, 0x0B, 0x13],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        ' ' => [0; 7],
        _ => [0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F],
    }
}

fn draw_text(img: &mut RgbImage, x0: u32, y0: u32, text: &str, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    let mut x = x0;
    for c in text.chars() {
        let g = glyph(c);
        for (dy, row) in g.iter().enumerate() {
            for dx in 0..5u32 {
                if row & (0x10 >> dx) != 0 {
                    let px = x + dx;
                    let py = y0 + dy as u32;
                    if px < w && py < h {
                        img.put_pixel(px, py, color);
                    }
                }
            }
        }
        x += 6;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(env: EnvId, label: &str, scores: &[f64]) -> FigureEntry {
        FigureEntry {
            experiment_id: format!("{label}-{}", env.as_str()),
            env_id: env,
            label: label.into(),
            aggregate: aggregate_seeds(scores).unwrap(),
        }
    }

    #[test]
    fn emission_is_byte_identical() {
        let entries = vec![
            entry(EnvId::Gridnav, "moco", &[88.0, 92.0, 90.0]),
            entry(EnvId::Gridnav, "random", &[60.0, 55.0, 65.0]),
            entry(EnvId::Armreach, "moco", &[70.0, 75.0, 72.0]),
        ];
        let tmp = tempfile::tempdir().unwrap();
        emit_figure("fig", &entries, tmp.path()).unwrap();
        let png1 = std::fs::read(tmp.path().join("fig.png")).unwrap();
        let txt1 = std::fs::read(tmp.path().join("fig.txt")).unwrap();
        emit_figure("fig", &entries, tmp.path()).unwrap();
        assert_eq!(png1, std::fs::read(tmp.path().join("fig.png")).unwrap());
        assert_eq!(txt1, std::fs::read(tmp.path().join("fig.txt")).unwrap());
        assert!(png1.starts_with(&[0x89, b'P', b'N', b'G']));
    }

    #[test]
    fn table_lists_every_entry() {
        let entries = vec![
            entry(EnvId::Gridnav, "ground_truth", &[95.0, 97.0]),
            entry(EnvId::Armreach, "ground_truth", &[80.0, 82.0]),
        ];
        let table = render_table("fig3", &entries);
        assert!(table.contains("gridnav"));
        assert!(table.contains("armreach"));
        assert!(table.contains("96.00"));
        assert!(table.contains("81.00"));
    }

    #[test]
    fn missing_records_error_names_the_pair() {
        let configs = crate::config::standard_suite("fig3").unwrap();
        let err = collect_entries(&configs[..1], &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&configs[0].experiment_id));
        assert!(msg.contains("101"));
    }

    #[test]
    fn single_seed_has_no_whisker_but_renders() {
        let entries = vec![entry(EnvId::Gridnav, "gt", &[50.0])];
        assert!(entries[0].aggregate.ci_half_width.is_none());
        let img = render_chart("x", &entries);
        assert!(img.width() > 0 && img.height() > 0);
    }
}
